import copy
import os

import pytest

from emsurf.array import HertzianDipole, PlaneWave
from emsurf.config import ConfigError, load_config, parse_config

CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "fixture_2x2.toml")


@pytest.fixture
def data():
    return copy.deepcopy(load_config(CONFIG).source)


def test_fixture_config_parses():
    cfg = load_config(CONFIG)
    assert cfg.counts == (2, 2)
    assert cfg.template_map == ("p54",) * 4
    assert isinstance(cfg.excitation, PlaneWave)
    assert cfg.gmres.tol == 1e-4 and cfg.preconditioner is not None
    assert cfg.output.theta_deg.shape == (181,)
    g = cfg.geometry("p54")
    assert g.width == pytest.approx(13.5e-3)


@pytest.mark.parametrize("section", ["", "cell", "layout", "excitation", "solver", "output",
                                     "templates.p54"])
def test_unknown_keys_are_rejected(data, section):
    table = data
    for part in filter(None, section.split(".")):
        table = table[part]
    table["typo"] = 1
    with pytest.raises(ConfigError, match="typo"):
        parse_config(data)


def test_undefined_template_is_rejected(data):
    data["layout"]["template_map"] = ["p54", "p54", "p54", "p60"]
    with pytest.raises(ConfigError, match="p60"):
        parse_config(data)


def test_template_map_length(data):
    data["layout"]["template_map"] = ["p54"] * 3
    with pytest.raises(ConfigError, match="expected 4"):
        parse_config(data)


@pytest.mark.parametrize("counts", [[0, 2], [2], [2, 2, 1]])
def test_bad_counts(data, counts):
    data["layout"]["counts"] = counts
    with pytest.raises(ConfigError, match="counts"):
        parse_config(data)


def test_template_needs_exactly_one_source(data, tmp_path):
    data["templates"]["p54"]["mesh"] = "cell.msh"
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config(data, str(tmp_path))
    del data["templates"]["p54"]["patch_width"]
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(data, str(tmp_path))


def test_excitations(data):
    data["excitation"] = {"kind": "dipole", "position": [0.0, 0.0, 0.02],
                          "orientation": [0.0, 1.0, 0.0]}
    assert isinstance(parse_config(data).excitation, HertzianDipole)
    data["excitation"] = {"kind": "dipole"}
    with pytest.raises(ConfigError, match="position"):
        parse_config(data)
    data["excitation"] = {"kind": "plane_wave", "direction": [0.0, 0.0, 3.0]}
    with pytest.raises(ConfigError, match="excitation"):
        parse_config(data)
    data["excitation"] = {"kind": "horn"}
    with pytest.raises(ConfigError, match="horn"):
        parse_config(data)


def test_solver_options(data):
    data["solver"]["preconditioner"] = False
    assert parse_config(data).preconditioner is None
    data["solver"] = {"near_field_radius": -1.0}
    with pytest.raises(ConfigError, match="near_field_radius"):
        parse_config(data)
    data["solver"] = {"tolerance": -1.0}
    with pytest.raises(ConfigError, match="solver"):
        parse_config(data)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("frequency = = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)
