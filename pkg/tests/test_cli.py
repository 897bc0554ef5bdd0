import os
import re

import pytest

from emsurf.cli import main
from emsurf.pipeline import REPORT_LABELS

FIXTURE = os.path.join(os.path.dirname(__file__), "..", "configs", "fixture_2x2.toml")


def write_config(tmp_path, counts="[1, 1]", out="out", extra="", template_map='"p54"'):
    text = open(FIXTURE).read()
    text = text.replace("counts = [2, 2]", f"counts = {counts}")
    text = text.replace('template_map = "p54"', f"template_map = {template_map}")
    text = text.replace('directory = "out_fixture_2x2"', f'directory = "{out}"')
    text = text.replace("max_iterations = 1000", extra or "max_iterations = 1000")
    path = tmp_path / f"run_{out}.toml"
    path.write_text(text)
    return str(path)


def without_times(text):
    return "\n".join(line for line in text.splitlines() if not line.rstrip().endswith(" s"))


def test_validate(tmp_path, capsys):
    assert main(["validate", write_config(tmp_path, counts="[2, 2]")]) == 0
    out = capsys.readouterr().out
    assert "configuration is valid" in out and "monolithic unknowns" in out


def test_missing_template_fails_before_writing(tmp_path, capsys):
    cfg = write_config(tmp_path, template_map='["p54", "p99"]', counts="[2, 1]")
    assert main(["solve", cfg]) == 1
    assert "p99" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_dipole_inside_box_is_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path)
    text = open(cfg).read().replace(
        'kind = "plane_wave"\ndirection = [0.0, 0.0, -1.0]\npolarization = [1.0, 0.0, 0.0]',
        'kind = "dipole"\nposition = [5e-3, 5e-3, 4e-3]')
    open(cfg, "w").write(text)
    assert main(["validate", cfg]) == 1
    assert "inside" in capsys.readouterr().err


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cache = str(tmp / "cache")
    runs = []
    for out in ("a", "b"):
        cfg = write_config(tmp, out=out)
        assert main(["--threads", "1", "--cache-dir", cache, "solve", cfg]) == 0
        runs.append(tmp / out)
    return runs


def test_solve_writes_cuts_and_report(solved):
    out = solved[0]
    assert sorted(os.listdir(out)) == ["cut_phi0.csv", "cut_phi45.csv", "cut_phi90.csv",
                                       "report.txt"]
    report = (out / "report.txt").read_text()
    for label in REPORT_LABELS.values():
        assert label in report
    assert "p54 miss" in report
    rows = (out / "cut_phi0.csv").read_text().splitlines()
    assert len(rows) == 182


def test_rerun_hits_cache_and_reproduces(solved):
    a, b = solved
    assert "p54 hit" in (b / "report.txt").read_text()
    for name in ("cut_phi0.csv", "cut_phi45.csv", "cut_phi90.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ra = without_times((a / "report.txt").read_text()).replace("miss", "hit")
    rb = without_times((b / "report.txt").read_text())
    assert re.sub(r"run_\w+\.toml", "", ra) == re.sub(r"run_\w+\.toml", "", rb)


def test_failed_solve_removes_artifacts(tmp_path, capsys):
    cfg = write_config(tmp_path, extra="max_iterations = 2\ntolerance_dummy = 0")
    assert main(["solve", cfg]) == 1  # unknown key
    cfg = write_config(tmp_path, out="few", extra="max_iterations = 2")
    assert main(["--threads", "1", "solve", cfg]) == 1
    assert "ConvergenceError" in capsys.readouterr().err
    assert os.listdir(tmp_path / "few") == []


def test_argument_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["selftest", "bogus"])
    assert exc.value.code == 2
    assert main(["--threads", "0", "selftest"]) == 2
