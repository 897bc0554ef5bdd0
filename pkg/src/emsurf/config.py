"""Run configuration: a TOML document with strictly checked keys.

Example::

    frequency = 9.6e9

    [cell]
    width = 13.5e-3
    layer_heights = [0.762e-3]
    permittivities = [3.66]
    box_height = 8e-3
    mesh_length_patch = 2.7e-3
    mesh_length_box = 3.375e-3

    [templates.p54]
    patch_width = 5.4e-3

    [layout]
    counts = [2, 2]
    template_map = "p54"

    [excitation]
    kind = "plane_wave"

    [output]
    directory = "out"

Lengths are in metres, frequency in hertz.
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .array import HertzianDipole, PlaneWave
from .mesh import UnitCellGeometry, generate_unit_cell, read_mesh
from .solver import GmresConfig, PreconditionerSpec


class ConfigError(ValueError):
    """Invalid run configuration."""


_SCHEMA = {
    "": {"frequency", "cell", "templates", "layout", "excitation", "solver", "output"},
    "cell": {"width", "layer_heights", "permittivities", "box_height", "mesh_length_patch",
             "mesh_length_box", "grading", "ground"},
    "template": {"patch_width", "mesh"},
    "layout": {"counts", "template_map", "origin"},
    "plane_wave": {"kind", "direction", "polarization", "amplitude"},
    "dipole": {"kind", "position", "orientation", "moment"},
    "solver": {"tolerance", "restart", "max_iterations", "near_field_radius", "preconditioner"},
    "output": {"directory", "cuts", "theta", "dump_currents"},
}


def _check_keys(section: str, table, allowed_key: str | None = None):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    allowed = _SCHEMA[allowed_key if allowed_key is not None else section]
    unknown = sorted(set(table) - allowed)
    if unknown:
        where = f"[{section}]" if section else "top level"
        raise ConfigError(f"unknown key(s) {unknown} at {where}; allowed: {sorted(allowed)}")


def _require(table, key, section):
    if key not in table:
        raise ConfigError(f"missing required key '{key}' in [{section}]")
    return table[key]


@dataclass(frozen=True)
class CellSpec:
    width: float
    layer_heights: tuple
    permittivities: tuple
    box_height: float | None
    mesh_length_patch: float
    mesh_length_box: float
    grading: float = 0.0
    ground: bool = True


@dataclass(frozen=True)
class TemplateSpec:
    id: str
    patch_width: float | None = None
    mesh: str | None = None


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "out"
    cuts: tuple = (0.0, 45.0, 90.0)
    theta: tuple = (-90.0, 90.0, 181)
    dump_currents: bool = False

    @property
    def theta_deg(self) -> np.ndarray:
        lo, hi, n = self.theta
        return np.linspace(float(lo), float(hi), int(n))


@dataclass(frozen=True)
class RunConfig:
    frequency: float
    cell: CellSpec
    templates: dict
    counts: tuple
    template_map: tuple
    origin: tuple
    excitation: object
    gmres: GmresConfig
    preconditioner: PreconditionerSpec | None
    output: OutputSpec
    base_dir: str = "."
    source: dict = field(default_factory=dict, repr=False)

    def geometry(self, tid: str) -> UnitCellGeometry:
        t = self.templates[tid]
        c = self.cell
        if t.mesh is not None:
            path = t.mesh if os.path.isabs(t.mesh) else os.path.join(self.base_dir, t.mesh)
            mesh = read_mesh(path)
            box = c.box_height if c.box_height is not None else float(mesh.vertices[:, 2].max())
            return UnitCellGeometry(c.width, box, c.layer_heights, c.permittivities, None,
                                    c.ground, mesh, tid)
        return generate_unit_cell(c.width, c.layer_heights, c.permittivities, t.patch_width,
                                  c.mesh_length_patch, c.mesh_length_box, c.box_height,
                                  c.ground, tid, c.grading)


def _excitation(table):
    kind = _require(table, "kind", "excitation")
    if kind == "plane_wave":
        _check_keys("excitation", table, "plane_wave")
        return PlaneWave(tuple(table.get("direction", (0.0, 0.0, -1.0))),
                         tuple(table.get("polarization", (1.0, 0.0, 0.0))),
                         complex(table.get("amplitude", 1.0)))
    if kind == "dipole":
        _check_keys("excitation", table, "dipole")
        return HertzianDipole(tuple(_require(table, "position", "excitation")),
                              tuple(table.get("orientation", (1.0, 0.0, 0.0))),
                              complex(table.get("moment", 1.0)))
    raise ConfigError(f"unknown excitation kind '{kind}' (use 'plane_wave' or 'dipole')")


def parse_config(data: dict, base_dir: str = ".") -> RunConfig:
    """Validate a parsed TOML document; no geometry is built here."""
    _check_keys("", data)
    freq = float(_require(data, "frequency", "top level"))
    if not freq > 0:
        raise ConfigError("frequency must be positive")
    cell_t = _require(data, "cell", "top level")
    _check_keys("cell", cell_t)
    cell = CellSpec(float(_require(cell_t, "width", "cell")),
                    tuple(float(h) for h in _require(cell_t, "layer_heights", "cell")),
                    tuple(complex(e) for e in _require(cell_t, "permittivities", "cell")),
                    None if "box_height" not in cell_t else float(cell_t["box_height"]),
                    float(cell_t.get("mesh_length_patch", cell_t.get("mesh_length_box", 0.0))),
                    float(_require(cell_t, "mesh_length_box", "cell")),
                    float(cell_t.get("grading", 0.0)), bool(cell_t.get("ground", True)))
    tmpl_t = _require(data, "templates", "top level")
    if not isinstance(tmpl_t, dict) or not tmpl_t:
        raise ConfigError("[templates] must define at least one template")
    templates = {}
    for tid, t in tmpl_t.items():
        _check_keys(f"templates.{tid}", t, "template")
        if ("patch_width" in t) == ("mesh" in t):
            raise ConfigError(f"template '{tid}' needs exactly one of 'patch_width' or 'mesh'")
        if "mesh" in t:
            path = t["mesh"] if os.path.isabs(t["mesh"]) else os.path.join(base_dir, t["mesh"])
            if not os.path.exists(path):
                raise ConfigError(f"template '{tid}': mesh file '{path}' does not exist")
        templates[tid] = TemplateSpec(tid, None if "patch_width" not in t
                                      else float(t["patch_width"]), t.get("mesh"))
    lay = _require(data, "layout", "top level")
    _check_keys("layout", lay)
    counts = tuple(int(c) for c in _require(lay, "counts", "layout"))
    if len(counts) != 2 or min(counts) < 1:
        raise ConfigError("layout.counts must be two positive integers")
    tmap = _require(lay, "template_map", "layout")
    ncell = counts[0] * counts[1]
    if isinstance(tmap, str):
        tmap = [tmap] * ncell
    tmap = tuple(str(t) for t in tmap)
    if len(tmap) != ncell:
        raise ConfigError(f"layout.template_map lists {len(tmap)} cells, expected {ncell}")
    missing = sorted(set(tmap) - set(templates))
    if missing:
        raise ConfigError(f"layout.template_map references undefined template(s) {missing}")
    origin = tuple(float(v) for v in lay.get("origin", (0.0, 0.0, 0.0)))
    exc_t = _require(data, "excitation", "top level")
    if not isinstance(exc_t, dict):
        raise ConfigError("[excitation] must be a table")
    try:
        excitation = _excitation(exc_t)
    except ValueError as exc:
        raise ConfigError(f"[excitation]: {exc}") from None
    sol = data.get("solver", {})
    _check_keys("solver", sol)
    try:
        gmres = GmresConfig(float(sol.get("tolerance", 1e-4)), int(sol.get("restart", 100)),
                            int(sol.get("max_iterations", 1000)))
    except ValueError as exc:
        raise ConfigError(f"[solver]: {exc}") from None
    prec = None
    if sol.get("preconditioner", True):
        radius = sol.get("near_field_radius")
        if radius is not None and not float(radius) > 0:
            raise ConfigError("solver.near_field_radius must be positive")
        prec = PreconditionerSpec(None if radius is None else float(radius))
    out = data.get("output", {})
    _check_keys("output", out)
    theta = tuple(out.get("theta", (-90.0, 90.0, 181)))
    if len(theta) != 3 or int(theta[2]) < 2 or not float(theta[1]) > float(theta[0]):
        raise ConfigError("output.theta must be [start, stop, count] with stop > start")
    output = OutputSpec(str(out.get("directory", "out")),
                        tuple(float(p) for p in out.get("cuts", (0.0, 45.0, 90.0))), theta,
                        bool(out.get("dump_currents", False)))
    return RunConfig(freq, cell, templates, counts, tmap, origin, excitation, gmres, prec, output,
                     base_dir, data)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file '{path}' not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, os.path.dirname(os.path.abspath(path)))
