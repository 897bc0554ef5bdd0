"""Acceptance checks, grouped into a fast (algebraic) and a full (physics) tier.

Each check returns a :class:`CheckResult`; the CLI ``selftest`` command and the
test suite both run these functions.
"""
from __future__ import annotations

import functools
import time
from dataclasses import dataclass

import numpy as np

from .array import ArrayLayout, PlaneWave, box_template, coupling_block
from .fftaccel import build_block_toeplitz, storage_bound
from .mesh import generate_unit_cell
from .pipeline import (array_radius, assemble_system, build_models, cuts, radiated_power,
                       solve_array, wavenumber)
from .post import (CurrentSources, SphereGrid, compute_directivity, far_field_cut,
                   null_depth_db, probe_near_field, radiate_far_field)
from .solver import GmresConfig, PreconditionerSpec

TIERS = ("fast", "full")

# 2x2 grounded-substrate fixture with small square patches (lengths in metres)
FIXTURE = dict(width=13.5e-3, layer_heights=(0.762e-3,), permittivities=(3.66,),
               patch_width=5.4e-3, mesh_length_patch=2.7e-3, mesh_length_box=3.375e-3,
               box_height=8e-3)
FIXTURE_FREQUENCY = 9.6e9
FIXTURE_COUNTS = (2, 2)
PROBE_XY = (4.5e-3, 6.75e-3, 9.0e-3)
PROBE_Z = (3.4e-3, 4.0e-3, 4.6e-3)


@dataclass(frozen=True)
class CheckResult:
    number: int
    title: str
    passed: bool
    measured: str
    limit: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] criterion {self.number}: {self.title}: {self.measured} "
                f"(limit {self.limit}; {self.seconds:.1f} s)")


def _timed(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        number, title, passed, measured, limit = fn(*args, **kwargs)
        return CheckResult(number, title, bool(passed), measured, limit,
                           time.perf_counter() - t0)
    return wrapper


# ---------------------------------------------------------------------------
# shared fixture


@dataclass(eq=False)
class Fixture:
    geometry: object
    models: dict
    system: object
    solution: object
    seconds: float


def fixture_geometry(template_id="p54"):
    f = FIXTURE
    return generate_unit_cell(f["width"], f["layer_heights"], f["permittivities"],
                              f["patch_width"], f["mesh_length_patch"], f["mesh_length_box"],
                              box_height=f["box_height"], template_id=template_id)


@functools.lru_cache(maxsize=1)
def fixture() -> Fixture:
    """Solved 2x2 fixture under a normally incident plane wave (built once)."""
    t0 = time.perf_counter()
    g = fixture_geometry()
    models = build_models({"p54": g}, FIXTURE_FREQUENCY)
    ncell = FIXTURE_COUNTS[0] * FIXTURE_COUNTS[1]
    system = assemble_system(models, FIXTURE_COUNTS, ["p54"] * ncell, FIXTURE_FREQUENCY)
    sol = solve_array(system, PlaneWave(), GmresConfig(tol=1e-4))
    return Fixture(g, models, system, sol, time.perf_counter() - t0)


def probe_points(layout) -> np.ndarray:
    """27 points per cell in the air above the patch, inside each box."""
    local = np.array([(x, y, z) for x in PROBE_XY for y in PROBE_XY for z in PROBE_Z])
    return np.concatenate([local + layout.position(m) for m in range(layout.ncells)])


# ---------------------------------------------------------------------------
# fast tier


@_timed
def check_fft_exactness(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    t0 = time.perf_counter()
    for n in (8, 32):
        for dims in ((1, 1), (5, 1), (1, 3), (3, 4), (8, 8)):
            mx, my = dims
            gen = (rng.standard_normal((2 * mx - 1, 2 * my - 1, n, n))
                   + 1j * rng.standard_normal((2 * mx - 1, 2 * my - 1, n, n)))
            op = build_block_toeplitz(gen, dims)
            x = rng.standard_normal(op.shape[0]) + 1j * rng.standard_normal(op.shape[0])
            ref = op.densify() @ x
            worst = max(worst, np.linalg.norm(op.apply(x) - ref) / np.linalg.norm(ref))
    elapsed = time.perf_counter() - t0
    return (1, "FFT matvec exactness", worst < 1e-12 and elapsed < 5.0,
            f"max relative error {worst:.2e} in {elapsed:.2f} s", "1e-12 within 5 s")


@_timed
def check_toeplitz_structure():
    g = fixture_geometry()
    models = build_models({"p54": g}, FIXTURE_FREQUENCY)
    box = box_template(models["p54"])
    layout = ArrayLayout((3, 3), (g.width, g.width), ("p54",) * 9, (0.0, 0.0, 0.0))
    worst = 0.0
    # two cell pairs per lattice offset
    for (a, b), (c, d) in (((0, 4), (4, 8)), ((3, 1), (7, 5))):
        B1 = coupling_block(box, layout.position(a), layout.position(b), FIXTURE_FREQUENCY)
        B2 = coupling_block(box, layout.position(c), layout.position(d), FIXTURE_FREQUENCY)
        worst = max(worst, np.linalg.norm(B1 - B2) / np.linalg.norm(B1))
    return (2, "Toeplitz structure of physics blocks", worst < 1e-12,
            f"max relative difference {worst:.2e}", "1e-12")


def _apply_time(op, x, repeats=7):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        op.apply(x)
        best = min(best, time.perf_counter() - t0)
    return best


@_timed
def check_complexity(n=24, seed=1):
    rng = np.random.default_rng(seed)
    Ms, ts = [], []
    for side in (8, 16, 32):
        gen = rng.standard_normal((2 * side - 1, 2 * side - 1, n, n)).astype(complex)
        op = build_block_toeplitz(gen, (side, side))
        x = rng.standard_normal(op.shape[0]) + 0j
        op.apply(x)
        Ms.append(side * side)
        ts.append(_apply_time(op, x))
    Ms, ts = np.array(Ms, float), np.array(ts)
    model = Ms * np.log2(Ms)
    c = np.exp(np.mean(np.log(ts / model)))
    ratio = ts / (c * model)
    worst = float(max(ratio.max(), 1.0 / ratio.min()))
    detail = ", ".join(f"M={int(m)}: {t * 1e3:.2f} ms" for m, t in zip(Ms, ts))
    return (7, "matvec complexity c M log2 M", worst <= 1.5,
            f"worst fit factor {worst:.3f} ({detail})", "factor 1.5")


@_timed
def check_storage(n=16):
    rows = []
    ok = True
    for dims in ((2, 2), (5, 3), (8, 8), (16, 16)):
        gen = np.zeros((2 * dims[0] - 1, 2 * dims[1] - 1, n, n), complex)
        op = build_block_toeplitz(gen, dims)
        bound = storage_bound(2, n, dims[0] * dims[1])
        ok &= op.storage <= bound
        rows.append(f"{dims[0]}x{dims[1]}: {op.storage}/{bound}")
    return (8, "generator storage bound", ok, "; ".join(rows), "2^(d+1) n^2 M, d=2")


def dipole_sources(length=1e-6):
    """Short z-directed current filament sampled at two points."""
    pts = np.array([[0.0, 0.0, -length / 4], [0.0, 0.0, length / 4]])
    w = np.array([[0.0, 0.0, length / 2], [0.0, 0.0, length / 2]], complex)
    return CurrentSources(pts, w, np.zeros((0, 3)), np.zeros((0, 3), complex))


@_timed
def check_directivity(order_list=(10, 16, 30)):
    k = 2 * np.pi / 0.03
    src = dipole_sources()
    worst = 0.0
    for order in order_list:
        grid = SphereGrid.create(order)
        et, ep = radiate_far_field(src, grid.theta, grid.phi, k)
        D, _ = compute_directivity(et, ep, grid.weights)
        worst = max(worst, abs(np.sum(D * grid.weights) / (4 * np.pi) - 1.0))
    prad, _, _ = radiated_power(src, k, 1e-3)
    cut = far_field_cut(src, k, 0.0, np.linspace(-90.0, 90.0, 181), prad)
    peak = float(cut.directivity_dbi.max())
    ideal = 10 * np.log10(1.5)
    rel = abs(peak - ideal) / ideal
    return (9, "directivity normalisation", worst < 1e-3 and rel < 5e-3,
            f"max |int D dOmega / 4 pi - 1| = {worst:.1e}; dipole peak {peak:.4f} dBi "
            f"(relative error {rel:.1e})", "1e-3 and 0.5 %")


# ---------------------------------------------------------------------------
# full tier


@_timed
def check_equivalence(max_unknowns=3000):
    from .validation.monolithic import solve_monolithic

    t0 = time.perf_counter()
    fx = fixture()
    S = fx.system
    mono = solve_monolithic(S.layout, {"p54": fx.geometry}, FIXTURE_FREQUENCY, PlaneWave())
    k = wavenumber(FIXTURE_FREQUENCY)
    R = array_radius(S.layout, S.box)
    th = np.linspace(-90.0, 90.0, 181)
    a = cuts(fx.solution.sources(), k, R, (0.0,), th)[0]
    b = cuts(mono.outer_currents(), k, R, (0.0,), th)[0]
    la = 20 * np.log10(np.hypot(np.abs(a.e_theta), np.abs(a.e_phi)))
    lb = 20 * np.log10(np.hypot(np.abs(b.e_theta), np.abs(b.e_phi)))
    mask = lb >= lb.max() - 30.0
    diff = float(np.max(np.abs(la - lb)[mask]))
    elapsed = time.perf_counter() - t0
    small = mono.n_unique <= max_unknowns
    return (3, "macromodel vs monolithic far field", diff <= 0.1 and elapsed < 600 and small,
            f"max |difference| {diff:.2e} dB over {int(mask.sum())} angles; monolithic "
            f"{mono.n_unique} unknowns ({mono.n_raw} before region merging); {elapsed:.0f} s",
            "0.1 dB, <= 3000 unknowns, 600 s")


@_timed
def check_sphere(radius=1.0, fraction=10.0):
    from .validation.mie import bistatic_rcs
    from .validation.sphere import coarsest_level, pec_sphere_efie

    t0 = time.perf_counter()
    k = 1.0 / radius
    level = coarsest_level(radius, 2 * np.pi / k, fraction)
    sol = pec_sphere_efie(radius, k, level)
    th = np.radians(np.linspace(0.0, 180.0, 181))
    worst = 0.0
    for plane in ("E", "H"):
        d = 10 * np.log10(sol.rcs(th, plane) / bistatic_rcs(k, radius, th, plane))
        worst = max(worst, float(np.max(np.abs(d))))
    elapsed = time.perf_counter() - t0
    return (4, "PEC sphere EFIE vs Mie (ka = 1)", worst <= 0.5 and elapsed < 300,
            f"max |error| {worst:.3f} dB, icosphere level {level}, {sol.unknowns} unknowns",
            "0.5 dB within 300 s")


@_timed
def check_love_null():
    fx = fixture()
    S = fx.system
    k = wavenumber(FIXTURE_FREQUENCY)
    pts = probe_points(S.layout)
    E, H = probe_near_field(fx.solution.currents.surface(), pts, k, 2 * np.pi / k)
    Ei, Hi = PlaneWave().fields(pts, k)
    dE = null_depth_db(E + Ei, Ei)
    dH = null_depth_db(H + Hi, Hi)
    worst = float(max(dE.max(), dH.max()))
    return (5, "Love-condition interior null", worst <= -40.0,
            f"worst {worst:.1f} dB (E median {np.median(dE):.1f} dB, H median "
            f"{np.median(dH):.1f} dB) over {len(pts)} probes", "-40 dB")


@_timed
def check_preconditioner():
    fx = fixture()
    S = fx.system
    cfg = GmresConfig(tol=1e-4, restart=100, maxiter=1000)
    spec = PreconditionerSpec()
    radius = spec.resolve(FIXTURE_FREQUENCY)
    lam = 2 * np.pi / wavenumber(FIXTURE_FREQUENCY)
    pre = solve_array(S, PlaneWave(), cfg, True, spec, raise_on_failure=False).report
    raw = solve_array(S, PlaneWave(), cfg, False, raise_on_failure=False).report
    in_range = lam / 10 <= radius <= lam / 6
    ok = pre.converged and in_range and pre.iterations <= 0.5 * raw.iterations
    tail = "" if raw.converged else f", not converged, residual {raw.residual:.1e}"
    return (6, "near-field preconditioner", ok,
            f"{pre.iterations} preconditioned vs {raw.iterations} unpreconditioned iterations"
            f"{tail}; radius {radius / lam:.4f} wavelengths", "ratio 0.5")


@_timed
def check_bookkeeping():
    from .validation.monolithic import monolithic_counts

    fx = fixture()
    S = fx.system
    model = fx.models["p54"]
    d = S.dofs
    raw, unique = monolithic_counts(S.layout, {"p54": fx.geometry}, FIXTURE_FREQUENCY)
    n_eq = model.n_eq
    interior = model.incidence.n_int
    ok = (S.box.n == n_eq and d.n_stacked == S.layout.ncells * n_eq
          and d.n_merged == d.n_stacked - d.duplicates and len(fx.solution.rhs) == d.n_merged
          and d.n_merged < unique)
    return (10, "unknown-reduction bookkeeping", ok,
            f"solved {d.n_merged} = {d.n_stacked} fictitious-surface - {d.duplicates} shared; "
            f"{interior} interior unknowns per cell eliminated; monolithic {unique}",
            "solved < monolithic")


FAST = (check_fft_exactness, check_toeplitz_structure, check_complexity, check_storage,
        check_directivity)
FULL = FAST + (check_equivalence, check_sphere, check_love_null, check_preconditioner,
               check_bookkeeping)


def run(tier="fast", echo=print) -> list:
    if tier not in TIERS:
        raise ValueError(f"unknown tier '{tier}' (choose from {', '.join(TIERS)})")
    results = []
    for check in (FAST if tier == "fast" else FULL):
        res = check()
        echo(res.line())
        results.append(res)
    results.sort(key=lambda r: r.number)
    return results
