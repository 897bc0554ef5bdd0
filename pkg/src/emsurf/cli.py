"""Command-line driver: ``solve``, ``validate`` and ``selftest``.

Usage::

    python -m emsurf [--threads N] [--cache-dir PATH] solve run.toml
    python -m emsurf validate run.toml
    python -m emsurf selftest [fast|full]
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time

log = logging.getLogger("emsurf")

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def limit_threads(n: int) -> None:
    """Bound BLAS/OpenMP pools; effective only before numpy is first imported."""
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


class _Artifacts:
    """Files written by one run, removed again if the run fails."""

    def __init__(self):
        self.paths = []

    def add(self, path):
        self.paths.append(path)
        return path

    def remove(self):
        for p in self.paths:
            try:
                os.remove(p)
            except FileNotFoundError:
                pass


def _geometries(cfg):
    return {tid: cfg.geometry(tid) for tid in sorted(set(cfg.template_map))}


def _check_shared_box(geoms):
    digests = {tid: g.seq_digest() for tid, g in geoms.items()}
    if len(set(digests.values())) > 1:
        from .array import LayoutError
        raise LayoutError(f"fictitious-box meshes differ between templates {sorted(digests)}")


def _layout(cfg, geoms):
    from .array import ArrayLayout
    w = next(iter(geoms.values())).width
    return ArrayLayout(cfg.counts, (w, w), cfg.template_map, cfg.origin)


def _check_source(cfg, layout, geoms):
    from .array import ExcitationError
    pos = getattr(cfg.excitation, "position", None)
    if pos is None:
        return
    g = next(iter(geoms.values()))
    for m in range(layout.ncells):
        p = [a - b for a, b in zip(pos, layout.position(m))]
        if 0 < p[0] < g.width and 0 < p[1] < g.width and 0 < p[2] < g.box_height:
            raise ExcitationError(f"dipole at {tuple(pos)} lies inside the box of cell {m}")


def run_validate(config_path, echo=print) -> int:
    """Dry run: parse the config, build and check every mesh; no assembly."""
    from .config import load_config
    from .validation.monolithic import monolithic_counts

    cfg = load_config(config_path)
    geoms = _geometries(cfg)
    for tid, g in geoms.items():
        g.mesh.validate()
        echo(f"template {tid}: {g.mesh.ntri} triangles, {g.nregions} regions")
    _check_shared_box(geoms)
    layout = _layout(cfg, geoms)
    _check_source(cfg, layout, geoms)
    raw, unique = monolithic_counts(layout, geoms, cfg.frequency)
    echo(f"layout {cfg.counts[0]} x {cfg.counts[1]}: {layout.ncells} cells")
    echo(f"monolithic unknowns: {unique} ({raw} before region merging)")
    echo("configuration is valid")
    return 0


def build_report(cfg, config_path, system, solution, models, counts, norm_error, peaks,
                 rows) -> str:
    from .pipeline import format_report

    d = system.dofs
    lam = 299792458.0 / cfg.frequency
    r = solution.report
    lines = [f"config: {os.path.basename(config_path)}",
             f"frequency: {cfg.frequency:.6g} Hz",
             f"cells: {cfg.counts[0]} x {cfg.counts[1]} ({system.layout.ncells})",
             f"templates: {', '.join(sorted(models))}"]
    extra = {
        "Fictitious-surface unknowns before merging": d.n_stacked,
        "Shared-face unknowns merged": d.duplicates,
        "Monolithic unknowns (all regions kept)": counts[1],
        "Interior unknowns eliminated per cell": ", ".join(
            f"{t} {m.incidence.n_int}" for t, m in sorted(models.items())),
        "Macromodel cache": ", ".join(
            f"{t} {'hit' if m.cache_hit else 'miss'}" for t, m in sorted(models.items())),
        "GMRES iterations": r.iterations,
        "GMRES relative residual": f"{r.residual:.3e}",
        "GMRES converged": "yes" if r.converged else "no",
        "Near-field radius (wavelengths)": f"{cfg.preconditioner.resolve(cfg.frequency) / lam:.4f}"
        if cfg.preconditioner is not None else "none",
        "Directivity normalisation error": f"{norm_error:.2e}",
    }
    for phi, peak in peaks:
        extra[f"Peak directivity, phi = {phi:g} deg (dBi)"] = f"{peak:.3f}"
    return "\n".join(lines) + "\n" + format_report(rows, extra)


def run_solve(config_path, threads=None, cache_dir=None, echo=print) -> int:
    """Full run; returns 0 only when the solver converged and every artifact was written."""
    import numpy as np

    from .config import load_config
    from .pipeline import (array_radius, assemble_system, build_models, radiated_power,
                           solve_array, wavenumber)
    from .post import far_field_cut
    from .solver import PreconditionerSpec
    from .validation.monolithic import monolithic_counts

    cfg = load_config(config_path)
    out_dir = cfg.output.directory
    if not os.path.isabs(out_dir):
        out_dir = os.path.join(cfg.base_dir, out_dir)
    geoms = _geometries(cfg)
    _check_shared_box(geoms)
    _check_source(cfg, _layout(cfg, geoms), geoms)
    os.makedirs(out_dir, exist_ok=True)
    art = _Artifacts()
    try:
        t0 = time.perf_counter()
        models = build_models(geoms, cfg.frequency, cache_dir=cache_dir)
        t_macro = time.perf_counter() - t0
        echo(f"macromodels ready ({t_macro:.1f} s)")
        system = assemble_system(models, cfg.counts, cfg.template_map, cfg.frequency,
                                 origin=cfg.origin, workers=threads or 1)
        echo(f"coupling operator assembled ({system.times['fill']:.1f} s)")
        spec = cfg.preconditioner
        sol = solve_array(system, cfg.excitation, cfg.gmres, spec is not None,
                          spec or PreconditionerSpec())
        r = sol.report
        echo(f"GMRES converged in {r.iterations} iterations")
        k = wavenumber(cfg.frequency)
        src = sol.sources()
        radius = array_radius(system.layout, system.box)
        prad, grid, D = radiated_power(src, k, radius)
        norm_error = abs(float(np.sum(D * grid.weights)) / (4 * np.pi) - 1.0)
        peaks = []
        for phi in cfg.output.cuts:
            cut = far_field_cut(src, k, phi, cfg.output.theta_deg, prad)
            cut.write(art.add(os.path.join(out_dir, f"cut_phi{phi:g}.csv")))
            peaks.append((phi, float(cut.directivity_dbi.max())))
        if cfg.output.dump_currents:
            cur = sol.currents
            path = art.add(os.path.join(out_dir, "currents.npz"))
            np.savez(path, merged=cur.merged, stacked=cur.stacked, frequency=cfg.frequency,
                     counts=np.array(cfg.counts), n_local=system.box.n)
        layout = system.layout
        counts = monolithic_counts(layout, geoms, cfg.frequency)
        rows = {"unknowns": system.dofs.n_merged, "macromodel": t_macro,
                "fill": system.times["fill"], "factorization": r.times["factorization"],
                "solve": r.times["iterations"]}
        text = build_report(cfg, config_path, system, sol, models, counts, norm_error, peaks,
                            rows)
        with open(art.add(os.path.join(out_dir, "report.txt")), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(text)
        echo(text.rstrip())
        return 0
    except BaseException:
        art.remove()
        raise


def run_selftest(tier="fast", echo=print) -> int:
    from . import selftest

    results = selftest.run(tier, echo)
    failed = [r.number for r in results if not r.passed]
    echo(f"{len(results) - len(failed)}/{len(results)} criteria passed"
         + (f"; failed: {failed}" if failed else ""))
    return 1 if failed else 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emsurf", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="bound on threads in all parallel phases (default: all cores)")
    p.add_argument("--cache-dir", default=None, help="directory for cached macromodels")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="run a configuration end to end")
    s.add_argument("config")
    v = sub.add_parser("validate", help="check a configuration and its meshes without solving")
    v.add_argument("config")
    t = sub.add_parser("selftest", help="run the acceptance checks")
    t.add_argument("tier", nargs="?", default="fast", choices=("fast", "full"))
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    threads = args.threads or os.cpu_count() or 1
    limit_threads(threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "solve":
            return run_solve(args.config, threads, args.cache_dir)
        if args.command == "validate":
            return run_validate(args.config)
        return run_selftest(args.tier)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # every module error becomes a message and an exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
