"""Time the compiled and numpy triangle-pair kernels on the same random block.

Usage::

    python3 benchmarks/bench_fill.py [--tri 64] [--order 6] [--repeat 5]
"""
import argparse
import time

import numpy as np

from emsurf.kernels import _pairs_py
from emsurf.quadrature import triangle_rule

try:
    from emsurf.kernels import _fill
except ImportError:  # extension not built
    _fill = None


def block_inputs(ntri, order, rng):
    """Random triangles in two separated clusters, sampled with a Dunavant rule."""
    rule = triangle_rule(order)
    out = []
    for shift in (0.0, 3.0):
        c = rng.uniform(0.0, 1.0, (ntri, 3, 3))
        c[..., 0] += shift
        bary = rule.points  # (q, 3)
        q = np.ascontiguousarray(np.einsum("qa,nax->nqx", bary, c))
        area = 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)
        w = np.ascontiguousarray(area[:, None] * rule.weights[None, :])
        out += [q, w, np.ascontiguousarray(c)]
    return out


def run(fn, args, k, ntri, repeat):
    A = np.empty((ntri, ntri, 3, 3), complex)
    S = np.empty((ntri, ntri), complex)
    K = np.empty((ntri, ntri, 3, 3), complex)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args, k, A, S, K)
        best = min(best, time.perf_counter() - t0)
    return best, (A, S, K)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--tri", type=int, default=64, help="triangles per side of the block")
    p.add_argument("--order", type=int, default=6, help="quadrature degree")
    p.add_argument("--repeat", type=int, default=5)
    a = p.parse_args(argv)
    args = block_inputs(a.tri, a.order, np.random.default_rng(0))
    k = complex(2 * np.pi)
    pairs = a.tri * a.tri
    t_py, ref = run(_pairs_py.regular_block, args, k, a.tri, a.repeat)
    print(f"{a.tri} x {a.tri} triangle pairs, {args[1].shape[1]} points per triangle")
    print(f"numpy    : {t_py * 1e3:9.2f} ms  ({pairs / t_py:,.0f} pairs/s)")
    if _fill is None:
        print("compiled : not built")
        return
    t_c, out = run(_fill.regular_block, args, k, a.tri, a.repeat)
    err = max(np.abs(x - y).max() / np.abs(y).max() for x, y in zip(out, ref))
    print(f"compiled : {t_c * 1e3:9.2f} ms  ({pairs / t_c:,.0f} pairs/s)")
    print(f"speed-up : {t_py / t_c:.1f}x, max relative difference {err:.1e}")


if __name__ == "__main__":
    main()
