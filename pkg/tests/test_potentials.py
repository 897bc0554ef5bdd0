import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emsurf.kernels.potentials import static_potentials
from emsurf.quadrature import triangle_rule

TRI = np.array([[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [0.3, 0.9, 0.0]])


def subdivide(tri, levels):
    tris = [tri]
    for _ in range(levels):
        new = []
        for a, b, c in tris:
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            new += [np.array(t) for t in ((a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca))]
        tris = new
    return np.array(tris)


def brute_force(r, tri, levels=6):
    # composite degree-8 rule on a 4^levels subdivision
    rule = triangle_rule(8)
    sub = subdivide(tri, levels)
    pts = rule.map(sub).reshape(-1, 3)
    area = 0.5 * np.linalg.norm(np.cross(sub[:, 1] - sub[:, 0], sub[:, 2] - sub[:, 0]), axis=1)
    w = (area[:, None] * rule.weights).ravel()
    d = r - pts
    R = np.linalg.norm(d, axis=1)
    s0 = np.sum(w / R)
    s1 = np.sum((w / R)[:, None] * pts, axis=0)
    sg = np.sum((-w / R ** 3)[:, None] * d, axis=0)
    return s0, s1, sg


@settings(max_examples=25, deadline=None)
@given(x=st.floats(-1.5, 2.5), y=st.floats(-1.5, 2.5), z=st.floats(0.3, 2.0))
def test_off_plane_points_match_quadrature(x, y, z):
    r = np.array([x, y, z])
    s0, s1, sg = static_potentials(r[None], TRI[None])
    b0, b1, bg = brute_force(r, TRI, levels=4)
    assert s0[0] == pytest.approx(b0, rel=1e-6)
    np.testing.assert_allclose(s1[0], b1, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(sg[0], bg, rtol=1e-5, atol=1e-7)


def ray_exit_distance(r, tri, phi):
    """Distance from in-plane ``r`` to the triangle boundary along direction ``phi``."""
    d = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    best = np.full(len(phi), np.inf)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        p, e = tri[a, :2] - r[:2], tri[b, :2] - tri[a, :2]
        # r + t d = tri[a] + u e
        det = d[:, 0] * (-e[1]) - d[:, 1] * (-e[0])
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (p[0] * (-e[1]) - p[1] * (-e[0])) / det
            u = (d[:, 0] * p[1] - d[:, 1] * p[0]) / det
        ok = (t > 0) & (u >= 0) & (u <= 1)
        best = np.where(ok, np.minimum(best, t), best)
    return best


def test_in_plane_interior_point():
    # in polar coordinates about r, int 1/R dS = int rho(phi) dphi
    r = np.array([0.41, 0.33, 0.0])
    phi = (np.arange(400000) + 0.5) * 2 * np.pi / 400000
    ref = np.sum(ray_exit_distance(r, TRI, phi)) * 2 * np.pi / 400000
    s0, _, sg = static_potentials(r[None], TRI[None])
    assert s0[0] == pytest.approx(ref, rel=1e-6)
    assert abs(sg[0, 2]) < 1e-12  # principal value: no normal component in the plane


def test_point_on_edge_line_outside_segment_is_finite_and_continuous():
    # collinear with edge 0-1 but beyond vertex 1
    e = TRI[1] - TRI[0]
    r = TRI[0] + 1.7 * e
    s0, s1, sg = static_potentials(r[None], TRI[None])
    nudge = np.cross(e, [0, 0, 1.0])
    s0b, _, sgb = static_potentials((r + 1e-13 * nudge)[None], TRI[None])
    assert np.all(np.isfinite(sg))
    np.testing.assert_allclose(sg, sgb, rtol=1e-9)
    assert s0[0] == pytest.approx(s0b[0], rel=1e-12)


def test_translation_invariance():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-1, 2, (50, 3))
    pts[:10, 2] = 0.0
    pts[10, :] = TRI[0] + 1.5 * (TRI[1] - TRI[0])
    shift = np.array([0.0270, -0.0135, 0.0])
    a = static_potentials(pts, np.repeat(TRI[None], 50, 0))
    b = static_potentials(pts + shift, np.repeat(TRI[None] + shift, 50, 0))
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12)
    np.testing.assert_allclose(a[1] + a[0][:, None] * shift, b[1], rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(a[2], b[2], rtol=1e-11, atol=1e-12)
