import numpy as np
import pytest

from emsurf.array import PlaneWave
from emsurf.kernels.assembly import C0, ETA0, Medium, assemble_region_block, basis_samples
from emsurf.mesh import build_rwg, icosphere
from emsurf.post import (CSV_HEADER, CurrentSources, DirectivityError, FarFieldCut, ProbeError,
                         RadiatingSurface, SphereGrid, compute_directivity, far_field_cut,
                         null_depth_db, point_triangle_distance, probe_near_field,
                         radiate_far_field, surface_from_basis)


def z_dipole(moment=1.0):
    w = np.array([[0.0, 0.0, moment]], complex)
    return CurrentSources(np.zeros((1, 3)), w, np.zeros((0, 3)), np.zeros((0, 3), complex))


def test_dipole_far_field_closed_form():
    # E_theta = j k eta0 I l sin(theta) / (4 pi) for a z-directed element at the origin
    k = 3.0
    th = np.linspace(0.1, 3.0, 7)
    et, ep = radiate_far_field(z_dipole(), th, 0.4, k)
    np.testing.assert_allclose(et, 1j * k * ETA0 * np.sin(th) / (4 * np.pi), rtol=1e-13)
    np.testing.assert_allclose(ep, 0.0, atol=1e-12)


def test_magnetic_dipole_far_field_is_dual():
    # m = M / eta0 along z radiates E_phi = -j k eta0 m sin(theta) / (4 pi)
    k = 2.0
    src = CurrentSources(np.zeros((0, 3)), np.zeros((0, 3), complex), np.zeros((1, 3)),
                         np.array([[0.0, 0.0, 1.0]], complex))
    th = np.linspace(0.2, 2.9, 5)
    et, ep = radiate_far_field(src, th, 1.0, k)
    np.testing.assert_allclose(ep, -1j * k * ETA0 * np.sin(th) / (4 * np.pi), rtol=1e-13)
    np.testing.assert_allclose(et, 0.0, atol=1e-12)


@pytest.mark.parametrize("order", [4, 10, 25])
def test_sphere_grid_integrates_polynomials(order):
    g = SphereGrid.create(order)
    assert np.sum(g.weights) == pytest.approx(4 * np.pi, rel=1e-13)
    f = np.cos(g.theta) ** 2 * np.cos(g.phi) ** 2
    assert np.sum(f * g.weights) == pytest.approx(2 * np.pi / 3, rel=1e-12)


def test_directivity_of_short_dipole():
    g = SphereGrid.create(12)
    et, ep = radiate_far_field(z_dipole(), g.theta, g.phi, 1.0)
    D, prad = compute_directivity(et, ep, g.weights)
    assert np.sum(D * g.weights) == pytest.approx(4 * np.pi, rel=1e-12)
    # radiated power of a Hertzian dipole: eta0 k^2 (I l)^2 / (12 pi)
    assert prad == pytest.approx(ETA0 * 1.0 / (12 * np.pi), rel=1e-12)
    with pytest.raises(DirectivityError):
        compute_directivity(0 * et, 0 * ep, g.weights)


def test_cut_negative_theta_and_csv(tmp_path):
    k = 1.0
    src = z_dipole()
    th = np.linspace(-90, 90, 7)
    cut = far_field_cut(src, k, 0.0, th, ETA0 / (12 * np.pi))
    # signed-theta frame: the z-dipole field is odd across the axis
    np.testing.assert_allclose(cut.e_theta[:3], -cut.e_theta[6:3:-1], atol=1e-12)
    assert cut.directivity_dbi[3] == -400.0  # axial null
    assert cut.directivity_dbi[0] == pytest.approx(10 * np.log10(1.5), abs=1e-9)
    path = tmp_path / "cut.csv"
    cut.write(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == CSV_HEADER and len(lines) == 8
    assert lines[1].split(",")[0] == "-90.000000"
    with pytest.raises(ValueError):
        FarFieldCut(0.0, np.array([1.0, 0.0]), np.zeros(2), np.zeros(2), np.zeros(2))


def test_point_triangle_distance():
    tri = np.array([[[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]])
    pts = np.array([[0.2, 0.2, 0.5], [2.0, 0.0, 0.0], [-1.0, -1.0, 0.0], [1.0, 1.0, 0.0]])
    d = point_triangle_distance(pts, tri)[:, 0]
    np.testing.assert_allclose(d, [0.5, 1.0, np.sqrt(2), np.sqrt(0.5)], atol=1e-14)


def test_null_depth():
    Ei = np.array([[1.0, 0, 0], [0, 2.0, 0]])
    np.testing.assert_allclose(null_depth_db(0.01 * Ei, Ei), [-40.0, -40.0])


def test_probe_rejects_points_near_sources():
    surf = RadiatingSurface(np.array([[[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]]),
                            np.ones((1, 3), complex), np.zeros((1, 3), complex))
    with pytest.raises(ProbeError):
        probe_near_field(surf, [[0.2, 0.2, 0.01]], 1.0, 2 * np.pi)


def test_equivalent_currents_null_the_interior_of_a_dielectric_sphere():
    # Love currents on the outer side: radiated field cancels the incident field inside
    k0, eps = 1.0, 4.0
    f = k0 * C0 / (2 * np.pi)
    mesh = icosphere(1.0, 2)
    outer, inner = build_rwg(mesh, region=0), build_rwg(mesh, region=1)
    Z = (assemble_region_block(outer, Medium(1.0, f)).matrix
         + assemble_region_block(inner, Medium(eps, f)).matrix)
    s = basis_samples(outer, 4)
    pw = PlaneWave()
    E, H = pw.fields(s.points, k0)
    x = np.linalg.solve(Z, np.concatenate([s.test(E) / ETA0, -s.test(H)]))
    n = len(outer)
    surf = surface_from_basis(outer, x[:n], x[n:], np.arange(n))
    pts = np.array([[0.0, 0, 0], [0.3, 0, 0], [0, 0.4, 0.2], [0, 0, -0.5]])
    Er, Hr = probe_near_field(surf, pts, k0, 2 * np.pi)
    Ei, Hi = pw.fields(pts, k0)
    assert null_depth_db(Er + Ei, Ei).max() < -50
    assert null_depth_db(Hr + Hi, Hi).max() < -50
