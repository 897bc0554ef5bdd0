import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emsurf.mesh import (EXTERIOR, GeometryError, MatchingError, MeshError,
                         SurfaceKind, build_rwg, dump_mesh, generate_unit_cell, icosphere,
                         load_mesh, load_msh22, match_bases, merge_vertices, read_mesh,
                         rectangle_plate, wall_fractions, write_mesh)

CELL = dict(width=13.5e-3, layer_heights=[0.762e-3], permittivities=[3.66],
            mesh_length_patch=2.7e-3, mesh_length_box=3.375e-3, box_height=8e-3)


def make_cell(patch=5.4e-3, **kw):
    args = dict(CELL, **kw)
    return generate_unit_cell(args.pop("width"), args.pop("layer_heights"),
                              args.pop("permittivities"), patch, **args)


def test_unit_cell_regions_are_closed(cell_geometry):
    mesh = cell_geometry.mesh
    assert sorted(mesh.regions) == [EXTERIOR, 1, 2]
    for r in (1, 2):
        sel = (mesh.front == r) | (mesh.back == r)
        t = mesh.triangles[sel]
        edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        assert np.all(counts == 2), f"region {r} is not closed"
    lo, hi = mesh.vertices.min(0), mesh.vertices.max(0)
    np.testing.assert_allclose(lo, 0.0, atol=1e-15)
    np.testing.assert_allclose(hi, [13.5e-3, 13.5e-3, 8e-3])


def test_box_identical_across_patch_widths(cell_geometry):
    other = make_cell(patch=8.1e-3)
    assert other.seq_digest() == cell_geometry.seq_digest()
    assert other.mesh.digest() != cell_geometry.mesh.digest()


def test_patch_is_pec_and_ground_tagged(cell_geometry):
    kinds = set(cell_geometry.mesh.kinds.tolist())
    assert {SurfaceKind.PEC, SurfaceKind.GROUND_PLANE, SurfaceKind.FICTITIOUS_FACE} <= kinds


@pytest.mark.parametrize("bad", [dict(patch=20e-3), dict(grading=1.0), dict(box_height=0.5e-3),
                                 dict(mesh_length_box=-1.0), dict(permittivities=[3.0, 2.0])])
def test_invalid_geometry(bad):
    patch = bad.pop("patch", 5.4e-3)
    with pytest.raises(GeometryError):
        make_cell(patch=patch, **bad)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 40), g=st.floats(0.0, 0.99))
def test_wall_fractions_monotone(n, g):
    f = wall_fractions(n, g)
    assert f[0] == 0.0 and f[-1] == pytest.approx(1.0)
    assert np.all(np.diff(f) > 0)
    np.testing.assert_allclose(f + f[::-1], 1.0, atol=1e-14)  # symmetric about the middle


def test_text_round_trip(tmp_path, cell_geometry):
    path = tmp_path / "cell.emesh"
    write_mesh(path, cell_geometry.mesh)
    back = read_mesh(path)
    np.testing.assert_array_equal(back.triangles, cell_geometry.mesh.triangles)
    np.testing.assert_allclose(back.vertices, cell_geometry.mesh.vertices, rtol=0, atol=0)
    for name in ("kinds", "face_ids", "front", "back"):
        np.testing.assert_array_equal(getattr(back, name), getattr(cell_geometry.mesh, name))


def test_load_mesh_errors():
    with pytest.raises(MeshError, match="line 1"):
        load_mesh("mesh 2\n")
    text = dump_mesh(rectangle_plate(1, 1, 1, 1)).replace("t 0 3 1", "t 0 3 9")
    with pytest.raises(MeshError):
        load_mesh(text)


MSH = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
$EndNodes
$Elements
3
1 15 2 0 1 1
2 2 2 7 1 1 2 3
3 2 2 7 1 1 3 4
$EndElements
"""


def test_msh22_import():
    mesh = load_msh22(MSH, {7: ("PEC", -1, 1, 0)})
    assert mesh.ntri == 2 and np.all(mesh.kinds == SurfaceKind.PEC)
    with pytest.raises(MeshError, match="physical tag"):
        load_msh22(MSH, {})


@pytest.mark.parametrize("level", [0, 1, 2])
def test_rwg_count_on_closed_surface(level):
    mesh = icosphere(1.0, level)
    basis = build_rwg(mesh, region=0)
    assert len(basis) == 3 * mesh.ntri // 2


def test_merge_vertices():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 0, 1e-14], [1, 1, 0]])
    t = np.array([[0, 1, 2], [3, 4, 2]])
    vm, tm = merge_vertices(v, t, tol=1e-12)
    assert len(vm) == 4 and tm[1, 0] == tm[0, 1]


def test_opposite_box_faces_match(cell_geometry):
    mesh = cell_geometry.mesh
    ext = build_rwg(mesh, region=EXTERIOR)
    mid = ext.midpoints
    on_lo = np.nonzero(np.abs(mid[:, 0]) < 1e-12)[0]
    on_hi = np.nonzero(np.abs(mid[:, 0] - 13.5e-3) < 1e-12)[0]
    # restrict to edges lying in the face planes
    e = mesh.vertices[ext.edges]
    on_lo = on_lo[np.all(np.abs(e[on_lo, :, 0]) < 1e-12, axis=1)]
    on_hi = on_hi[np.all(np.abs(e[on_hi, :, 0] - 13.5e-3) < 1e-12, axis=1)]
    table = match_bases(ext, ext, (13.5e-3, 0, 0), restrict_a=on_lo, restrict_b=on_hi)
    assert len(table) == len(on_lo) > 0
    assert set(np.abs(table.signs).tolist()) == {1.0}
    with pytest.raises(MatchingError):
        match_bases(ext, ext, (1e-3, 0, 0), restrict_a=on_lo, restrict_b=on_hi)
