import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitlab.errors import DegeneratePartitionError, ResourceError, ValidationError
from eitlab.geometry import (build_disk_mesh, build_pixel_partition, build_ring_partition,
                             check_mesh, full_boundary, make_boundary_part, make_electrodes,
                             read_mesh, reachable_from_boundary, write_mesh)


@settings(max_examples=15, deadline=None)
@given(h=st.floats(0.07, 0.4), radius=st.floats(0.5, 2.0), mult=st.sampled_from([1, 4, 8, 16]))
def test_disk_mesh_is_valid(h, radius, mult):
    m = build_disk_mesh(radius, h * radius, boundary_multiple=mult)
    check_mesh(m)
    assert np.all(m.signed_areas > 0)
    assert m.n_boundary % mult == 0
    assert m.h <= 1.5 * h * radius
    assert np.allclose(np.linalg.norm(m.vertices[m.boundary], axis=1), radius, rtol=1e-12)


def test_area_and_perimeter_converge_quadratically():
    errs, hs = [], []
    for h in (0.2, 0.1, 0.05):
        m = build_disk_mesh(1.0, h)
        errs.append(abs(m.areas.sum() - math.pi))
        hs.append(m.h)
        assert m.perimeter < 2 * math.pi
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope > 1.7


def test_refinement_quadruples_triangles():
    n = [build_disk_mesh(1.0, h).n_triangles for h in (0.1, 0.05, 0.025)]
    assert 3.6 < n[1] / n[0] < 4.4
    assert 3.6 < n[2] / n[1] < 4.4


def test_mesh_has_quarter_turn_symmetry(mesh):
    rot = mesh.vertices @ np.array([[0.0, 1.0], [-1.0, 0.0]])
    def canon(v):
        v = np.round(v, 12) + 0.0
        return v[np.lexsort((v[:, 1], v[:, 0]))]
    assert np.array_equal(canon(mesh.vertices), canon(rot))


def test_boundary_loop_is_ccw_from_angle_zero(mesh):
    t = mesh.boundary_angles
    assert t[0] == pytest.approx(0.0, abs=1e-14)
    assert np.all(np.diff(t) > 0)
    assert mesh.boundary_edge_lengths.sum() == pytest.approx(mesh.perimeter)


def test_mesh_round_trip(tmp_path, coarse_mesh):
    write_mesh(coarse_mesh, tmp_path / "m.txt")
    m = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(m.vertices, coarse_mesh.vertices)
    assert np.array_equal(m.triangles, coarse_mesh.triangles)
    assert np.array_equal(m.boundary, coarse_mesh.boundary)
    assert m.fingerprint == coarse_mesh.fingerprint


@pytest.mark.parametrize("args", [(0.0, 0.1), (1.0, 0.0), (1.0, -1.0), (1.0, 2.0), (math.nan, 0.1)])
def test_bad_mesh_inputs(args):
    with pytest.raises(ValidationError):
        build_disk_mesh(*args)


def test_mesh_size_limit():
    with pytest.raises(ResourceError):
        build_disk_mesh(1.0, 1e-4)


def test_pixel_partition_counts(mesh):
    p = build_pixel_partition(mesh, (4, 4), 0.2)
    assert p.n_pixels == 16
    assert p.n_regions == 17
    counts = np.bincount(p.region_of_triangle, minlength=17)
    assert np.all(counts > 0)
    assert counts.sum() == mesh.n_triangles
    on_boundary = np.isin(mesh.triangles, mesh.boundary).any(axis=1)
    assert np.all(p.region_of_triangle[on_boundary] == 0)
    assert p.indicator.sum() == mesh.n_triangles


def test_dropped_corner_cells(mesh):
    p = build_pixel_partition(mesh, (8, 8), 0.2)
    assert p.n_pixels < 64
    assert len(p.cells) == p.n_pixels


def test_degenerate_partition(coarse_mesh):
    with pytest.raises(DegeneratePartitionError):
        build_pixel_partition(coarse_mesh, (30, 30), 0.2)
    with pytest.raises(ValidationError):
        build_pixel_partition(coarse_mesh, (2, 2), 1.5)


def test_ring_partition(mesh):
    rp = build_ring_partition(mesh, [0.3, 0.5])
    r = np.linalg.norm(mesh.centroids, axis=1)
    assert np.all(r[rp.triangles_of(1)] < 0.3)
    assert np.all((r[rp.triangles_of(2)] > 0.3) & (r[rp.triangles_of(2)] < 0.5))
    with pytest.raises(ValidationError):
        build_ring_partition(mesh, [0.5, 0.3])


def test_boundary_part_snaps_and_merges(mesh):
    nb = mesh.n_boundary
    part = make_boundary_part(mesh, [(0.0, math.pi / 2), (math.pi / 4, math.pi)])
    assert part.n_edges == nb // 2
    assert not part.full
    assert full_boundary(mesh).full
    wrap = make_boundary_part(mesh, [(-math.pi / 4, math.pi / 4)])
    assert wrap.n_edges == nb // 4
    assert wrap.edge_mask[0] and wrap.edge_mask[-1]
    with pytest.raises(ValidationError):
        make_boundary_part(mesh, [])


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0, 2 * math.pi), w=st.floats(0.2, 3.0))
def test_boundary_part_edge_count(mesh, a, w):
    part = make_boundary_part(mesh, [(a, a + w)])
    nb = mesh.n_boundary
    assert abs(part.n_edges - w / (2 * math.pi) * nb) <= 1.0
    assert part.vertex_mask(mesh).sum() == part.n_edges - 1


def test_electrodes(mesh):
    e = make_electrodes(mesh, 16, 0.5, 0.1)
    ele, ext = e.edge_masks(), e.edge_masks(extended=True)
    assert ele.shape == (16, mesh.n_boundary)
    assert np.all(ele.sum(axis=0) <= 1)
    assert np.all(ext.sum(axis=0) == 1)
    assert np.all(ele <= ext)
    assert e.lengths(mesh).sum() == pytest.approx(0.5 * mesh.perimeter, rel=1e-3)
    assert e.lengths(mesh, extended=True).sum() == pytest.approx(mesh.perimeter)
    assert e.h_M == pytest.approx(2 * math.sin(math.pi / 16), rel=1e-12)


@pytest.mark.parametrize("M,cov", [(7, 0.5), (16, 0.0), (16, 1.0), (64, 0.3), (128, 0.5)])
def test_bad_electrodes(mesh, M, cov):
    with pytest.raises(ValidationError):
        make_electrodes(mesh, M, cov, 0.1)


def test_reachability(mesh):
    rp = build_ring_partition(mesh, [0.3, 0.5])
    sigma = full_boundary(mesh)
    shield = rp.triangles_of(2)
    reach = reachable_from_boundary(mesh, shield, sigma)
    assert not np.intersect1d(reach, rp.triangles_of(1)).size
    assert np.isin(rp.triangles_of(0), reach).all()
    everything = reachable_from_boundary(mesh, [], sigma)
    assert everything.size == mesh.n_triangles
