import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitlab.coefficients import Conductivity, PerturbationDirection
from eitlab.continuum import (CurrentBasis, NtDModel, galerkin_op_norm, patch_basis, pencil_eigvals,
                              read_matrix_csv, taylor_remainder_check, trig_basis)
from eitlab.errors import NumericalError, ValidationError
from eitlab.geometry import build_disk_mesh, build_ring_partition, make_boundary_part

from oracles import (homogeneous_ntd_eigenvalue, layered_ntd_derivative_inner,
                     layered_ntd_eigenvalue)

MODES = (1, 1, 2, 2, 3, 3)


def test_trig_basis_is_orthonormal(mesh):
    b = trig_basis(mesh, 8)
    assert np.abs(b.gram - np.eye(8)).max() < 5e-3
    assert np.abs(b.means()).max() < 1e-14
    assert b.name == "trig-8"
    with pytest.raises(ValidationError):
        trig_basis(mesh, mesh.n_boundary)
    with pytest.raises(ValidationError):
        trig_basis(mesh, 0)


def test_homogeneous_ntd_diagonal(mesh, partition):
    model = NtDModel(mesh, partition, trig_basis(mesh, 6))
    A = model.measurement(Conductivity.constant(1.0, 4))
    expected = np.array([homogeneous_ntd_eigenvalue(k) for k in MODES])
    np.testing.assert_allclose(np.diag(A), expected, rtol=0.02)
    off = A - np.diag(np.diag(A))
    assert np.abs(off).max() < 1e-3
    assert np.abs(A - A.T).max() < 1e-14


@pytest.mark.parametrize("sigma_in", [0.5, 3.0])
def test_layered_disk_oracle(sigma_in):
    # refine and check the error decays like h^2
    errs, derrs, hs = [], [], []
    for h in (0.1, 0.05):
        m = build_disk_mesh(1.0, h, boundary_multiple=32)
        rp = build_ring_partition(m, [0.5])
        model = NtDModel(m, rp, trig_basis(m, 6))
        s = Conductivity([1.0, sigma_in])
        A = model.measurement(s)
        D = model.derivative(s, PerturbationDirection([1.0]))
        ex = np.array([layered_ntd_eigenvalue(k, sigma_in, 1.0, 0.5) for k in MODES])
        dx = np.array([layered_ntd_derivative_inner(k, sigma_in, 1.0, 0.5) for k in MODES])
        errs.append(np.abs(np.diag(A) / ex - 1).max())
        derrs.append(np.abs(np.diag(D) / dx - 1).max())
        hs.append(m.h)
    assert errs[-1] < 0.01 and derrs[-1] < 0.02
    assert errs[0] / errs[1] > 3.0 and derrs[0] / derrs[1] > 3.0


def test_derivative_agrees_with_linearized_solve(coarse_ntd, rng):
    for _ in range(3):
        s = Conductivity.from_pixels(1.0, rng.uniform(0.5, 2, 4))
        k = PerturbationDirection(rng.uniform(-1, 1, 4), collar=0.3)
        a = coarse_ntd.derivative(s, k)
        b = coarse_ntd.derivative_vsolve(s, k)
        assert np.abs(a - b).max() <= 1e-10 * np.abs(a).max()


def test_taylor_slope(coarse_ntd):
    s = Conductivity.from_pixels(1.0, [0.7, 1.4, 1.9, 0.6])
    k = PerturbationDirection([1.0, -0.5, 0.25, -1.0])
    r = taylor_remainder_check(coarse_ntd, s, k, [1e-1, 3e-2, 1e-2, 3e-3])
    assert 1.8 <= r.slope <= 2.2
    with pytest.raises(ValidationError):
        taylor_remainder_check(coarse_ntd, s, k, [1.0])


def test_zero_direction_taylor_is_nan(coarse_ntd):
    s = Conductivity.constant(1.0, 4)
    r = taylor_remainder_check(coarse_ntd, s, PerturbationDirection(np.zeros(4)), [0.1, 0.01])
    assert np.isnan(r.slope)


@settings(max_examples=10, deadline=None)
@given(vals=st.lists(st.floats(0.5, 2.0), min_size=4, max_size=4), scale=st.floats(0.25, 4.0))
def test_scaling_identity(coarse_ntd, vals, scale):
    s = Conductivity.from_pixels(1.0, vals)
    A = coarse_ntd.measurement(s)
    As = coarse_ntd.measurement(s.scaled(scale))
    np.testing.assert_allclose(As * scale, A, rtol=1e-9, atol=1e-12)


def test_quarter_turn_covariance(mesh, partition, rng):
    # rotating the conductivity by 90 degrees shifts the boundary data by nb/4
    c = mesh.centroids
    rot = c @ np.array([[0.0, 1.0], [-1.0, 0.0]])  # rotate by +90 degrees
    key = {tuple(np.round(p, 10) + 0.0): t for t, p in enumerate(c)}
    image = np.array([key[tuple(np.round(p, 10) + 0.0)] for p in rot])
    reg = partition.region_of_triangle
    perm = np.zeros(partition.n_regions, dtype=int)
    for t in range(mesh.n_triangles):
        perm[reg[image[t]]] = reg[t]
    vals = np.r_[1.0, rng.uniform(0.5, 2, 4)]
    s = Conductivity(vals)
    s_rot = Conductivity(vals[perm])
    nb = mesh.n_boundary
    t = mesh.boundary_angles
    g = np.cos(3 * t) + 0.5 * np.sin(t)
    shift = nb // 4
    b = trig_basis(mesh, 1)
    G = np.column_stack([g, np.roll(g, shift)])
    basis = CurrentBasis("custom", G, b.sigma_part, b.mass)
    model = NtDModel(mesh, partition, basis)
    u = model.fields(s).u
    u_rot = model.fields(s_rot).u
    tr = u[mesh.boundary, 0]
    tr_rot = u_rot[mesh.boundary, 1]
    np.testing.assert_allclose(np.roll(tr, shift), tr_rot, atol=1e-12)


def test_truncation_gives_leading_block(coarse_mesh, coarse_partition):
    full = NtDModel(coarse_mesh, coarse_partition, trig_basis(coarse_mesh, 8))
    small = NtDModel(coarse_mesh, coarse_partition, trig_basis(coarse_mesh, 8).truncate(4))
    s = Conductivity.from_pixels(1.0, [1.2, 0.8, 1.1, 1.6])
    np.testing.assert_allclose(full.measurement(s)[:4, :4], small.measurement(s), atol=1e-15)
    A, B = full.pencil(full.measurement(s), 4)
    assert A.shape == B.shape == (4, 4)


def test_patch_basis_on_arc(mesh, partition):
    arc = make_boundary_part(mesh, [(0.0, np.pi / 2)])
    b = patch_basis(mesh, arc, 10)
    assert np.all(b.values[~arc.vertex_mask(mesh)] == 0)
    assert np.abs(b.means()).max() < 1e-12
    assert np.allclose(np.diag(b.gram), 1.0)
    model = NtDModel(mesh, partition, b)
    A = model.measurement(Conductivity.constant(1.0, 4))
    assert np.linalg.eigvalsh(A).min() > 0
    with pytest.raises(ValidationError):
        patch_basis(mesh, arc, 10_000)


def test_pencil_helpers():
    B = np.diag([1.0, 4.0])
    A = np.diag([2.0, -8.0])
    assert galerkin_op_norm(A, B) == pytest.approx(2.0)
    np.testing.assert_allclose(pencil_eigvals(A, B), [-2.0, 2.0])
    with pytest.raises(NumericalError):
        pencil_eigvals(A, np.diag([1.0, -1.0]))


def test_matrix_csv_round_trip(tmp_path, coarse_ntd):
    s = Conductivity.from_pixels(1.0, [1.2, 0.8, 1.1, 1.6])
    gm = coarse_ntd.ntd_matrix(s)
    gm.write_csv(tmp_path / "a.csv", "abc")
    header, M = read_matrix_csv(tmp_path / "a.csv")
    assert np.array_equal(M, gm.matrix)
    assert header["basis"] == "trig-8" and header["mesh"] == "abc"
    assert gm.norm() == pytest.approx(galerkin_op_norm(M, coarse_ntd.basis.gram))
    dm = coarse_ntd.ntd_derivative_matrix(s, PerturbationDirection([1.0, 0, 0, 0]))
    assert dm.kind == "ntd-derivative"


def test_cache_reuses_fields(coarse_mesh, coarse_partition):
    model = NtDModel(coarse_mesh, coarse_partition, trig_basis(coarse_mesh, 4), cache_size=2)
    s = [Conductivity.constant(v, 4) for v in (1.0, 2.0, 3.0)]
    f0 = model.fields(s[0])
    assert model.fields(s[0]) is f0
    model.fields(s[1])
    model.fields(s[2])
    assert model.fields(s[0]) is not f0
