import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitlab.cem import (CEMModel, approx_error, cem_op_norm, coupling_operators, mean_zero_frame,
                        q_star_bound)
from eitlab.coefficients import Conductivity, PerturbationDirection
from eitlab.continuum import (NtDModel, patch_basis, read_matrix_csv, taylor_remainder_check,
                              trig_basis)
from eitlab.errors import ValidationError
from eitlab.fem import assemble_cem_system, solve_cem
from eitlab.geometry import build_pixel_partition, make_boundary_part, make_electrodes

from oracles import loglog_slope


def test_mean_zero_frame():
    V = mean_zero_frame(6)
    np.testing.assert_allclose(V.T @ V, np.eye(5), atol=1e-14)
    np.testing.assert_allclose(V.sum(axis=0), 0, atol=1e-14)


def test_resistance_matrix_structure(coarse_cem):
    s = Conductivity.from_pixels(1.0, [0.6, 1.7, 1.2, 0.9])
    R = coarse_cem.measurement(s)
    assert np.abs(R - R.T).max() < 1e-13 * np.abs(R).max()
    assert np.abs(R.sum(axis=0)).max() < 1e-13 * np.abs(R).max()
    V = coarse_cem.frame
    assert np.linalg.eigvalsh(V.T @ R @ V).min() > 0
    assert coarse_cem.norm(R) == pytest.approx(cem_op_norm(R))


def test_columns_match_direct_solves(coarse_mesh, coarse_partition, coarse_cem):
    s = Conductivity.from_pixels(1.0, [0.6, 1.7, 1.2, 0.9])
    R = coarse_cem.measurement(s)
    system = assemble_cem_system(coarse_mesh, coarse_partition, s, coarse_cem.electrodes)
    J = np.array([1.0, -1.0, 0, 0, 0.5, 0, -0.5, 0])
    np.testing.assert_allclose(R @ J, solve_cem(system, J).U, atol=1e-13)


def test_cem_derivative(coarse_cem, rng):
    for _ in range(3):
        s = Conductivity.from_pixels(1.0, rng.uniform(0.5, 2, 4))
        k = PerturbationDirection(rng.uniform(-1, 1, 4))
        a = coarse_cem.derivative(s, k)
        b = coarse_cem.derivative_vsolve(s, k)
        assert np.abs(a - b).max() <= 1e-10 * np.abs(a).max()
    r = taylor_remainder_check(coarse_cem, s, k, [1e-1, 3e-2, 1e-2, 3e-3])
    assert 1.8 <= r.slope <= 2.2


def test_cem_csv(tmp_path, coarse_cem):
    s = Conductivity.constant(1.0, 4)
    cm = coarse_cem.cem_matrix(s)
    cm.write_csv(tmp_path / "r.csv", "m")
    header, R = read_matrix_csv(tmp_path / "r.csv")
    assert header["M"] == 8 and header["kind"] == "measurement"
    assert np.array_equal(R, cm.matrix)
    dm = coarse_cem.cem_derivative_matrix(s, PerturbationDirection([1.0, 0, 0, 0]))
    assert dm.norm() > 0


@settings(max_examples=10, deadline=None)
@given(scale=st.floats(0.3, 3.0))
def test_scaling_with_contact_impedance(coarse_mesh, coarse_partition, scale):
    # R(s sigma, z / s) = R(sigma, z) / s
    e1 = make_electrodes(coarse_mesh, 8, 0.5, 0.1)
    e2 = make_electrodes(coarse_mesh, 8, 0.5, 0.1 / scale)
    s = Conductivity.from_pixels(1.0, [0.6, 1.7, 1.2, 0.9])
    R1 = CEMModel(coarse_mesh, coarse_partition, e1).measurement(s)
    R2 = CEMModel(coarse_mesh, coarse_partition, e2).measurement(s.scaled(scale))
    np.testing.assert_allclose(R2 * scale, R1, rtol=1e-9, atol=1e-13)


def test_coupling_operators(mesh):
    e = make_electrodes(mesh, 16, 0.5, 0.1)
    basis = trig_basis(mesh, 8)
    ops = coupling_operators(mesh, e, basis)
    assert ops.Q.shape == (9, 16) and ops.Q_star.shape == (16, 9)
    # Q* of the constant gives the extended electrode lengths
    np.testing.assert_allclose(ops.Q_star[:, 0], e.lengths(mesh, extended=True), rtol=1e-14)
    # P of the constant is 1 on every electrode
    np.testing.assert_allclose(ops.P[:, 0], 1.0, rtol=1e-14)
    # L kills the constant and fixes mean-zero coefficient vectors
    np.testing.assert_allclose(ops.L @ np.eye(9)[0], 0, atol=1e-15)
    # Q* g of mean-zero g sums to zero
    assert np.abs(ops.Q_star_currents.sum(axis=0)).max() < 1e-14
    assert 0 < q_star_bound(ops) <= mesh.perimeter
    with pytest.raises(ValidationError):
        coupling_operators(mesh, e, patch_basis(mesh, make_boundary_part(mesh, [(0, 1.0)])))


def test_approximation_error_decreases(mesh):
    p = build_pixel_partition(mesh, (2, 2), 0.2)
    cont = NtDModel(mesh, p, trig_basis(mesh, 16))
    s = Conductivity.from_pixels(1.0, [0.7, 1.3, 1.8, 1.1])
    k = PerturbationDirection([1.0, -0.4, 0.2, -0.9])
    hs, errs = [], []
    for M in (8, 16, 32):
        r = approx_error(cont, CEMModel(mesh, p, make_electrodes(mesh, M, 0.5, 0.1)), s, k)
        assert r.identity_residual <= 1e-10
        hs.append(r.h_M)
        errs.append(r.error)
    assert errs[0] > errs[1] > errs[2]
    assert loglog_slope(hs, errs) >= 0.8
