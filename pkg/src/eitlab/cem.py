"""Complete electrode model: R_M(sigma), its derivative and the coupling to
continuum boundary currents.

Matrices act on mean-zero electrode vectors.  Column ``j`` of the stored
``M x M`` representation is the response to the injection pattern
``e_j - 1/M``; for mean-zero ``J`` the product ``R @ J`` is then the response
to ``J`` and all row and column sums vanish.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .coefficients import Conductivity, PerturbationDirection
from .continuum import (CurrentBasis, field_gradients, galerkin_op_norm, pencil_eigvals,
                        region_energies, write_matrix_csv)
from .errors import ValidationError
from .fem import GaugedSystem, assemble_cem_system, boundary_load, boundary_mass, stiffness_form
from .geometry import ElectrodeConfig, RegionPartition, TriMesh


@dataclass(frozen=True, eq=False)
class CEMMatrix:
    matrix: np.ndarray
    electrodes: ElectrodeConfig
    kind: str
    sigma_fingerprint: str = ""

    def norm(self) -> float:
        return cem_op_norm(self.matrix)

    def write_csv(self, path, mesh_fingerprint: str = "") -> None:
        e = self.electrodes
        header = {"M": e.M, "z": e.z, "coverage": e.coverage, "kind": self.kind,
                  "sigma": self.sigma_fingerprint, "mesh": mesh_fingerprint}
        write_matrix_csv(path, self.matrix, header)


def mean_zero_frame(M: int) -> np.ndarray:
    """Orthonormal basis of the mean-zero subspace of R^M, shape (M, M-1)."""
    return sla.helmert(M).T


def cem_op_norm(A: np.ndarray) -> float:
    V = mean_zero_frame(A.shape[0])
    return float(np.max(np.abs(np.linalg.eigvalsh(V.T @ (0.5 * (A + A.T)) @ V))))


@dataclass(frozen=True, eq=False)
class CEMFields:
    system: GaugedSystem
    u: np.ndarray          # (N, M) interior potentials for the injection patterns
    U: np.ndarray          # (M, M) electrode potentials
    grad: np.ndarray       # (T, 2, M)
    energies: np.ndarray   # (R, M, M)


class CEMModel:
    """Electrode measurement model with a per-conductivity field cache."""

    kind = "cem"

    def __init__(self, mesh: TriMesh, partition: RegionPartition, electrodes: ElectrodeConfig,
                 cache_size: int = 256):
        if electrodes.n_boundary != mesh.n_boundary:
            raise ValidationError("electrodes were built for a different mesh")
        self.mesh = mesh
        self.partition = partition
        self.electrodes = electrodes
        M = electrodes.M
        self.currents = np.eye(M) - 1.0 / M
        self.frame = mean_zero_frame(M)
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    @property
    def size(self) -> int:
        return self.electrodes.M

    def fields(self, sigma: Conductivity) -> CEMFields:
        key = sigma.key
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        system = assemble_cem_system(self.mesh, self.partition, sigma, self.electrodes)
        n, M = self.mesh.n_vertices, self.size
        rhs = np.zeros((system.matrix.shape[0], M))
        rhs[n:n + M] = self.currents
        x = system.solve(rhs)
        u, U = x[:n], x[n:n + M]
        grad = field_gradients(self.mesh, u)
        f = CEMFields(system, u, U, grad, region_energies(self.mesh, self.partition, grad))
        self._cache[key] = f
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return f

    def measurement(self, sigma: Conductivity) -> np.ndarray:
        return self.fields(sigma).U

    def derivative(self, sigma: Conductivity, kappa: PerturbationDirection) -> np.ndarray:
        return -np.tensordot(kappa.full, self.fields(sigma).energies, axes=1)

    def derivative_vsolve(self, sigma: Conductivity, kappa: PerturbationDirection) -> np.ndarray:
        """Derivative via the linearized CEM solve for each injection pattern."""
        f = self.fields(sigma)
        n = self.mesh.n_vertices
        Kk = stiffness_form(self.mesh, kappa.full[self.partition.region_of_triangle])
        rhs = np.zeros((f.system.matrix.shape[0], self.size))
        rhs[:n] = -(Kk @ f.u)
        return f.system.solve(rhs)[n:n + self.size]

    def pencil(self, A: np.ndarray, n: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        V = self.frame
        return V.T @ A @ V, np.eye(V.shape[1])

    def norm(self, A: np.ndarray, n: Optional[int] = None) -> float:
        return cem_op_norm(A)

    def cem_matrix(self, sigma: Conductivity) -> CEMMatrix:
        return CEMMatrix(self.measurement(sigma), self.electrodes, "measurement", sigma.fingerprint)

    def cem_derivative_matrix(self, sigma: Conductivity, kappa: PerturbationDirection) -> CEMMatrix:
        return CEMMatrix(self.derivative(sigma, kappa), self.electrodes, "derivative",
                         sigma.fingerprint)


# --------------------------------------------------------------------------
# coupling to continuum currents
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CouplingOperators:
    """Electrode/boundary coupling in the reference basis ``[1, g_1, ..., g_n]``.

    Q maps electrode vectors to L2-projection coefficients of
    ``sum_m J_m chi(extended electrode m)``; Q_star integrates over the
    extended electrodes; P averages over the electrodes; L removes the mean.
    """

    Q: np.ndarray        # (n+1, M)
    Q_star: np.ndarray   # (M, n+1)
    P: np.ndarray        # (M, n+1)
    L: np.ndarray        # (n+1, n+1)
    gram: np.ndarray     # (n+1, n+1)
    perimeter: float

    @property
    def Q_star_currents(self) -> np.ndarray:
        """Q_star restricted to the mean-zero currents (drops the constant)."""
        return self.Q_star[:, 1:]


def coupling_operators(mesh: TriMesh, electrodes: ElectrodeConfig,
                       basis: CurrentBasis) -> CouplingOperators:
    if not basis.sigma_part.full:
        raise ValidationError("electrode coupling needs a full-boundary basis")
    nb = mesh.n_boundary
    G = np.column_stack([np.ones(nb), basis.values])
    mass = boundary_mass(mesh)
    gram = G.T @ (mass @ G)
    ext = electrodes.edge_masks(extended=True)
    ele = electrodes.edge_masks()
    Q_star = np.stack([boundary_load(mesh, ext[m]) @ G for m in range(electrodes.M)])
    lengths = electrodes.lengths(mesh)
    P = np.stack([boundary_load(mesh, ele[m]) @ G for m in range(electrodes.M)]) / lengths[:, None]
    Q = sla.solve(gram, Q_star.T, assume_a="pos")
    integrals = np.ones(nb) @ (mass @ G)
    perim = mesh.perimeter
    L = np.eye(G.shape[1]) - np.outer(np.eye(G.shape[1])[0], integrals / perim)
    return CouplingOperators(Q, Q_star, P, L, gram, perim)


@dataclass(frozen=True)
class ApproxResult:
    error: float
    identity_residual: float
    h_M: float


def discrepancy_matrix(cont_model, cem_model: CEMModel, ops: CouplingOperators,
                       sigma: Conductivity, kappa: PerturbationDirection) -> np.ndarray:
    """Galerkin matrix of Lambda'(sigma)kappa - L Q (R'(sigma)kappa) Q* on the basis."""
    A = cont_model.derivative(sigma, kappa)
    D = cem_model.derivative(sigma, kappa)
    Qs = ops.Q_star_currents
    return A - Qs.T @ D @ Qs


def approx_error(cont_model, cem_model: CEMModel, sigma: Conductivity,
                 kappa: PerturbationDirection, n_probe: int = 64, seed: int = 0) -> ApproxResult:
    """Operator-norm discrepancy between linearized continuum and CEM data.

    Also evaluates ``max |<L Q R' Q* g, g> - <R' Q* g, Q* g>_M|`` over
    ``n_probe`` random unit currents ``g``, computing the left side through
    the explicit Q and L matrices.
    """
    basis = cont_model.basis
    ops = coupling_operators(cont_model.mesh, cem_model.electrodes, basis)
    delta = discrepancy_matrix(cont_model, cem_model, ops, sigma, kappa)
    err = galerkin_op_norm(delta, basis.gram)

    D = cem_model.derivative(sigma, kappa)
    rng = np.random.Generator(np.random.Philox(seed))
    X = rng.standard_normal((basis.n, n_probe))
    X /= np.sqrt(np.einsum("ij,ij->j", X, basis.gram @ X))
    Xr = np.vstack([np.zeros(n_probe), X])
    J = ops.Q_star @ Xr
    lhs = np.einsum("ij,ij->j", Xr, ops.gram @ (ops.L @ (ops.Q @ (D @ J))))
    rhs = np.einsum("ij,ij->j", J, D @ J)
    return ApproxResult(err, float(np.max(np.abs(lhs - rhs))), cem_model.electrodes.h_M)


def q_star_bound(ops: CouplingOperators) -> float:
    """Largest ``||Q* g||^2 / ||g||^2`` over the reference span."""
    return float(pencil_eigvals(ops.Q_star.T @ ops.Q_star, ops.gram)[-1])
