"""Galerkin sections of the local Neumann-to-Dirichlet operator.

Current bases live in the P1 trace space on the boundary loop: each basis
function is stored by its nodal values, so every boundary integral (loads,
Gram matrix, NtD entries) is an exact edgewise integral of piecewise linear
products.
"""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .coefficients import Conductivity, PerturbationDirection
from .errors import NumericalError, ValidationError
from .fem import (GaugedSystem, assemble_neumann_system, boundary_mass, neumann_load,
                  solve_loads, stiffness_form)
from .geometry import BoundaryPart, RegionPartition, TriMesh, full_boundary


# --------------------------------------------------------------------------
# current bases
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CurrentBasis:
    """Mean-zero boundary currents on Sigma, nodal values on the boundary loop."""

    kind: str
    values: np.ndarray
    sigma_part: BoundaryPart
    mass: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        return self.values.T @ (self.mass @ self.values)

    @property
    def name(self) -> str:
        return f"{self.kind}-{self.n}"

    def truncate(self, n: int) -> "CurrentBasis":
        if not 1 <= n <= self.n:
            raise ValidationError(f"cannot truncate a basis of size {self.n} to {n}")
        return CurrentBasis(self.kind, self.values[:, :n], self.sigma_part, self.mass)

    def means(self) -> np.ndarray:
        return np.ones(self.values.shape[0]) @ (self.mass @ self.values)


def _normalize_columns(G: np.ndarray, mass: sp.csr_matrix) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->j", G, mass @ G))
    return G / norms


def trig_basis(mesh: TriMesh, n: int) -> CurrentBasis:
    """cos(k t), sin(k t) for k = 1, 2, ... on the full boundary, unit L2 norm.

    Functions are interpolated at the boundary vertices and the (tiny)
    discrete mean is removed.
    """
    if n < 1:
        raise ValidationError("basis size must be >= 1")
    kmax = (n + 1) // 2
    if 2 * kmax >= mesh.n_boundary:
        raise ValidationError(f"{mesh.n_boundary} boundary vertices cannot resolve k={kmax}")
    t = mesh.boundary_angles
    cols = []
    for k in range(1, kmax + 1):
        cols += [np.cos(k * t), np.sin(k * t)]
    G = np.column_stack(cols[:n])
    part = full_boundary(mesh)
    mass = boundary_mass(mesh)
    w = mass @ np.ones(mesh.n_boundary)
    G = G - np.outer(np.ones(mesh.n_boundary), (w @ G) / w.sum())
    return CurrentBasis("trig", _normalize_columns(G, mass), part, mass)


def patch_basis(mesh: TriMesh, sigma_part: BoundaryPart, n: Optional[int] = None) -> CurrentBasis:
    """Differences of consecutive unit-mass boundary hats inside Sigma.

    Only loop vertices with both neighbouring edges in Sigma carry a hat, so
    every function vanishes outside Sigma.
    """
    nb = mesh.n_boundary
    vmask = sigma_part.vertex_mask(mesh)
    order = []
    for a, b in sigma_part.arcs:
        order += [v % nb for v in range(a, b + 1) if vmask[v % nb] and v % nb not in order]
    if len(order) < 2:
        raise ValidationError("Sigma too short for a patch basis")
    mass = boundary_mass(mesh, sigma_part.edge_mask)
    w = mass @ np.ones(nb)
    m = len(order) - 1
    n = m if n is None else n
    if not 1 <= n <= m:
        raise ValidationError(f"patch basis on this Sigma has at most {m} functions")
    G = np.zeros((nb, n))
    for i in range(n):
        G[order[i], i] = 1.0 / w[order[i]]
        G[order[i + 1], i] = -1.0 / w[order[i + 1]]
    return CurrentBasis("patch", _normalize_columns(G, mass), sigma_part, mass)


# --------------------------------------------------------------------------
# matrices and norms
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GalerkinMatrix:
    """``matrix[i, j] = <g_i, T g_j>`` for T = Lambda(sigma) or Lambda'(sigma) kappa."""

    matrix: np.ndarray
    basis: CurrentBasis
    kind: str
    sigma_fingerprint: str = ""

    def norm(self) -> float:
        return galerkin_op_norm(self.matrix, self.basis.gram)

    def write_csv(self, path, mesh_fingerprint: str = "") -> None:
        header = {"basis": self.basis.name, "kind": self.kind,
                  "sigma": self.sigma_fingerprint, "mesh": mesh_fingerprint}
        write_matrix_csv(path, self.matrix, header)


def write_matrix_csv(path, matrix: np.ndarray, header: dict) -> None:
    lines = [json.dumps(header, sort_keys=True)]
    lines += [",".join(repr(float(x)) for x in row) for row in np.asarray(matrix)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path) -> tuple[dict, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    return header, np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])


def pencil_eigvals(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Ascending generalized eigenvalues of the symmetric pencil (A, B)."""
    A = 0.5 * (A + A.T)
    try:
        return sla.eigh(A, B, eigvals_only=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"Gram matrix not positive definite: {exc}") from exc


def galerkin_op_norm(A: np.ndarray, B: np.ndarray) -> float:
    """Operator norm of the projected operator in the Gram geometry: max |lambda|."""
    lam = pencil_eigvals(np.asarray(A, dtype=float), np.asarray(B, dtype=float))
    return float(np.max(np.abs(lam)))


# --------------------------------------------------------------------------
# NtD model
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Fields:
    """Solved fields for one conductivity and every current of a basis."""

    system: GaugedSystem
    u: np.ndarray          # (N, n) nodal potentials
    grad: np.ndarray       # (T, 2, n) gradients per triangle
    energies: np.ndarray   # (R, n, n) region energy matrices int_region grad u_i . grad u_j


def field_gradients(mesh: TriMesh, u: np.ndarray) -> np.ndarray:
    g = mesh.shape_gradients                  # (T, 3, 2)
    uv = u[mesh.triangles]                    # (T, 3, n)
    return np.einsum("tad,tan->tdn", g, uv)


def energy_matrix(mesh: TriMesh, grad: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """int_D grad u_i . grad u_j over the triangle set D."""
    idx = np.asarray(triangles, dtype=np.int64)
    w = np.sqrt(mesh.areas[idx])[:, None, None] * grad[idx]
    W = w.reshape(-1, grad.shape[2])
    return W.T @ W


def region_energies(mesh: TriMesh, partition: RegionPartition, grad: np.ndarray) -> np.ndarray:
    return np.stack([energy_matrix(mesh, grad, partition.triangles_of(r))
                     for r in range(partition.n_regions)])


class NtDModel:
    """Continuum measurement model on a mesh, partition and current basis.

    Fields are cached per conductivity (least recently used), so repeated
    evaluations at the same sigma reuse one factorization.
    """

    kind = "continuum"

    def __init__(self, mesh: TriMesh, partition: RegionPartition, basis: CurrentBasis,
                 cache_size: int = 256):
        self.mesh = mesh
        self.partition = partition
        self.basis = basis
        self.loads = neumann_load(mesh, basis.values, basis.sigma_part)
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    @property
    def size(self) -> int:
        return self.basis.n

    def fields(self, sigma: Conductivity) -> Fields:
        key = sigma.key
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        system = assemble_neumann_system(self.mesh, self.partition, sigma)
        u = solve_loads(system, self.loads)
        grad = field_gradients(self.mesh, u)
        f = Fields(system, u, grad, region_energies(self.mesh, self.partition, grad))
        self._cache[key] = f
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return f

    # measurement and derivative as plain arrays -------------------------

    def measurement(self, sigma: Conductivity) -> np.ndarray:
        return self.loads.T @ self.fields(sigma).u

    def derivative(self, sigma: Conductivity, kappa: PerturbationDirection) -> np.ndarray:
        E = self.fields(sigma).energies
        return -np.tensordot(kappa.full, E, axes=1)

    def derivative_vsolve(self, sigma: Conductivity, kappa: PerturbationDirection) -> np.ndarray:
        """Same derivative by solving the linearized problem for each current."""
        f = self.fields(sigma)
        Kk = stiffness_form(self.mesh, kappa.full[self.partition.region_of_triangle])
        v = solve_loads(f.system, -(Kk @ f.u))
        return self.loads.T @ v

    def pencil(self, A: np.ndarray, n: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        """(A, Gram) restricted to the first ``n`` basis currents."""
        n = self.size if n is None else n
        return A[:n, :n], self.basis.gram[:n, :n]

    def norm(self, A: np.ndarray, n: Optional[int] = None) -> float:
        return galerkin_op_norm(*self.pencil(A, n))

    # spec-facing wrappers ------------------------------------------------

    def ntd_matrix(self, sigma: Conductivity) -> GalerkinMatrix:
        return GalerkinMatrix(self.measurement(sigma), self.basis, "ntd", sigma.fingerprint)

    def ntd_derivative_matrix(self, sigma: Conductivity, kappa: PerturbationDirection) -> GalerkinMatrix:
        return GalerkinMatrix(self.derivative(sigma, kappa), self.basis, "ntd-derivative",
                              sigma.fingerprint)


@dataclass(frozen=True)
class TaylorResult:
    slope: float
    steps: np.ndarray
    remainders: np.ndarray


def taylor_remainder_check(model, sigma: Conductivity, kappa: PerturbationDirection,
                           t_list: Sequence[float]) -> TaylorResult:
    """Fit the log-log slope of ``||F(sigma + t kappa) - F(sigma) - t F'(sigma) kappa||``.

    Works for any model exposing ``measurement``, ``derivative`` and ``norm``
    (continuum or CEM).
    """
    t = np.asarray(sorted(t_list, reverse=True), dtype=float)
    for s in t:
        if np.any(sigma.values + s * kappa.full <= 0):
            raise ValidationError(f"sigma + {s} kappa leaves the positive cone")
    F0 = model.measurement(sigma)
    D = model.derivative(sigma, kappa)
    r = np.array([model.norm(model.measurement(sigma.perturbed(kappa, s)) - F0 - s * D)
                  for s in t])
    if np.all(r == 0):
        return TaylorResult(float("nan"), t, r)
    slope = float(np.polyfit(np.log(t), np.log(r), 1)[0])
    return TaylorResult(slope, t, r)
