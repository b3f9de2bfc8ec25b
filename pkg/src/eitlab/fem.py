"""P1 finite element systems for the gauged Neumann problem and the CEM.

Both problems are solved through a symmetric saddle-point system with one
Lagrange multiplier row carrying the gauge (boundary mean of ``u`` for the
Neumann problem, mean of the electrode potentials for the CEM).  The
augmented matrix is factorized once with SuperLU and reused for any number of
right-hand sides.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import Conductivity
from .errors import GaugeError, NumericalError, ValidationError
from .geometry import BoundaryPart, ElectrodeConfig, RegionPartition, TriMesh


@dataclass(frozen=True, eq=False)
class FieldSolution:
    u: np.ndarray
    U: Optional[np.ndarray]
    gauge: str


@dataclass(frozen=True, eq=False)
class GaugedSystem:
    matrix: sp.csc_matrix
    n_vertices: int
    n_electrodes: int
    constraint: np.ndarray
    lu: spla.SuperLU
    fingerprint: str
    kind: str
    mesh: TriMesh
    electrodes: Optional[ElectrodeConfig] = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve the augmented system for one or many right-hand sides."""
        x = self.lu.solve(np.asarray(rhs, dtype=float))
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite solution; factorization is singular")
        return x


def stiffness_form(mesh: TriMesh, coef: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix of sum_T coef(T) int_T grad phi_i . grad phi_j (any sign)."""
    g = mesh.shape_gradients
    local = np.einsum("tad,tbd->tab", g, g) * (coef * mesh.areas)[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _coefficients(partition: RegionPartition, values) -> np.ndarray:
    v = np.asarray(getattr(values, "values", values), dtype=float)
    if v.shape != (partition.n_regions,):
        raise ValidationError(f"expected {partition.n_regions} region values, got {v.shape}")
    return v[partition.region_of_triangle]


def assemble_stiffness(
    mesh: TriMesh, partition: RegionPartition, sigma: Conductivity
) -> sp.csr_matrix:
    values = np.asarray(getattr(sigma, "values", sigma), dtype=float)
    if np.any(values <= 0):
        raise ValidationError("stiffness needs a positive conductivity")
    return stiffness_form(mesh, _coefficients(partition, values))


def boundary_mass(mesh: TriMesh, edge_mask: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """1D P1 mass matrix over the selected boundary edges, in boundary-loop indexing."""
    nb = mesh.n_boundary
    if edge_mask is None:
        edge_mask = np.ones(nb, dtype=bool)
    e = np.flatnonzero(edge_mask)
    L = mesh.boundary_edge_lengths[e]
    i, j = e, (e + 1) % nb
    rows = np.r_[i, j, i, j]
    cols = np.r_[i, j, j, i]
    vals = np.r_[L / 3, L / 3, L / 6, L / 6]
    return sp.coo_matrix((vals, (rows, cols)), shape=(nb, nb)).tocsr()


def boundary_load(mesh: TriMesh, edge_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Loop-indexed vector of int phi_v ds over the selected edges."""
    nb = mesh.n_boundary
    if edge_mask is None:
        edge_mask = np.ones(nb, dtype=bool)
    w = np.where(edge_mask, mesh.boundary_edge_lengths / 2, 0.0)
    return w + np.roll(w, 1)


def _lift(mesh: TriMesh, loop_values: np.ndarray) -> np.ndarray:
    """Scatter boundary-loop values into a vertex-indexed array."""
    out = np.zeros((mesh.n_vertices,) + loop_values.shape[1:])
    out[mesh.boundary] = loop_values
    return out


def _factorize(matrix: sp.spmatrix, n_vertices: int, n_electrodes: int, constraint, kind,
               mesh, electrodes=None) -> GaugedSystem:
    A = matrix.tocsc()
    A.sort_indices()
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise NumericalError(f"factorization failed: {exc}") from exc
    h = hashlib.sha256(A.data.tobytes() + A.indices.tobytes() + A.indptr.tobytes())
    return GaugedSystem(A, n_vertices, n_electrodes, constraint, lu, h.hexdigest()[:16],
                        kind, mesh, electrodes)


def assemble_neumann_system(
    mesh: TriMesh, partition: RegionPartition, sigma: Conductivity
) -> GaugedSystem:
    """Stiffness matrix bordered by the boundary-mean gauge row."""
    K = assemble_stiffness(mesh, partition, sigma)
    c = _lift(mesh, boundary_load(mesh))
    A = sp.bmat([[K, sp.csr_matrix(c[:, None])], [sp.csr_matrix(c[None, :]), None]])
    return _factorize(A, mesh.n_vertices, 0, c, "neumann", mesh)


def neumann_load(mesh: TriMesh, g: np.ndarray, sigma_part: Optional[BoundaryPart] = None) -> np.ndarray:
    """Vertex load vector(s) int_Sigma g phi_v for loop-indexed nodal ``g``."""
    mask = None if sigma_part is None else sigma_part.edge_mask
    return _lift(mesh, boundary_mass(mesh, mask) @ g)


def solve_loads(system: GaugedSystem, loads: np.ndarray) -> np.ndarray:
    """Solve for vertex loads already integrated against the hat functions."""
    n = system.n_vertices
    squeeze = loads.ndim == 1
    F = loads[:, None] if squeeze else loads
    rhs = np.zeros((system.matrix.shape[0], F.shape[1]))
    rhs[:n] = F
    x = system.solve(rhs)[:n]
    return x[:, 0] if squeeze else x


def solve_neumann(
    system: GaugedSystem, g: np.ndarray, sigma_part: Optional[BoundaryPart] = None
) -> FieldSolution:
    """Solve the Neumann problem for boundary current(s) ``g`` on Sigma.

    ``g`` holds nodal values on the boundary loop, shape (nb,) or (nb, k), and
    is taken as zero on edges outside ``sigma_part``.
    """
    if system.kind != "neumann":
        raise ValidationError("solve_neumann needs a Neumann system")
    g = np.asarray(g, dtype=float)
    F = neumann_load(system.mesh, g, sigma_part)
    total = F.sum(axis=0)
    scale = np.abs(F).sum(axis=0)
    if np.any(np.abs(total) > 1e-10 * np.maximum(scale, np.finfo(float).tiny)):
        raise GaugeError("boundary current must have zero mean on Sigma")
    return FieldSolution(solve_loads(system, F), None, "boundary-mean")


def assemble_cem_system(
    mesh: TriMesh, partition: RegionPartition, sigma: Conductivity, electrodes: ElectrodeConfig
) -> GaugedSystem:
    """Coupled vertex/electrode system with the electrode-mean gauge row."""
    if not electrodes.z > 0:
        raise ValidationError("contact impedance must be positive")
    if electrodes.n_boundary != mesh.n_boundary:
        raise ValidationError("electrodes were built for a different mesh")
    K = assemble_stiffness(mesh, partition, sigma)
    M, z = electrodes.M, electrodes.z
    masks = electrodes.edge_masks()
    P = sp.csr_matrix(
        (np.ones(mesh.n_boundary), (mesh.boundary, np.arange(mesh.n_boundary))),
        shape=(mesh.n_vertices, mesh.n_boundary),
    )
    Muu = sum(boundary_mass(mesh, masks[m]) for m in range(M)) / z
    B = np.column_stack([boundary_load(mesh, masks[m]) for m in range(M)])
    Auu = K + P @ Muu @ P.T
    AuU = sp.csr_matrix(-(P @ B) / z)
    AUU = sp.diags(electrodes.lengths(mesh) / z)
    ones = sp.csr_matrix(np.ones((1, M)))
    A = sp.bmat([
        [Auu, AuU, None],
        [AuU.T, AUU, ones.T],
        [None, ones, None],
    ])
    c = np.r_[np.zeros(mesh.n_vertices), np.ones(M)]
    return _factorize(A, mesh.n_vertices, M, c, "cem", mesh, electrodes)


def solve_cem(system: GaugedSystem, J: np.ndarray) -> FieldSolution:
    """Solve the CEM for electrode current pattern(s) ``J``, shape (M,) or (M, k)."""
    if system.kind != "cem":
        raise ValidationError("solve_cem needs a CEM system")
    J = np.asarray(J, dtype=float)
    squeeze = J.ndim == 1
    J2 = J[:, None] if squeeze else J
    M, n = system.n_electrodes, system.n_vertices
    if J2.shape[0] != M:
        raise ValidationError(f"expected {M} electrode currents")
    scale = np.maximum(np.abs(J2).max(axis=0), np.finfo(float).tiny)
    if np.any(np.abs(J2.sum(axis=0)) > 1e-12 * scale):
        raise GaugeError("electrode currents must sum to zero")
    rhs = np.zeros((system.matrix.shape[0], J2.shape[1]))
    rhs[n:n + M] = J2
    x = system.solve(rhs)
    u, U = x[:n], x[n:n + M]
    if squeeze:
        u, U = u[:, 0], U[:, 0]
    return FieldSolution(u, U, "electrode-mean")


def dump_coo(matrix: sp.spmatrix, path: str | Path) -> None:
    """Write ``row col value`` lines for debugging."""
    m = sp.coo_matrix(matrix)
    order = np.lexsort((m.col, m.row))
    with open(path, "w") as fh:
        for r, c, v in zip(m.row[order], m.col[order], m.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")
