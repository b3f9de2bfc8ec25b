"""Disk meshes, pixel partitions, boundary parts and electrode families.

The disk is triangulated ring by ring.  Ring ``k`` sits at radius ``k R / K``
and carries a vertex count that is a multiple of ``symmetry``, all rings start
at angle zero, and neighbouring rings are stitched with an exact integer
angle comparison.  The mesh is therefore invariant under rotation by
``2 pi / symmetry`` up to floating point rounding of the coordinates, which
the symmetry-based tests rely on.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DegeneratePartitionError, ResourceError, ValidationError

MAX_TRIANGLES = 2_000_000


# --------------------------------------------------------------------------
# mesh
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangulation of a disk.

    ``boundary`` lists the boundary vertices counter-clockwise, starting at
    angle zero; boundary edge ``e`` joins ``boundary[e]`` and
    ``boundary[(e + 1) % nb]``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    radius: float

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """Constant gradients of the three P1 hat functions, shape (T, 3, 2)."""
        p = self.vertices[self.triangles]
        two_a = 2.0 * self.signed_areas
        # grad phi_a = rot90(p_c - p_b) / (2A) for (a, b, c) cyclic
        grads = np.empty((self.n_triangles, 3, 2))
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            d = p[:, c] - p[:, b]
            grads[:, a, 0] = -d[:, 1] / two_a
            grads[:, a, 1] = d[:, 0] / two_a
        return grads

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges (E, 2), sorted lexicographically."""
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def _edge_triangle_incidence(self) -> sp.csr_matrix:
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.ravel()
        tri = np.repeat(np.arange(self.n_triangles), 3)
        return sp.csr_matrix(
            (np.ones(len(inv)), (inv, tri)), shape=(len(self.edges), self.n_triangles)
        )

    @cached_property
    def triangle_adjacency(self) -> sp.csr_matrix:
        """Edge-adjacency graph of the triangles (symmetric, no self loops)."""
        inc = self._edge_triangle_incidence
        adj = (inc.T @ inc).tocsr()
        adj.setdiag(0)
        adj.eliminate_zeros()
        adj.data[:] = 1.0
        return adj

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        b = self.boundary
        return np.column_stack([b, np.roll(b, -1)])

    @cached_property
    def boundary_edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.boundary_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    @property
    def perimeter(self) -> float:
        return float(self.boundary_edge_lengths.sum())

    @cached_property
    def boundary_angles(self) -> np.ndarray:
        """Polar angle of each boundary vertex in [0, 2 pi)."""
        x, y = self.vertices[self.boundary].T
        return np.mod(np.arctan2(y, x), 2 * np.pi)

    @cached_property
    def boundary_triangles(self) -> np.ndarray:
        """Index of the triangle owning each boundary edge."""
        lookup = {}
        for t, tri in enumerate(self.triangles):
            for a in range(3):
                lookup[(int(tri[a]), int(tri[(a + 1) % 3]))] = t
        return np.array([lookup[(int(i), int(j))] for i, j in self.boundary_edges])

    @cached_property
    def h(self) -> float:
        """Maximum triangle diameter (longest edge)."""
        p = self.vertices[self.edges]
        return float(np.linalg.norm(p[:, 1] - p[:, 0], axis=1).max())

    @cached_property
    def fingerprint(self) -> str:
        m = hashlib.sha256()
        for arr in (self.vertices, self.triangles, self.boundary):
            m.update(np.ascontiguousarray(arr).tobytes())
        return m.hexdigest()[:16]


def _stitch(inner: np.ndarray, outer: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate the annulus between two closed vertex rings."""
    na, nb = len(inner), len(outer)
    tris = []
    i = j = 0
    while i < na or j < nb:
        # exact comparison of the next angles (i+1)/na and (j+1)/nb
        if j == nb or (i < na and (i + 1) * nb <= (j + 1) * na):
            tris.append((inner[i % na], outer[j % nb], inner[(i + 1) % na]))
            i += 1
        else:
            tris.append((inner[i % na], outer[j % nb], outer[(j + 1) % nb]))
            j += 1
    return tris


def build_disk_mesh(
    radius: float,
    h_target: float,
    boundary_multiple: int = 1,
    symmetry: int = 4,
) -> TriMesh:
    """Triangulate the disk of given radius with mesh size about ``h_target``.

    Parameters
    ----------
    radius, h_target : float
        Disk radius and target triangle size, ``0 < h_target < radius``.
    boundary_multiple : int
        The number of boundary vertices is rounded up to a multiple of this,
        so that electrode endpoints can be placed exactly on vertices.
    symmetry : int
        Every ring's vertex count is a multiple of ``symmetry``; the mesh is
        invariant under rotation by ``2 pi / symmetry``.
    """
    if not radius > 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    if not 0 < h_target < radius:
        raise ValidationError(f"need 0 < h_target < radius, got {h_target}")
    if boundary_multiple < 1 or symmetry < 1:
        raise ValidationError("boundary_multiple and symmetry must be >= 1")

    n_rings = math.ceil(radius / h_target - 1e-9)
    est = 2.0 * math.pi * n_rings * n_rings * (radius / n_rings) / h_target
    if est > MAX_TRIANGLES:
        raise ResourceError(f"about {est:.3g} triangles requested, budget is {MAX_TRIANGLES}")

    bstep = math.lcm(symmetry, boundary_multiple)
    counts = []
    for k in range(1, n_rings + 1):
        r = radius * k / n_rings
        step = bstep if k == n_rings else symmetry
        counts.append(step * max(1, math.ceil(2 * math.pi * r / h_target / step - 1e-9)))
    if counts[-1] > 4 * MAX_TRIANGLES:
        raise ResourceError("boundary resolution exceeds the memory budget")

    verts = [np.zeros((1, 2))]
    rings = []
    start = 1
    for k, n in enumerate(counts, start=1):
        r = radius * k / n_rings
        t = 2 * np.pi * np.arange(n) / n
        verts.append(np.column_stack([r * np.cos(t), r * np.sin(t)]))
        rings.append(np.arange(start, start + n))
        start += n
    vertices = np.vstack(verts)

    ring1 = rings[0]
    tris = [(0, int(ring1[j]), int(ring1[(j + 1) % len(ring1)])) for j in range(len(ring1))]
    for inner, outer in zip(rings[:-1], rings[1:]):
        tris.extend(_stitch(inner, outer))
    triangles = np.array(tris, dtype=np.int64)
    return TriMesh(vertices, triangles, rings[-1].astype(np.int64), float(radius))


def check_mesh(mesh: TriMesh, tol: float = 1e-12) -> None:
    """Raise ValidationError unless the TriMesh invariants hold."""
    if np.any(mesh.signed_areas <= 0):
        raise ValidationError("mesh has non-positive triangle orientation")
    counts = np.asarray(mesh._edge_triangle_incidence.sum(axis=1)).ravel()
    if np.any(counts > 2):
        raise ValidationError("non-conforming mesh: edge shared by more than two triangles")
    single = {tuple(e) for e in mesh.edges[counts == 1]}
    loop = {tuple(sorted(e)) for e in mesh.boundary_edges.tolist()}
    if single != loop:
        raise ValidationError("boundary loop does not match the mesh boundary edges")
    if len(set(mesh.boundary.tolist())) != mesh.n_boundary:
        raise ValidationError("boundary loop visits a vertex twice")
    r = np.linalg.norm(mesh.vertices[mesh.boundary], axis=1)
    if np.max(np.abs(r - mesh.radius)) > tol * mesh.radius:
        raise ValidationError("boundary vertex off the circle")


def write_mesh(mesh: TriMesh, path: str | Path) -> None:
    """Write the plain-text EITMESH format (byte-reproducible)."""
    lines = ["EITMESH 1", str(mesh.n_vertices)]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(str(mesh.n_triangles))
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    lines.append(str(mesh.n_boundary))
    lines += [str(v) for v in mesh.boundary.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path: str | Path) -> TriMesh:
    tokens = Path(path).read_text().split("\n")
    if tokens[0].strip() != "EITMESH 1":
        raise ValidationError(f"{path}: not an EITMESH 1 file")
    pos = 1
    nv = int(tokens[pos]); pos += 1
    vertices = np.array([[float(s) for s in tokens[pos + i].split()] for i in range(nv)])
    pos += nv
    nt = int(tokens[pos]); pos += 1
    triangles = np.array([[int(s) for s in tokens[pos + i].split()] for i in range(nt)], dtype=np.int64)
    pos += nt
    nb = int(tokens[pos]); pos += 1
    boundary = np.array([int(tokens[pos + i]) for i in range(nb)], dtype=np.int64)
    radius = float(np.linalg.norm(vertices[boundary], axis=1).max())
    mesh = TriMesh(vertices, triangles, boundary, radius)
    check_mesh(mesh)
    return mesh


# --------------------------------------------------------------------------
# region partitions
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegionPartition:
    """Triangle-to-region map; region 0 is the boundary collar."""

    region_of_triangle: np.ndarray
    n_pixels: int
    collar_width: float
    cells: tuple = ()

    @property
    def n_regions(self) -> int:
        return self.n_pixels + 1

    def triangles_of(self, region: int) -> np.ndarray:
        return np.flatnonzero(self.region_of_triangle == region)

    @cached_property
    def indicator(self) -> sp.csr_matrix:
        """Sparse (n_regions, T) 0/1 matrix."""
        t = len(self.region_of_triangle)
        return sp.csr_matrix(
            (np.ones(t), (self.region_of_triangle, np.arange(t))), shape=(self.n_regions, t)
        )


def _touches_boundary(mesh: TriMesh) -> np.ndarray:
    on_b = np.zeros(mesh.n_vertices, dtype=bool)
    on_b[mesh.boundary] = True
    return on_b[mesh.triangles].any(axis=1)


def _check_connected(mesh: TriMesh, region_of_triangle: np.ndarray, n_regions: int) -> None:
    adj = mesh.triangle_adjacency
    for r in range(n_regions):
        idx = np.flatnonzero(region_of_triangle == r)
        if idx.size == 0:
            raise DegeneratePartitionError(f"region {r} has no triangles")
        ncomp, _ = connected_components(adj[idx][:, idx], directed=False)
        if ncomp != 1:
            raise DegeneratePartitionError(f"region {r} splits into {ncomp} components")


def build_pixel_partition(
    mesh: TriMesh, grid: tuple[int, int], collar_width: float
) -> RegionPartition:
    """Assign triangles to a ``px x py`` pixel grid inside the collar.

    The grid covers the bounding square of the inner disk of radius
    ``R - collar_width``; cells that do not meet the inner disk are dropped.
    Triangles whose centroid lies outside the inner disk, or that touch the
    boundary, form the collar (region 0).  Pixels are numbered 1..P row-major
    (y outer, x inner) over the remaining cells.
    """
    px, py = grid
    if px < 1 or py < 1:
        raise ValidationError("grid dimensions must be >= 1")
    rho = mesh.radius - collar_width
    if not 0 < collar_width < mesh.radius:
        raise ValidationError("collar width must lie in (0, radius)")

    dx, dy = 2 * rho / px, 2 * rho / py
    cells = []
    cell_id = -np.ones((py, px), dtype=np.int64)
    for iy in range(py):
        for ix in range(px):
            x0, y0 = -rho + ix * dx, -rho + iy * dy
            # closest point of the cell to the origin
            cx = min(max(0.0, x0), x0 + dx)
            cy = min(max(0.0, y0), y0 + dy)
            if math.hypot(cx, cy) < rho:
                cells.append((ix, iy))
                cell_id[iy, ix] = len(cells)

    c = mesh.centroids
    region = np.zeros(mesh.n_triangles, dtype=np.int64)
    inside = (np.linalg.norm(c, axis=1) < rho) & ~_touches_boundary(mesh)
    ix = np.clip(np.floor((c[inside, 0] + rho) / dx).astype(np.int64), 0, px - 1)
    iy = np.clip(np.floor((c[inside, 1] + rho) / dy).astype(np.int64), 0, py - 1)
    region[inside] = cell_id[iy, ix]
    if np.any(region < 0):
        raise DegeneratePartitionError("triangle mapped to an inactive cell")
    _check_connected(mesh, region, len(cells) + 1)
    return RegionPartition(region, len(cells), float(collar_width), tuple(cells))


def build_ring_partition(mesh: TriMesh, radii: Sequence[float]) -> RegionPartition:
    """Concentric regions: region k (1-based) is ``radii[k-2] <= r < radii[k-1]``.

    Everything outside ``radii[-1]`` (and every boundary-touching triangle) is
    the collar.  Choose radii on mesh rings for exact interfaces.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0 or np.any(np.diff(radii) <= 0) or radii[0] <= 0 or radii[-1] >= mesh.radius:
        raise ValidationError("radii must increase strictly inside (0, R)")
    r = np.linalg.norm(mesh.centroids, axis=1)
    region = np.searchsorted(radii, r, side="right") + 1
    region[region > len(radii)] = 0
    region[_touches_boundary(mesh)] = 0
    _check_connected(mesh, region, len(radii) + 1)
    return RegionPartition(region.astype(np.int64), len(radii), float(mesh.radius - radii[-1]))


# --------------------------------------------------------------------------
# boundary parts and electrodes
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoundaryPart:
    """Union of whole boundary edges; ``arcs`` are maximal runs ``[start, stop)``
    of edge indices (``stop`` may exceed ``nb`` for a run wrapping past zero)."""

    edge_mask: np.ndarray
    arcs: tuple

    @property
    def full(self) -> bool:
        return bool(self.edge_mask.all())

    @property
    def n_edges(self) -> int:
        return int(self.edge_mask.sum())

    def angle_intervals(self, mesh: TriMesh) -> list[tuple[float, float]]:
        nb = mesh.n_boundary
        return [(2 * np.pi * a / nb, 2 * np.pi * b / nb) for a, b in self.arcs]

    def vertex_mask(self, mesh: TriMesh) -> np.ndarray:
        """Boundary-loop positions whose both adjacent edges lie in the part."""
        m = self.edge_mask
        return m & np.roll(m, 1)


def _runs(mask: np.ndarray) -> tuple:
    nb = len(mask)
    if mask.all():
        return ((0, nb),)
    # rotate so that position 0 is outside the part
    off = int(np.flatnonzero(~mask)[0])
    m = np.roll(mask, -off)
    runs, start = [], None
    for i, v in enumerate(m.tolist() + [False]):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append(((start + off) % nb, (start + off) % nb + (i - start)))
            start = None
    return tuple(sorted(runs))


def make_boundary_part(mesh: TriMesh, arcs: Iterable[tuple[float, float]]) -> BoundaryPart:
    """Boundary part from angle intervals, snapped to boundary vertices.

    Overlapping or touching intervals merge.  An interval of length >= 2 pi
    selects the whole boundary.
    """
    arcs = list(arcs)
    if not arcs:
        raise ValidationError("empty arc list")
    nb = mesh.n_boundary
    mask = np.zeros(nb, dtype=bool)
    for t0, t1 in arcs:
        if not t1 > t0:
            raise ValidationError(f"arc ({t0}, {t1}) is empty")
        i0 = int(round(t0 * nb / (2 * np.pi)))
        i1 = int(round(t1 * nb / (2 * np.pi)))
        if i1 - i0 >= nb:
            mask[:] = True
        elif i1 > i0:
            mask[np.arange(i0, i1) % nb] = True
    if not mask.any():
        raise ValidationError("arcs shorter than one boundary edge")
    return BoundaryPart(mask, _runs(mask))


def full_boundary(mesh: TriMesh) -> BoundaryPart:
    return BoundaryPart(np.ones(mesh.n_boundary, dtype=bool), ((0, mesh.n_boundary),))


@dataclass(frozen=True, eq=False)
class ElectrodeConfig:
    """Equispaced electrodes; edge ranges ``[start, stop)`` on the boundary loop."""

    M: int
    z: float
    coverage: float
    electrode_edges: np.ndarray
    extended_edges: np.ndarray
    n_boundary: int
    h_M: float

    def electrode_arcs(self) -> np.ndarray:
        return 2 * np.pi * self.electrode_edges / self.n_boundary

    def extended_arcs(self) -> np.ndarray:
        return 2 * np.pi * self.extended_edges / self.n_boundary

    def edge_masks(self, extended: bool = False) -> np.ndarray:
        """Boolean (M, nb) edge membership."""
        rng = self.extended_edges if extended else self.electrode_edges
        out = np.zeros((self.M, self.n_boundary), dtype=bool)
        for m, (a, b) in enumerate(rng):
            out[m, np.arange(a, b) % self.n_boundary] = True
        return out

    def lengths(self, mesh: TriMesh, extended: bool = False) -> np.ndarray:
        return self.edge_masks(extended).astype(float) @ mesh.boundary_edge_lengths


def make_electrodes(mesh: TriMesh, M: int, coverage: float, z: float) -> ElectrodeConfig:
    """``M`` equal extended arcs with a centred electrode of relative size ``coverage``."""
    if M < 2:
        raise ValidationError("need at least two electrodes")
    if not 0 < coverage < 1:
        raise ValidationError("coverage must lie in (0, 1)")
    if not z > 0:
        raise ValidationError("contact impedance must be positive")
    nb = mesh.n_boundary
    if nb % M:
        raise ValidationError(f"{nb} boundary edges cannot be split into {M} equal arcs")
    w = nb // M
    e = coverage * w
    if w < 2 or abs(e - round(e)) > 1e-9 or round(e) < 1 or round(e) >= w or (w - round(e)) % 2:
        raise ValidationError(
            f"boundary resolution ({w} edges per extended arc) cannot realize coverage {coverage}"
        )
    e = int(round(e))
    gap = (w - e) // 2
    ext = np.array([[m * w, (m + 1) * w] for m in range(M)], dtype=np.int64)
    ele = ext[:, :1] + np.array([[gap, gap + e]])
    p0 = mesh.vertices[mesh.boundary[ext[:, 0] % nb]]
    p1 = mesh.vertices[mesh.boundary[ext[:, 1] % nb]]
    h_M = float(np.linalg.norm(p1 - p0, axis=1).max())
    return ElectrodeConfig(M, float(z), float(coverage), ele, ext, nb, h_M)


# --------------------------------------------------------------------------
# reachability
# --------------------------------------------------------------------------

def reachable_from_boundary(
    mesh: TriMesh, blocked: Iterable[int], sigma_part: BoundaryPart
) -> np.ndarray:
    """Triangles connected to a Sigma-touching triangle avoiding ``blocked``."""
    blocked_mask = np.zeros(mesh.n_triangles, dtype=bool)
    blocked_mask[np.asarray(list(blocked), dtype=np.int64)] = True
    free = np.flatnonzero(~blocked_mask)
    if free.size == 0:
        return free
    seeds = mesh.boundary_triangles[sigma_part.edge_mask]
    seeds = seeds[~blocked_mask[seeds]]
    if seeds.size == 0:
        return np.array([], dtype=np.int64)
    adj = mesh.triangle_adjacency[free][:, free]
    _, labels = connected_components(adj, directed=False)
    local = -np.ones(mesh.n_triangles, dtype=np.int64)
    local[free] = np.arange(free.size)
    hit = np.unique(labels[local[seeds]])
    return free[np.isin(labels, hit)]
