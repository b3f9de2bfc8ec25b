"""Min-max machinery behind the Lipschitz stability estimates.

Every function here takes a measurement model: :class:`~eitlab.continuum.NtDModel`
or :class:`~eitlab.cem.CEMModel`.  Both expose ``measurement``, ``derivative``,
``pencil`` and ``norm``, so the same code computes the continuum quantities
(Gram geometry on the current basis, optionally truncated to the first ``n``
currents) and the electrode quantities (Euclidean geometry on mean-zero
vectors).  Suprema over unit currents are always generalized eigenvalues.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.stats import qmc

from .cem import CEMModel, coupling_operators, discrepancy_matrix, q_star_bound
from .coefficients import Conductivity, PerturbationDirection
from .continuum import energy_matrix, galerkin_op_norm, pencil_eigvals
from .errors import ValidationError
from .geometry import RegionPartition, full_boundary, reachable_from_boundary


def _lam_max(model, A: np.ndarray, n: Optional[int] = None) -> float:
    return float(pencil_eigvals(*model.pencil(A, n))[-1])


def sup_f(model, tau1: Conductivity, tau2: Conductivity, kappa: PerturbationDirection,
          n: Optional[int] = None) -> float:
    """sup over unit currents of max(<L'(tau1)k g, g>, -<L'(tau2)k g, g>).

    The supremum of a pointwise maximum is the larger of the two suprema, each
    of which is a top generalized eigenvalue.
    """
    A1 = model.derivative(tau1, kappa)
    A2 = model.derivative(tau2, kappa)
    return max(_lam_max(model, A1, n), _lam_max(model, -A2, n))


def sup_f_cem(model: CEMModel, tau1, tau2, kappa) -> float:
    """Electrode version of :func:`sup_f` on mean-zero current vectors."""
    if not isinstance(model, CEMModel):
        raise ValidationError("sup_f_cem needs a CEMModel")
    return sup_f(model, tau1, tau2, kappa)


def sampled_sup_f(model, tau1, tau2, kappa, n_samples: int = 10_000, seed: int = 0,
                  n: Optional[int] = None) -> float:
    """Maximum of f over random unit currents (oracle for :func:`sup_f`)."""
    A1, B = model.pencil(model.derivative(tau1, kappa), n)
    A2, _ = model.pencil(model.derivative(tau2, kappa), n)
    rng = np.random.Generator(np.random.Philox(seed))
    X = rng.standard_normal((B.shape[0], n_samples))
    X /= np.sqrt(np.einsum("ij,ij->j", X, B @ X))
    q1 = np.einsum("ij,ij->j", X, A1 @ X)
    q2 = np.einsum("ij,ij->j", X, A2 @ X)
    return float(np.max(np.maximum(q1, -q2)))


# --------------------------------------------------------------------------
# monotonicity and Lipschitz chain
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GapResult:
    gap: float
    scale: float


def monotonicity_gap(model, sigma1: Conductivity, sigma2: Conductivity,
                     n: Optional[int] = None) -> GapResult:
    """Smallest eigenvalue of <(F(s1) - F(s2)) g, g> - <F'(s2)(s1 - s2) g, g>."""
    diff = model.measurement(sigma1) - model.measurement(sigma2)
    lin = model.derivative(sigma2, PerturbationDirection.between(sigma2, sigma1))
    A, B = model.pencil(diff - lin, n)
    gap = float(pencil_eigvals(A, B)[0])
    scale = max(galerkin_op_norm(*model.pencil(diff, n)), galerkin_op_norm(*model.pencil(lin, n)))
    return GapResult(gap, scale)


@dataclass(frozen=True)
class LipschitzCheck:
    ratio: float
    bound: float
    scale: float

    @property
    def holds(self) -> bool:
        return self.ratio >= self.bound - 1e-9 * self.scale


def lipschitz_lower_bound_check(model, sigma1: Conductivity, sigma2: Conductivity,
                                n: Optional[int] = None) -> LipschitzCheck:
    """``||F(s1) - F(s2)|| / ||s1 - s2||`` against sup f at the pair's own direction."""
    d = PerturbationDirection.between(sigma1, sigma2)
    dist = d.sup_norm
    if dist == 0:
        raise ValidationError("conductivities coincide")
    diff = model.measurement(sigma1) - model.measurement(sigma2)
    ratio = galerkin_op_norm(*model.pencil(diff, n)) / dist
    bound = sup_f(model, sigma1, sigma2, d.normalized(), n)
    return LipschitzCheck(ratio, bound, max(abs(ratio), abs(bound)))


# --------------------------------------------------------------------------
# stability constant search
# --------------------------------------------------------------------------

@dataclass
class SearchSpec:
    samples: int = 64
    budget: int = 200
    seed: int = 0
    keep: int = 3
    step: float = 0.25
    min_step: float = 1e-3


@dataclass
class StabilityReport:
    c_hat: float
    tau1: np.ndarray
    tau2: np.ndarray
    kappa: np.ndarray
    collar: float
    bounds: tuple
    model: str
    size: int
    samples: int
    iterations: int
    seed: int
    sup_f_values: np.ndarray
    evaluated: np.ndarray   # (n_eval, 3P): tau1 | tau2 | kappa

    def argmin(self) -> tuple[Conductivity, Conductivity, PerturbationDirection]:
        return (Conductivity.from_pixels(self.collar, self.tau1),
                Conductivity.from_pixels(self.collar, self.tau2),
                PerturbationDirection(self.kappa))

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items()}
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        d["bounds"] = list(self.bounds)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


class _Objective:
    """sup f for several nested sizes at once, recording every evaluation."""

    def __init__(self, model, collar, sizes):
        self.model, self.collar, self.sizes = model, collar, list(sizes)
        self.points: list[np.ndarray] = []
        self.values: list[np.ndarray] = []

    def __call__(self, x: np.ndarray) -> np.ndarray:
        P = len(x) // 3
        t1 = Conductivity.from_pixels(self.collar, x[:P])
        t2 = Conductivity.from_pixels(self.collar, x[P:2 * P])
        k = PerturbationDirection(x[2 * P:])
        A1 = self.model.derivative(t1, k)
        A2 = self.model.derivative(t2, k)
        v = np.array([max(_lam_max(self.model, A1, n), _lam_max(self.model, -A2, n))
                      for n in self.sizes])
        self.points.append(x.copy())
        self.values.append(v)
        return v


def _normalize_kappa(x: np.ndarray, P: int) -> np.ndarray:
    y = x.copy()
    s = np.max(np.abs(y[2 * P:]))
    if s == 0:
        y[2 * P] = 1.0
    else:
        y[2 * P:] /= s
    return y


def _descend(obj: _Objective, col: int, x0: np.ndarray, f0: float, a: float, b: float,
             spec: SearchSpec, budget: int) -> int:
    """Projected coordinate descent on [a, b]^{2P} x (sup-norm sphere)."""
    P = len(x0) // 3
    x, fx = x0.copy(), f0
    step = spec.step
    used = 0
    while used < budget and step >= spec.min_step:
        improved = False
        for i in range(3 * P):
            for sgn in (1.0, -1.0):
                if used >= budget:
                    break
                y = x.copy()
                if i < 2 * P:
                    y[i] = min(b, max(a, y[i] + sgn * step * (b - a)))
                else:
                    y[i] = min(1.0, max(-1.0, y[i] + sgn * 2 * step))
                    if np.max(np.abs(y[2 * P:])) == 0:
                        continue
                    y = _normalize_kappa(y, P)
                if np.array_equal(y, x):
                    continue
                fy = obj(y)[col]
                used += 1
                if fy < fx:
                    x, fx, improved = y, fy, True
                    break
        if not improved:
            step *= 0.5
    return used


def stability_sweep(model, bounds: tuple[float, float], sizes: Sequence[Optional[int]],
                    search: SearchSpec, collar: float = 1.0,
                    initial: Sequence[np.ndarray] = ()) -> list[StabilityReport]:
    """Stability constants for nested current spaces sharing one evaluation set.

    Every size runs its own seeded search, but all evaluated triples are
    scored at every size, so each reported constant is a minimum over the
    same finite set and nestedness of the current spaces carries over.
    ``initial`` triples (``tau1 | tau2 | kappa``) join the sample set, e.g.
    the argmin of a coarser ansatz mapped by :func:`refine_triple`.
    """
    a, b = bounds
    if not b > a > 0:
        raise ValidationError("need b > a > 0")
    if search.samples < 1:
        raise ValidationError("search needs at least one sample")
    P = model.partition.n_pixels
    if P < 1:
        raise ValidationError("ansatz needs at least one pixel")
    sizes = [model.size if s is None else int(s) for s in sizes]
    obj = _Objective(model, collar, sizes)

    sampler = qmc.LatinHypercube(d=3 * P, seed=np.random.Generator(np.random.Philox(search.seed)))
    U = sampler.random(search.samples)
    X = np.hstack([a + (b - a) * U[:, :2 * P], 2 * U[:, 2 * P:] - 1])
    for x in list(X) + [np.asarray(x, dtype=float) for x in initial]:
        if x.shape != (3 * P,):
            raise ValidationError(f"initial triples need {3 * P} entries")
        obj(_normalize_kappa(x, P))
    n_samples = len(obj.values)

    iterations = 0
    for col in range(len(sizes)):
        vals = np.array([v[col] for v in obj.values[:n_samples]])
        order = np.argsort(vals, kind="stable")[:search.keep]
        per_start = max(1, search.budget // max(1, len(order)))
        for idx in order:
            iterations += _descend(obj, col, obj.points[idx], vals[idx], a, b, search, per_start)

    pts = np.array(obj.points)
    vals = np.array(obj.values)
    reports = []
    for col, n in enumerate(sizes):
        j = int(np.argmin(vals[:, col]))
        reports.append(StabilityReport(
            c_hat=float(vals[j, col]), tau1=pts[j, :P], tau2=pts[j, P:2 * P],
            kappa=pts[j, 2 * P:], collar=float(collar), bounds=(float(a), float(b)),
            model=model.kind, size=n, samples=n_samples, iterations=iterations,
            seed=search.seed, sup_f_values=vals[:, col].copy(), evaluated=pts,
        ))
    return reports


def stability_constant(model, bounds: tuple[float, float], search: SearchSpec,
                       n: Optional[int] = None, collar: float = 1.0,
                       initial: Sequence[np.ndarray] = ()) -> StabilityReport:
    """Seeded estimate of min over the ansatz set of sup f (upper estimate of the true min)."""
    return stability_sweep(model, bounds, [n], search, collar, initial)[0]


def refine_pixels(coarse: RegionPartition, fine: RegionPartition, values) -> np.ndarray:
    """Express coarse pixel values on a nested finer pixel partition."""
    rc, rf = coarse.region_of_triangle, fine.region_of_triangle
    if rc.shape != rf.shape or not np.array_equal(rc == 0, rf == 0):
        raise ValidationError("partitions do not share a mesh and collar")
    values = np.asarray(values, dtype=float)
    out = np.empty(fine.n_pixels)
    for r in range(1, fine.n_regions):
        parents = np.unique(rc[rf == r])
        if parents.size != 1:
            raise ValidationError(f"fine pixel {r} straddles coarse pixels {parents.tolist()}")
        out[r - 1] = values[parents[0] - 1]
    return out


def refine_triple(coarse: RegionPartition, fine: RegionPartition, triple: np.ndarray) -> np.ndarray:
    """Map a ``tau1 | tau2 | kappa`` triple to a finer nested partition."""
    P = coarse.n_pixels
    return np.concatenate([refine_pixels(coarse, fine, triple[i * P:(i + 1) * P]) for i in range(3)])


def grid_stability_constant(model, bounds, points: int = 20, collar: float = 1.0,
                            n: Optional[int] = None) -> float:
    """Exhaustive grid minimum for a single pixel (kappa = +1 or -1)."""
    if model.partition.n_pixels != 1:
        raise ValidationError("grid oracle is for P = 1 only")
    a, b = bounds
    grid = np.linspace(a, b, points)
    sig = [Conductivity.from_pixels(collar, [t]) for t in grid]
    best = math.inf
    for kv in (1.0, -1.0):
        k = PerturbationDirection([kv])
        up = [_lam_max(model, model.derivative(s, k), n) for s in sig]
        down = [_lam_max(model, -model.derivative(s, k), n) for s in sig]
        best = min(best, min(max(u, d) for u in up for d in down))
    return best


# --------------------------------------------------------------------------
# localized potentials
# --------------------------------------------------------------------------

@dataclass
class LocalizedPotentialResult:
    delta: float
    coefficients: np.ndarray
    energy_d1: float
    energy_d2: float
    ratio: float           # E1 / (E2 + delta)
    energy_ratio: float    # E1 / E2
    reachable: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coefficients"] = self.coefficients.tolist()
        return d


def localized_potential(model, sigma: Conductivity, d1: Iterable[int], d2: Iterable[int],
                        deltas: Sequence[float], n: Optional[int] = None) -> list[LocalizedPotentialResult]:
    """Currents maximizing E_D1 / (E_D2 + delta ||g||^2) for each delta.

    Each optimizer is the top eigenvector of the pencil (M_D1, M_D2 + delta B).
    ``reachable`` records whether D1 meets the part of the mesh connected to
    Sigma without crossing D2.
    """
    d1 = np.asarray(sorted(set(d1)), dtype=np.int64)
    d2 = np.asarray(sorted(set(d2)), dtype=np.int64)
    if np.intersect1d(d1, d2).size:
        raise ValidationError("D1 and D2 must be disjoint")
    deltas = list(deltas)
    if any(d <= 0 for d in deltas) or any(x <= y for x, y in zip(deltas, deltas[1:])):
        raise ValidationError("delta schedule must be positive and decreasing")
    mesh = model.mesh
    basis = getattr(model, "basis", None)
    sigma_part = basis.sigma_part if basis is not None else full_boundary(mesh)
    reach = np.intersect1d(reachable_from_boundary(mesh, d2, sigma_part), d1).size > 0

    f = model.fields(sigma)
    grad = f.grad
    nn = model.size if n is None else n
    M1 = energy_matrix(mesh, grad, d1)[:nn, :nn]
    M2 = (energy_matrix(mesh, grad, d2) if d2.size else np.zeros_like(M1))[:nn, :nn]
    M1, B = model.pencil(M1, nn)
    M2, _ = model.pencil(M2, nn)
    out = []
    for delta in deltas:
        lam, vec = sla.eigh(M1, M2 + delta * B)
        x = vec[:, -1]
        x = x / math.sqrt(x @ B @ x)
        if x[np.argmax(np.abs(x))] < 0:
            x = -x
        e1, e2 = float(x @ M1 @ x), float(x @ M2 @ x)
        out.append(LocalizedPotentialResult(
            float(delta), x, e1, e2, e1 / (e2 + delta),
            e1 / e2 if e2 > 0 else math.inf, bool(reach)))
    return out


def growth_factors(results: Sequence[LocalizedPotentialResult], key: str = "energy_ratio") -> np.ndarray:
    v = np.array([getattr(r, key) for r in results])
    return v[1:] / v[:-1]


def plateaued(results: Sequence[LocalizedPotentialResult], threshold: float = 10.0,
              key: str = "energy_ratio") -> bool:
    """True when the ratio grows less than ``threshold`` across the last two delta steps."""
    v = np.array([getattr(r, key) for r in results])
    return bool(v[-1] / v[-3] < threshold)


# --------------------------------------------------------------------------
# sign uniformity
# --------------------------------------------------------------------------

@dataclass
class SignScan:
    lam_max: np.ndarray
    lam_min: np.ndarray
    tol: float
    positive_everywhere: bool
    negative_everywhere: bool

    @property
    def uniform(self) -> bool:
        return self.positive_everywhere or self.negative_everywhere

    def to_dict(self) -> dict:
        return {"lam_max": self.lam_max.tolist(), "lam_min": self.lam_min.tolist(),
                "tol": self.tol, "positive_everywhere": self.positive_everywhere,
                "negative_everywhere": self.negative_everywhere, "uniform": self.uniform}


def sign_uniformity_scan(model, kappa: PerturbationDirection, sigmas: Sequence[Conductivity],
                         n: Optional[int] = None, rel_tol: float = 1e-9) -> SignScan:
    """Extreme eigenvalues of the linearized response to ``kappa`` across conductivities."""
    if kappa.sup_norm == 0:
        raise ValidationError("kappa must be nonzero")
    hi, lo = [], []
    for s in sigmas:
        lam = pencil_eigvals(*model.pencil(model.derivative(s, kappa), n))
        hi.append(lam[-1])
        lo.append(lam[0])
    hi, lo = np.array(hi), np.array(lo)
    scale = max(np.abs(hi).max(), np.abs(lo).max())
    tol = rel_tol * scale
    return SignScan(hi, lo, tol, bool(np.all(hi > tol)), bool(np.all(lo < -tol)))


def definiteness_sets(partition: RegionPartition, kappa: PerturbationDirection) -> tuple[np.ndarray, np.ndarray]:
    """D1 = a pixel of maximal |kappa|, D2 = all pixels of the opposite sign."""
    v = kappa.values
    p = int(np.argmax(np.abs(v)))
    sgn = np.sign(v[p])
    d1 = partition.triangles_of(p + 1)
    opp = [q + 1 for q in range(len(v)) if np.sign(v[q]) == -sgn]
    d2 = np.concatenate([partition.triangles_of(r) for r in opp]) if opp else np.array([], dtype=np.int64)
    return d1, d2


# --------------------------------------------------------------------------
# CEM versus continuum
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CEMBoundCheck:
    sup_f_cem: float
    sup_f: float
    err: float
    q_star_bound: float
    perimeter: float

    @property
    def lower_bound(self) -> float:
        return (self.sup_f - self.err) / self.perimeter

    @property
    def holds(self) -> bool:
        if self.sup_f - self.err <= 0:
            return True
        return self.sup_f_cem >= self.lower_bound - 1e-9 * max(self.sup_f, self.sup_f_cem)


def cem_continuum_bound(cont_model, cem_model: CEMModel, tau1: Conductivity,
                        tau2: Conductivity, kappa: PerturbationDirection) -> CEMBoundCheck:
    """sup f_M >= (sup f - err) / |boundary| with err the measured linearization gap."""
    ops = coupling_operators(cont_model.mesh, cem_model.electrodes, cont_model.basis)
    B = cont_model.basis.gram
    err = max(galerkin_op_norm(discrepancy_matrix(cont_model, cem_model, ops, t, kappa), B)
              for t in (tau1, tau2))
    return CEMBoundCheck(sup_f(cem_model, tau1, tau2, kappa), sup_f(cont_model, tau1, tau2, kappa),
                         err, q_star_bound(ops), ops.perimeter)
