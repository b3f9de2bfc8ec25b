"""Experiment runner.

Every subcommand reads a JSON config, writes CSV tables (with a JSON
provenance comment line), JSON reports and two-column ``.dat`` plot files
into the output directory.  Result files are byte-reproducible for a fixed
config and seed; wall-clock timestamps go to ``run_log.txt`` only.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .analysis import (SearchSpec, growth_factors, lipschitz_lower_bound_check, localized_potential,
                       monotonicity_gap, plateaued, sign_uniformity_scan, stability_constant,
                       stability_sweep)
from .cem import approx_error
from .coefficients import Conductivity, PerturbationDirection
from .config import ExperimentConfig, rng_stream
from .errors import NumericalError, ResourceError, ValidationError
from .geometry import build_ring_partition, write_mesh

THREADS_ENV = "EITLAB_THREADS"


# --------------------------------------------------------------------------
# result files
# --------------------------------------------------------------------------

@dataclass
class ResultTable:
    """Named columns with units plus a provenance block."""

    columns: list                     # [(name, unit)]
    rows: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} values, table has {len(self.columns)} columns")
        self.rows.append(values)

    def column(self, name: str) -> list:
        i = [c[0] for c in self.columns].index(name)
        return [r[i] for r in self.rows]

    def write(self, path) -> None:
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.provenance, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"{n} [{u}]" if u else n for n, u in self.columns])
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        Path(path).write_text(buf.getvalue())


def read_table(path) -> tuple[dict, list, list]:
    lines = Path(path).read_text().splitlines()
    prov = json.loads(lines[0][2:])
    rows = list(csv.reader(lines[1:]))
    return prov, rows[0], rows[1:]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_plot(path, x, y) -> None:
    Path(path).write_text("".join(f"{float(a)!r} {float(b)!r}\n" for a, b in zip(x, y)))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _finite(x: float):
    """JSON has no infinity; report it as a string."""
    return x if math.isfinite(x) else str(x)


class Run:
    """Output directory, provenance and seeded streams for one command."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        out.mkdir(parents=True, exist_ok=True)
        self.provenance = {"command": command, "config_hash": cfg.hash, "version": __version__,
                           "seed": cfg.seed, "rng": "philox4x64"}

    def table(self, columns) -> ResultTable:
        return ResultTable(list(columns), provenance=dict(self.provenance))

    def path(self, name: str) -> Path:
        return self.out / name

    def rng(self, stream: int) -> np.random.Generator:
        return rng_stream(self.cfg.seed, stream)

    def log(self, message: str) -> None:
        stamp = time.strftime("%Y-%m-%dT%H:%M:%S")
        with open(self.path("run_log.txt"), "a") as fh:
            fh.write(f"{stamp} {self.command} {message}\n")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _random_pixels(rng, cfg: ExperimentConfig, P: int) -> Conductivity:
    return Conductivity.from_pixels(cfg.partition.sigma0, rng.uniform(cfg.a, cfg.b, P), (cfg.a, cfg.b))


def _model(cfg, mesh, partition, size):
    if cfg.model.kind == "cem":
        return cfg.cem_model(mesh, partition, size)
    return cfg.continuum_model(mesh, partition, size)


def cmd_forward(run: Run) -> dict:
    cfg = run.cfg
    mesh = cfg.build_mesh()
    part = cfg.build_partition(mesh)
    size = max(cfg.sizes)
    pix = cfg.forward.pixels
    if pix is None:
        sigma = Conductivity.constant(cfg.partition.sigma0, part.n_pixels)
    else:
        if len(pix) != part.n_pixels:
            raise ValidationError(f"forward.pixels needs {part.n_pixels} values")
        sigma = Conductivity.from_pixels(cfg.partition.sigma0, pix)
    model = _model(cfg, mesh, part, size)
    write_mesh(mesh, run.path("mesh.txt"))
    if cfg.model.kind == "cem":
        mat = model.cem_matrix(sigma)
        name = "cem.csv"
    else:
        mat = model.ntd_matrix(sigma)
        name = "ntd.csv"
    mat.write_csv(run.path(name), mesh.fingerprint)
    diag = np.diag(mat.matrix)
    write_plot(run.path("diagonal.dat"), np.arange(1, len(diag) + 1), diag)

    k = min(cfg.forward.snapshot_currents, size)
    if k:
        u = model.fields(sigma).u[:, :k]
        t = run.table([("x", "m"), ("y", "m")] + [(f"u{i + 1}", "V") for i in range(k)])
        for v in range(mesh.n_vertices):
            t.add(*mesh.vertices[v], *u[v])
        t.write(run.path("fields.csv"))
    summary = {"matrix": name, "size": size, "norm": mat.norm(), "n_triangles": mesh.n_triangles,
               "h": mesh.h, "mesh": mesh.fingerprint, "sigma": sigma.fingerprint}
    write_json(run.path("summary.json"), summary)
    return summary


def cmd_stability(run: Run) -> dict:
    cfg = run.cfg
    mesh = cfg.build_mesh()
    part = cfg.build_partition(mesh)
    search = replace(cfg.search, seed=cfg.seed)
    sizes = sorted(cfg.sizes)
    if cfg.model.kind == "cem":
        reports = [stability_constant(cfg.cem_model(mesh, part, M), (cfg.a, cfg.b), search,
                                      collar=cfg.partition.sigma0) for M in sizes]
        label = "M"
    else:
        model = cfg.continuum_model(mesh, part, sizes[-1])
        reports = stability_sweep(model, (cfg.a, cfg.b), sizes, search, collar=cfg.partition.sigma0)
        label = "n"
    t = run.table([(label, ""), ("c_hat", "ohm"), ("samples", ""), ("iterations", "")])
    for r in reports:
        t.add(r.size, r.c_hat, r.samples, r.iterations)
        write_json(run.path(f"stability_{cfg.model.kind}_{label}{r.size}.json"), r.to_dict())
    t.write(run.path("sweep.csv"))
    c = [r.c_hat for r in reports]
    write_plot(run.path("sweep.dat"), sizes, c)
    summary = {"model": cfg.model.kind, "sizes": sizes, "c_hat": c,
               "nondecreasing": bool(all(x <= y for x, y in zip(c, c[1:]))),
               "positive_at_largest": bool(c[-1] > 0)}
    write_json(run.path("summary.json"), summary)
    return summary


def _pixel_at(mesh, part, point) -> int:
    c = mesh.centroids
    t = int(np.argmin(np.hypot(c[:, 0] - point[0], c[:, 1] - point[1])))
    r = int(part.region_of_triangle[t])
    if r == 0:
        raise ValidationError(f"point {tuple(point)} lies in the collar, not in a pixel")
    return r


def _localize_table(run, results) -> ResultTable:
    t = run.table([("delta", ""), ("energy_d1", "W"), ("energy_d2", "W"), ("ratio", ""),
                   ("energy_ratio", "")])
    for r in results:
        t.add(r.delta, r.energy_d1, r.energy_d2, r.ratio, r.energy_ratio)
    return t


def cmd_localize(run: Run) -> dict:
    cfg, spec = run.cfg, run.cfg.localize
    mesh = cfg.build_mesh()
    part = cfg.build_partition(mesh)
    model = cfg.continuum_model(mesh, part, spec.n)
    sigma = Conductivity.constant(cfg.partition.sigma0, part.n_pixels)
    p1 = _pixel_at(mesh, part, spec.d1)
    d1 = part.triangles_of(p1)
    if spec.d2 is None:
        d2 = np.array([], dtype=np.int64)
        p2 = None
    else:
        p2 = _pixel_at(mesh, part, spec.d2)
        d2 = part.triangles_of(p2)
    res = localized_potential(model, sigma, d1, d2, spec.deltas)
    _localize_table(run, res).write(run.path("localize.csv"))
    write_plot(run.path("localize.dat"), [r.delta for r in res], [r.energy_ratio for r in res])
    growth = growth_factors(res) if len(res) > 1 else np.array([])
    summary = {"d1_pixel": p1, "d2_pixel": p2, "reachable": res[0].reachable,
               "final_ratio": _finite(res[-1].ratio), "final_energy_ratio": _finite(res[-1].energy_ratio),
               "growth_per_step": [_finite(g) for g in growth.tolist()],
               "results": [{k: _finite(v) if isinstance(v, float) else v
                            for k, v in r.to_dict().items()} for r in res]}
    if spec.shielded_radii:
        rings = build_ring_partition(mesh, spec.shielded_radii)
        smodel = cfg.continuum_model(mesh, rings, spec.n)
        sres = localized_potential(smodel, Conductivity(np.full(rings.n_regions, cfg.partition.sigma0)),
                                   rings.triangles_of(1), rings.triangles_of(2), spec.deltas)
        _localize_table(run, sres).write(run.path("localize_shielded.csv"))
        write_plot(run.path("localize_shielded.dat"), [r.delta for r in sres],
                   [r.energy_ratio for r in sres])
        summary["shielded"] = {"reachable": sres[0].reachable,
                               "bounded": plateaued(sres) if len(sres) >= 3 else None,
                               "growth_per_step": growth_factors(sres).tolist()}
    write_json(run.path("summary.json"), summary)
    return summary


def cmd_monotonicity(run: Run) -> dict:
    cfg = run.cfg
    mesh = cfg.build_mesh()
    part = cfg.build_partition(mesh)
    size = cfg.monotonicity.n or max(cfg.sizes)
    model = _model(cfg, mesh, part, size)
    rng = run.rng(1)
    t = run.table([("pair", ""), ("gap", "ohm"), ("gap_scale", "ohm"), ("ratio", "ohm"),
                   ("bound", "ohm")])
    worst_gap, worst_chain = math.inf, math.inf
    for i in range(cfg.monotonicity.pairs):
        s1 = _random_pixels(rng, cfg, part.n_pixels)
        s2 = _random_pixels(rng, cfg, part.n_pixels)
        g = monotonicity_gap(model, s1, s2)
        lc = lipschitz_lower_bound_check(model, s1, s2)
        t.add(i, g.gap, g.scale, lc.ratio, lc.bound)
        worst_gap = min(worst_gap, g.gap / g.scale)
        worst_chain = min(worst_chain, (lc.ratio - lc.bound) / lc.scale)
    t.write(run.path("monotonicity.csv"))
    write_plot(run.path("monotonicity.dat"), t.column("pair"),
               [g / s for g, s in zip(t.column("gap"), t.column("gap_scale"))])
    summary = {"model": cfg.model.kind, "size": size, "pairs": cfg.monotonicity.pairs,
               "min_relative_gap": worst_gap, "min_relative_chain_margin": worst_chain,
               "monotone": bool(worst_gap >= -1e-10), "chain_holds": bool(worst_chain >= -1e-9)}
    write_json(run.path("summary.json"), summary)
    return summary


def cmd_convergence(run: Run) -> dict:
    cfg = run.cfg
    mesh = cfg.build_mesh()
    part = cfg.build_partition(mesh)
    cont = cfg.continuum_model(mesh, part, cfg.convergence.n)
    rng = run.rng(2)
    sigma = _random_pixels(rng, cfg, part.n_pixels)
    kappa = PerturbationDirection(rng.uniform(-1, 1, part.n_pixels)).normalized()
    t = run.table([("M", ""), ("h_M", "m"), ("error", "ohm"), ("identity_residual", "ohm")])
    for M in sorted(cfg.convergence.electrodes):
        r = approx_error(cont, cfg.cem_model(mesh, part, M), sigma, kappa, seed=cfg.seed)
        t.add(M, r.h_M, r.error, r.identity_residual)
    t.write(run.path("convergence.csv"))
    h, e = np.array(t.column("h_M")), np.array(t.column("error"))
    write_plot(run.path("convergence.dat"), h, e)
    slope = float(np.polyfit(np.log(h), np.log(e), 1)[0])
    summary = {"slope": slope, "max_identity_residual": float(max(t.column("identity_residual"))),
               "electrodes": sorted(cfg.convergence.electrodes), "errors": e.tolist(),
               "sigma": sigma.values.tolist(), "kappa": kappa.values.tolist()}
    write_json(run.path("summary.json"), summary)
    return summary


def indefinite_direction(rng, P: int) -> PerturbationDirection:
    """Random pixel direction with one +1 and one -1 entry."""
    if P < 2:
        raise ValidationError("indefinite directions need at least two pixels")
    v = rng.uniform(-1, 1, P)
    i, j = rng.choice(P, 2, replace=False)
    v[i], v[j] = 1.0, -1.0
    return PerturbationDirection(v)


def cmd_signs(run: Run) -> dict:
    cfg = run.cfg
    mesh = cfg.build_mesh()
    part = cfg.build_partition(mesh)
    size = cfg.signs.n or max(cfg.sizes)
    model = _model(cfg, mesh, part, size)
    rng = run.rng(3)
    t = run.table([("direction", ""), ("sample", ""), ("lam_max", "ohm"), ("lam_min", "ohm")])
    per_dir = []
    for d in range(cfg.signs.directions):
        kappa = indefinite_direction(rng, part.n_pixels)
        sigmas = [_random_pixels(rng, cfg, part.n_pixels) for _ in range(cfg.signs.conductivities)]
        scan = sign_uniformity_scan(model, kappa, sigmas)
        for s in range(len(sigmas)):
            t.add(d, s, scan.lam_max[s], scan.lam_min[s])
        per_dir.append({"kappa": kappa.values.tolist(), **scan.to_dict()})
    t.write(run.path("signs.csv"))
    write_plot(run.path("signs.dat"), t.column("lam_min"), t.column("lam_max"))
    summary = {"model": cfg.model.kind, "size": size,
               "all_uniform": bool(all(p["uniform"] for p in per_dir)), "directions": per_dir}
    write_json(run.path("summary.json"), summary)
    return summary


COMMANDS = {
    "forward": cmd_forward,
    "stability": cmd_stability,
    "localize": cmd_localize,
    "monotonicity": cmd_monotonicity,
    "convergence": cmd_convergence,
    "signs": cmd_signs,
}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eitlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__name__.replace("cmd_", "") + " experiment")
        p.add_argument("--config", type=Path, help="JSON config (defaults apply when omitted)")
        p.add_argument("--out", type=Path, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="64-bit seed (overrides config)")
        p.add_argument("--threads", type=int, help=f"BLAS threads (env {THREADS_ENV})")
    return parser


def _diagnostic(kind: str, exc: BaseException) -> None:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}),
          file=sys.stderr)


def _threads(arg: Optional[int]) -> Optional[int]:
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return None


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ValidationError("seed must be an unsigned 64-bit integer")
            cfg.seed = args.seed
        out = args.out if args.out is not None else Path(cfg.output)
        threads = _threads(args.threads)
        if threads is not None and threads < 1:
            raise ValidationError("thread count must be >= 1")
        run = Run(args.command, cfg, out)
    except ValidationError as exc:
        _diagnostic("config", exc)
        return 2
    start = time.perf_counter()
    try:
        with threadpool_limits(limits=threads):
            summary = COMMANDS[args.command](run)
    except (ValidationError, ResourceError) as exc:
        _diagnostic("config", exc)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        _diagnostic("numerical", exc)
        return 3
    run.log(f"seed={cfg.seed} config={cfg.hash} seconds={time.perf_counter() - start:.2f}")
    print(json.dumps({"command": args.command, "out": str(out),
                      **{k: v for k, v in summary.items() if not isinstance(v, (list, dict))}},
                     default=_json_default))
    return 0


if __name__ == "__main__":
    sys.exit(main())
