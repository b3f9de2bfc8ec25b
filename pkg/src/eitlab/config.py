"""Experiment configuration: JSON schema, dataclasses and model construction."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .analysis import SearchSpec
from .cem import CEMModel
from .continuum import NtDModel, patch_basis, trig_basis
from .errors import ValidationError
from .geometry import (build_disk_mesh, build_pixel_partition, full_boundary, make_boundary_part,
                       make_electrodes)

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int1 = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mesh": {
            "type": "object", "additionalProperties": False,
            "properties": {"radius": _pos, "h_target": _pos, "boundary_multiple": _int1,
                           "symmetry": _int1},
        },
        "partition": {
            "type": "object", "additionalProperties": False,
            "properties": {"px": _int1, "py": _int1, "collar_width": _pos, "sigma0": _pos},
        },
        "ansatz": {
            "type": "object", "additionalProperties": False,
            "properties": {"a": _pos, "b": _pos},
        },
        "model": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["continuum", "cem"]},
                "basis": {"enum": ["trig", "patch"]},
                "sigma_arcs": {"type": ["array", "null"],
                               "items": {"type": "array", "items": _num,
                                         "minItems": 2, "maxItems": 2}},
                "coverage": _pos,
                "z": _pos,
            },
        },
        "sizes": {"type": "array", "items": _int1, "minItems": 1},
        "search": {
            "type": "object", "additionalProperties": False,
            "properties": {"samples": {"type": "integer", "minimum": 0}, "budget": {"type": "integer", "minimum": 0},
                           "keep": _int1, "step": _pos, "min_step": _pos},
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output": {"type": "string"},
        "forward": {
            "type": "object", "additionalProperties": False,
            "properties": {"pixels": {"type": ["array", "null"], "items": _pos},
                           "snapshot_currents": {"type": "integer", "minimum": 0}},
        },
        "localize": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "deltas": {"type": "array", "items": _pos, "minItems": 1},
                "n": _int1,
                "d1": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                "d2": {"type": ["array", "null"], "items": _num, "minItems": 2, "maxItems": 2},
                "shielded_radii": {"type": ["array", "null"], "items": _pos,
                                   "minItems": 2, "maxItems": 2},
            },
        },
        "monotonicity": {
            "type": "object", "additionalProperties": False,
            "properties": {"pairs": _int1, "n": _int1},
        },
        "convergence": {
            "type": "object", "additionalProperties": False,
            "properties": {"electrodes": {"type": "array", "items": _int1, "minItems": 2},
                           "n": _int1},
        },
        "signs": {
            "type": "object", "additionalProperties": False,
            "properties": {"directions": _int1, "conductivities": _int1, "n": _int1},
        },
    },
}


@dataclass
class MeshSpec:
    radius: float = 1.0
    h_target: float = 0.05
    boundary_multiple: int = 128
    symmetry: int = 4


@dataclass
class PartitionSpec:
    px: int = 2
    py: int = 2
    collar_width: float = 0.2
    sigma0: float = 1.0


@dataclass
class ModelSpec:
    kind: str = "continuum"
    basis: str = "trig"
    sigma_arcs: Optional[list] = None
    coverage: float = 0.5
    z: float = 0.1


@dataclass
class ForwardSpec:
    pixels: Optional[list] = None
    snapshot_currents: int = 3


@dataclass
class LocalizeSpec:
    deltas: list = field(default_factory=lambda: [10.0 ** -k for k in range(2, 9)])
    n: int = 32
    d1: list = field(default_factory=lambda: [0.6, 0.1])
    d2: Optional[list] = field(default_factory=lambda: [-0.6, -0.1])
    shielded_radii: Optional[list] = None


@dataclass
class MonotonicitySpec:
    pairs: int = 100
    n: Optional[int] = None


@dataclass
class ConvergenceSpec:
    electrodes: list = field(default_factory=lambda: [8, 16, 32, 64])
    n: int = 32


@dataclass
class SignsSpec:
    directions: int = 20
    conductivities: int = 10
    n: Optional[int] = None


@dataclass
class ExperimentConfig:
    mesh: MeshSpec = field(default_factory=MeshSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    a: float = 0.5
    b: float = 2.0
    model: ModelSpec = field(default_factory=ModelSpec)
    sizes: list = field(default_factory=lambda: [4, 8, 16, 32])
    search: SearchSpec = field(default_factory=SearchSpec)
    seed: int = 0
    output: str = "results"
    forward: ForwardSpec = field(default_factory=ForwardSpec)
    localize: LocalizeSpec = field(default_factory=LocalizeSpec)
    monotonicity: MonotonicitySpec = field(default_factory=MonotonicitySpec)
    convergence: ConvergenceSpec = field(default_factory=ConvergenceSpec)
    signs: SignsSpec = field(default_factory=SignsSpec)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(d, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ValidationError(f"config {where}: {exc.message}") from None
        ans = d.get("ansatz", {})
        cfg = cls(
            mesh=MeshSpec(**d.get("mesh", {})),
            partition=PartitionSpec(**d.get("partition", {})),
            a=float(ans.get("a", 0.5)), b=float(ans.get("b", 2.0)),
            model=ModelSpec(**d.get("model", {})),
            sizes=list(d.get("sizes", [4, 8, 16, 32])),
            search=SearchSpec(**d.get("search", {})),
            seed=int(d.get("seed", 0)),
            output=d.get("output", "results"),
            forward=ForwardSpec(**d.get("forward", {})),
            localize=LocalizeSpec(**d.get("localize", {})),
            monotonicity=MonotonicitySpec(**d.get("monotonicity", {})),
            convergence=ConvergenceSpec(**d.get("convergence", {})),
            signs=SignsSpec(**d.get("signs", {})),
        )
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read config: {exc}") from None
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed JSON at line {exc.lineno} col {exc.colno}: {exc.msg}") from None
        return cls.from_dict(d)

    def check(self) -> None:
        if not self.b > self.a > 0:
            raise ValidationError(f"ansatz needs b > a > 0, got a={self.a}, b={self.b}")
        if self.partition.collar_width >= self.mesh.radius:
            raise ValidationError("collar wider than the disk")
        if self.model.kind == "cem" and not 0 < self.model.coverage < 1:
            raise ValidationError("coverage must lie in (0, 1)")
        ds = self.localize.deltas
        if any(x <= y for x, y in zip(ds, ds[1:])):
            raise ValidationError("localize.deltas must be decreasing")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ansatz"] = {"a": d.pop("a"), "b": d.pop("b")}
        return d

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # construction -----------------------------------------------------------

    def build_mesh(self):
        m = self.mesh
        return build_disk_mesh(m.radius, m.h_target, m.boundary_multiple, m.symmetry)

    def build_partition(self, mesh):
        p = self.partition
        return build_pixel_partition(mesh, (p.px, p.py), p.collar_width)

    def sigma_part(self, mesh):
        arcs = self.model.sigma_arcs
        return full_boundary(mesh) if not arcs else make_boundary_part(mesh, [tuple(a) for a in arcs])

    def basis(self, mesh, n: int):
        if self.model.basis == "trig":
            if self.model.sigma_arcs:
                raise ValidationError("trig basis lives on the full boundary; use the patch basis on arcs")
            return trig_basis(mesh, n)
        return patch_basis(mesh, self.sigma_part(mesh), n)

    def continuum_model(self, mesh, partition, n: int) -> NtDModel:
        return NtDModel(mesh, partition, self.basis(mesh, n))

    def cem_model(self, mesh, partition, M: int) -> CEMModel:
        return CEMModel(mesh, partition, make_electrodes(mesh, M, self.model.coverage, self.model.z))


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream) so streams never overlap."""
    return np.random.Generator(np.random.Philox(
        key=np.array([int(seed) % 2**64, int(stream)], dtype=np.uint64)))


def default_config() -> ExperimentConfig:
    return ExperimentConfig()
