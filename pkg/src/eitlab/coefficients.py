"""Piecewise-constant conductivities and perturbation directions."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class Conductivity:
    """One value per region; ``values[0]`` is the collar value sigma_0."""

    values: np.ndarray
    bounds: Optional[tuple[float, float]] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size < 1 or not np.all(np.isfinite(v)):
            raise ValidationError("conductivity needs finite values")
        if np.any(v <= 0):
            raise ValidationError(f"conductivity must be positive, got min {v.min()}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_pixels(cls, collar: float, pixels, bounds=None) -> "Conductivity":
        return cls(np.r_[collar, np.asarray(pixels, dtype=float)], bounds)

    @classmethod
    def constant(cls, value: float, n_pixels: int) -> "Conductivity":
        return cls(np.full(n_pixels + 1, float(value)))

    @property
    def pixels(self) -> np.ndarray:
        return self.values[1:]

    @property
    def collar(self) -> float:
        return float(self.values[0])

    def in_bounds(self) -> bool:
        if self.bounds is None:
            return True
        a, b = self.bounds
        return bool(np.all(self.pixels >= a) and np.all(self.pixels <= b))

    def perturbed(self, kappa: "PerturbationDirection", t: float) -> "Conductivity":
        return Conductivity(self.values + t * kappa.full, self.bounds)

    def scaled(self, s: float) -> "Conductivity":
        return Conductivity(s * self.values)

    @property
    def key(self) -> bytes:
        return self.values.tobytes()

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.key).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class PerturbationDirection:
    """Pixel values of kappa; the collar entry is 0 except in diagnostic runs."""

    values: np.ndarray
    collar: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def full(self) -> np.ndarray:
        return np.r_[self.collar, self.values]

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.full)))

    def normalized(self) -> "PerturbationDirection":
        s = self.sup_norm
        if s == 0:
            raise ValidationError("cannot normalize a zero direction")
        return PerturbationDirection(self.values / s, self.collar / s)

    def __neg__(self) -> "PerturbationDirection":
        return PerturbationDirection(-self.values, -self.collar)

    def __add__(self, other: "PerturbationDirection") -> "PerturbationDirection":
        return PerturbationDirection(self.values + other.values, self.collar + other.collar)

    @classmethod
    def between(cls, sigma_from: Conductivity, sigma_to: Conductivity) -> "PerturbationDirection":
        """``sigma_to - sigma_from`` as a direction (collar difference kept)."""
        d = sigma_to.values - sigma_from.values
        return cls(d[1:], float(d[0]))
