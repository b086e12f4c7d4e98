"""Shared domain types: 2-D vectors, roles, parameter sets, RNG streams.

All lengths are meters, times seconds, angles radians. Parameter files use
the same symbol names as the in-code parameter set.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)

RobotId = int


class Vec2(NamedTuple):
    """Immutable 2-D vector (position, velocity or force)."""

    x: float
    y: float

    def __add__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x - other.x, self.y - other.y)

    def __neg__(self) -> "Vec2":
        return Vec2(-self.x, -self.y)

    def __mul__(self, k: float) -> "Vec2":
        return Vec2(self.x * k, self.y * k)

    __rmul__ = __mul__

    def dot(self, other: "Vec2") -> float:
        return self.x * other.x + self.y * other.y

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def dist(self, other: "Vec2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def unit(self) -> "Vec2":
        n = math.hypot(self.x, self.y)
        if n < 1e-12:
            return Vec2(0.0, 0.0)
        return Vec2(self.x / n, self.y / n)

    def clamped(self, limit: float) -> "Vec2":
        n = math.hypot(self.x, self.y)
        if n <= limit:
            return self
        k = limit / n
        return Vec2(self.x * k, self.y * k)

    def perp(self) -> "Vec2":
        """Rotate by +90 degrees."""
        return Vec2(-self.y, self.x)

    def rotated(self, angle: float) -> "Vec2":
        c, s = math.cos(angle), math.sin(angle)
        return Vec2(c * self.x - s * self.y, s * self.x + c * self.y)

    def angle(self) -> float:
        return math.atan2(self.y, self.x)

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y)


ZERO = Vec2(0.0, 0.0)


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


class Role(Enum):
    ROOT = "root"
    WORKER = "worker"
    CONNECTOR = "connector"
    SPARE = "spare"


class AlgorithmVariant(Enum):
    """Tree-formation strategy, fixed for a whole run."""

    OUTWARDS = "outwards"
    INWARDS = "inwards"

    @classmethod
    def parse(cls, text: str) -> "AlgorithmVariant":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown variant {text!r}; expected outwards or inwards") from None


@dataclass(frozen=True)
class Params:
    """Design parameters plus simulator constants (SI units).

    S           safe range between parent and child [m]
    A_avoid     non-parent-child avoidance range [m]
    delta       ideal parent-child distance [m]
    epsilon     gain of the parent-child interaction
    tau         magnitude of attraction to target
    R           reconfiguration period [s]
    I           information liveness period [s]
    E           distance threshold for spare recruitment / emergency range [m]
    J           distance threshold to switch to connector [m]
    C           communication range [m]
    dt          integration step [s]
    v_max       speed limit [m/s]
    u_max       acceleration limit [m/s^2]
    body_radius physical robot radius, used for line-of-sight occlusion [m]
    target_reach distance at which a worker counts as arrived [m]
    """

    S: float
    A_avoid: float
    delta: float
    epsilon: float
    tau: float
    R: float
    I: float
    E: float
    J: float
    C: float = 2.5
    dt: float = 0.1
    v_max: float = 0.5
    u_max: float = 2.0
    body_radius: float = 0.07
    target_reach: float = 0.10
    damping: float = 0.5

    def validate(self) -> list[str]:
        """Raise ValueError on hard invariant violations; return soft warnings."""
        lengths = ("S", "A_avoid", "delta", "E", "J", "C", "body_radius", "target_reach")
        for name in lengths:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"parameter {name} must be a positive length, got {v}")
        for name in ("epsilon", "tau", "R", "I", "dt", "v_max", "u_max"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"parameter {name} must be positive, got {v}")
        if not (math.isfinite(self.damping) and self.damping >= 0.0):
            raise ValueError(f"damping must be non-negative, got {self.damping}")
        if not self.S < self.C:
            raise ValueError(f"require S < C (got S={self.S}, C={self.C})")
        if not self.E < self.C:
            raise ValueError(f"require E < C (got E={self.E}, C={self.C})")
        if not self.J < self.E:
            raise ValueError(f"require J < E (got J={self.J}, E={self.E})")
        warnings = []
        if self.S > self.E:
            # Inconsistent with the usual "safe < emergency" ordering; kept as
            # configured. The target/avoid gate is then never 0 inside the
            # emergency band.
            warnings.append(
                f"S={self.S} > E={self.E}: the gate band (S, E] is empty; "
                "target and avoidance forces cut off at the emergency threshold"
            )
        if self.delta >= self.C:
            warnings.append(f"delta={self.delta} >= C={self.C}: ideal spacing not reachable in range")
        for w in warnings:
            log.warning("params: %s", w)
        return warnings


# File keys use the design-parameter symbol names; A maps to A_avoid in code.
_FILE_KEYS = {
    "S": "S", "A": "A_avoid", "delta": "delta", "epsilon": "epsilon",
    "tau": "tau", "R": "R", "I": "I", "E": "E", "J": "J",
    "C": "C", "dt": "dt", "v_max": "v_max", "u_max": "u_max",
    "body_radius": "body_radius", "target_reach": "target_reach",
    "damping": "damping",
}
_FIELD_TO_KEY = {v: k for k, v in _FILE_KEYS.items()}


def save_params(params: Params, path: str | Path) -> None:
    lines = ["# treeswarm parameters (SI units: meters, seconds)"]
    for f in fields(Params):
        lines.append(f"{_FIELD_TO_KEY[f.name]} = {getattr(params, f.name)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_params(path: str | Path, base: Params | None = None) -> Params:
    """Read a ``key = value`` parameter file; unknown keys are an error.

    Keys omitted from the file keep the value from ``base`` (or the outwards
    defaults when no base is given). The result is validated on load.
    """
    values: dict[str, float] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _FILE_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown parameter {key!r}")
        values[_FILE_KEYS[key]] = float(val.strip())
    params = replace(base if base is not None else default_params(AlgorithmVariant.OUTWARDS), **values)
    params.validate()
    return params


def default_params(variant: AlgorithmVariant) -> Params:
    """Optimized design parameters for the given variant, in SI units."""
    if variant is AlgorithmVariant.OUTWARDS:
        p = Params(S=1.3893, A_avoid=0.4316, delta=1.90, epsilon=10.0, tau=0.49,
                   R=38.8, I=1.2, E=1.3209, J=0.0979)
    else:
        p = Params(S=1.3525581, A_avoid=0.4099, delta=1.540841, epsilon=10.0, tau=0.2539,
                   R=44.0, I=0.5, E=1.321353, J=0.066395)
    p.validate()
    return p


def seeded_rng(run_seed: int, robot: RobotId) -> np.random.Generator:
    """Independent deterministic stream for (run seed, robot id)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=run_seed, spawn_key=(robot,)))
