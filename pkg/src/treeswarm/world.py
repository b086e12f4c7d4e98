"""Ground-truth physics: poses, double-integrator dynamics, geometric queries.

The world is stepped synchronously: every control is computed from the state
at the start of a tick, then all robots integrate at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Params, Vec2

# Below this speed the heading is held, so a stopped robot keeps its frame.
_HEADING_SPEED = 0.01


@dataclass
class RobotPhysState:
    p: Vec2
    v: Vec2 = Vec2(0.0, 0.0)
    theta: float = 0.0


@dataclass
class World:
    robots: list[RobotPhysState]
    targets: list[Vec2]
    params: Params
    tick: int = 0
    los_enabled: bool = False

    @property
    def n(self) -> int:
        return len(self.robots)

    def positions(self) -> np.ndarray:
        return np.array([[r.p.x, r.p.y] for r in self.robots], dtype=float)

    def integrate(self, controls: list[Vec2]) -> None:
        """Advance every robot one step with the given accelerations."""
        assert len(controls) == len(self.robots)
        self.robots = [step_dynamics(s, u, self.params) for s, u in zip(self.robots, controls)]
        self.tick += 1


def step_dynamics(state: RobotPhysState, u: Vec2, params: Params) -> RobotPhysState:
    """One double-integrator step: clamp u, integrate v then p, track heading."""
    if not (u.is_finite() and state.p.is_finite() and state.v.is_finite()):
        raise FloatingPointError(f"non-finite dynamics input: p={state.p} v={state.v} u={u}")
    u = u.clamped(params.u_max)
    v = (state.v + u * params.dt).clamped(params.v_max)
    p = state.p + v * params.dt
    theta = v.angle() if v.norm() > _HEADING_SPEED else state.theta
    return RobotPhysState(p=p, v=v, theta=theta)


def in_range(i: int, j: int, world: World) -> bool:
    return world.robots[i].p.dist(world.robots[j].p) <= world.params.C


def _segment_clearance(a: Vec2, b: Vec2, points: np.ndarray) -> np.ndarray:
    """Distance from each point to the segment a-b (vectorized)."""
    ab = np.array([b.x - a.x, b.y - a.y])
    ap = points - np.array([a.x, a.y])
    d2 = float(ab @ ab)
    if d2 < 1e-18:
        return np.hypot(ap[:, 0], ap[:, 1])
    t = np.clip((ap @ ab) / d2, 0.0, 1.0)
    closest = ap - t[:, None] * ab
    return np.hypot(closest[:, 0], closest[:, 1])


def line_of_sight(i: int, j: int, world: World) -> bool:
    """True unless a third robot's body disc blocks the i-j segment."""
    if not world.los_enabled:
        return True
    pos = world.positions()
    mask = np.ones(world.n, dtype=bool)
    mask[[i, j]] = False
    others = pos[mask]
    if len(others) == 0:
        return True
    clearance = _segment_clearance(world.robots[i].p, world.robots[j].p, others)
    return bool(np.all(clearance > world.params.body_radius))


def comm_graph(world: World) -> np.ndarray:
    """Symmetric 0/1 adjacency: within range C and unobstructed when LOS is on."""
    n = world.n
    pos = world.positions()
    vec = pos[None, :, :] - pos[:, None, :]  # vec[i, j] = p_j - p_i
    dist = np.hypot(vec[..., 0], vec[..., 1])
    adj = dist <= world.params.C
    np.fill_diagonal(adj, False)
    if world.los_enabled and n > 2:
        # Occlusion for every (i, j, k) at once: robot k blocks the i-j link
        # when its distance to the segment is <= body_radius. Endpoint bodies
        # never block their own link (k == i and k == j masked out).
        d2 = dist ** 2                                   # |p_j - p_i|^2, (i, j)
        pd = np.einsum("ika,ija->ijk", vec, vec)         # (p_k-p_i).(p_j-p_i)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(d2[:, :, None] > 1e-18, pd / d2[:, :, None], 0.0)
        t = np.clip(t, 0.0, 1.0)
        c2 = d2[:, None, :] - 2.0 * t * pd + (t ** 2) * d2[:, :, None]
        clearance2 = np.maximum(c2, 0.0)
        eye = np.eye(n, dtype=bool)
        clearance2[eye[:, None, :] | eye[None, :, :]] = np.inf
        blocked = np.any(clearance2 <= world.params.body_radius ** 2, axis=2)
        adj &= ~blocked
    return adj.astype(np.int8)
