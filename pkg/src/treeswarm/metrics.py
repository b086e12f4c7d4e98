"""Observer-side evaluation: algebraic connectivity, broken edges, run summaries."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Params, Vec2
from .world import World

FIEDLER_LOW = 1e-3
_EIG_FLOOR = -1e-9


def laplacian(adj: np.ndarray) -> np.ndarray:
    """L = D - A for a symmetric 0/1 adjacency with zero diagonal."""
    a = np.asarray(adj, dtype=float)
    if a.shape[0] != a.shape[1] or not np.array_equal(a, a.T):
        raise ValueError("adjacency must be square and symmetric")
    return np.diag(a.sum(axis=1)) - a


def fiedler_value(lap: np.ndarray) -> float:
    """Second-smallest eigenvalue of the Laplacian (dense symmetric solve)."""
    if lap.shape[0] < 2:
        return 0.0
    vals = np.linalg.eigvalsh(lap)
    lam2 = float(vals[1])
    # roundoff can push the zero mode slightly negative; clamp to the floor
    return max(lam2, 0.0) if lam2 > _EIG_FLOOR * max(1.0, float(vals[-1])) else lam2


@dataclass(slots=True)
class MetricsSample:
    tick: int
    fiedler: Optional[float]      # None on ticks where the eigensolve is skipped
    tree_edge_broken: bool
    workers_arrived: int
    done: bool


@dataclass(slots=True)
class RunSummary:
    completed: bool
    normalized_time: Optional[float]   # None = did not finish in the allowed time
    disconnected_time_ratio: float
    fiedler_low_ratio: float
    ticks: int


def sample(world: World,
           agents: Sequence,
           adj: np.ndarray,
           with_fiedler: bool = True) -> MetricsSample:
    """One per-tick measurement over ground truth plus protocol state."""
    p = world.params
    broken = False
    for a in agents:
        for partner in _active_links(a):
            if partner is None:
                continue
            d = world.robots[a.rid].p.dist(world.robots[partner].p)
            if d > p.C or not adj[a.rid][partner]:
                broken = True
                break
        if broken:
            break
    fiedler = None
    if with_fiedler:
        fiedler = fiedler_value(laplacian(adj))
    arrived = 0
    workers = 0
    for a in agents:
        if a.target is not None:
            workers += 1
            if world.robots[a.rid].p.dist(a.target) <= p.target_reach:
                arrived += 1
    done = workers > 0 and arrived == workers
    return MetricsSample(tick=world.tick, fiedler=fiedler, tree_edge_broken=broken,
                         workers_arrived=arrived, done=done)


def _active_links(agent):
    yield agent.parent
    yield agent.old_parent


def summarize(samples: Sequence[MetricsSample],
              target_radius: float,
              params: Params) -> RunSummary:
    """Fold per-tick samples into the run-level metrics.

    The time budget is ten times the straight-line center-to-target traversal
    at full speed; a run that has not finished by then is a DNF.
    """
    if not samples:
        raise ValueError("no samples to summarize")
    t_max = 10.0 * target_radius / params.v_max
    total = len(samples)
    broken = sum(1 for s in samples if s.tree_edge_broken)
    fiedler_ticks = [s for s in samples if s.fiedler is not None]
    low = sum(1 for s in fiedler_ticks if s.fiedler < FIEDLER_LOW)
    completed = samples[-1].done
    normalized = None
    if completed:
        finish = (samples[-1].tick) * params.dt
        normalized = finish / t_max
        if normalized > 1.0:
            completed = False
            normalized = None
    return RunSummary(
        completed=completed,
        normalized_time=normalized,
        disconnected_time_ratio=broken / total,
        fiedler_low_ratio=(low / len(fiedler_ticks)) if fiedler_ticks else 0.0,
        ticks=total,
    )


def max_ticks(target_radius: float, params: Params) -> int:
    return math.ceil(10.0 * target_radius / params.v_max / params.dt)
