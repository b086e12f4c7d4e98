"""Scenario generation and run orchestration.

A scenario places targets evenly on a circle and the robots on a jittered
grid packed inside a small disc at the arena center, so the initial
communication graph is complete by construction (every pairwise distance is
below the communication range). Runs are bit-deterministic in the scenario
and seed.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from multiprocessing import Pool
from pathlib import Path
from typing import IO, Optional

import numpy as np

from . import metrics
from .comms import Message, deliver
from .core import AlgorithmVariant, Params, Role, Vec2, default_params, seeded_rng
from .metrics import MetricsSample, RunSummary
from .protocol import FsmState, RobotAgent, init_roles
from .world import RobotPhysState, World, comm_graph

MAX_ROBOTS = 94
_CLUSTER_RADIUS_FACTOR = 0.4


@dataclass(frozen=True)
class Scenario:
    variant: AlgorithmVariant
    n_targets: int
    target_radius: float
    redundancy: int = 2
    los_enabled: bool = False
    seed: int = 0
    n_robots: Optional[int] = None       # None: derived from the geometry
    params: Optional[Params] = None      # None: variant defaults
    max_ticks: Optional[int] = None      # None: derived from the time budget

    def resolved_params(self) -> Params:
        return self.params if self.params is not None else default_params(self.variant)

    def resolved_robots(self) -> int:
        if self.n_robots is not None:
            return self.n_robots
        return min(MAX_ROBOTS, self.redundancy * self.min_robots())

    def min_robots(self) -> int:
        """Relay robots per branch at the designed spacing, plus the root."""
        p = self.resolved_params()
        return self.n_targets * math.ceil(self.target_radius / p.delta) + 1

    def resolved_ticks(self) -> int:
        if self.max_ticks is not None:
            return self.max_ticks
        return metrics.max_ticks(self.target_radius, self.resolved_params())

    def key(self) -> tuple:
        return (self.variant.value, self.n_targets, self.target_radius,
                self.redundancy, int(self.los_enabled), self.seed)


class GenerationError(RuntimeError):
    pass


def _grid_positions(n: int, radius: float, pitch: float) -> list[Vec2]:
    span = int(math.ceil(radius / pitch)) + 1
    pts = []
    for gx in range(-span, span + 1):
        for gy in range(-span, span + 1):
            v = Vec2(gx * pitch, gy * pitch)
            if v.norm() <= radius:
                pts.append(v)
    pts.sort(key=lambda v: (v.norm(), v.x, v.y))
    return pts[:n]


def generate(scenario: Scenario) -> tuple[World, list[RobotAgent]]:
    """Build the initial world and protocol agents for a scenario."""
    p = scenario.resolved_params()
    p.validate()
    n = scenario.resolved_robots()
    targets = [Vec2(scenario.target_radius * math.cos(2.0 * math.pi * k / scenario.n_targets),
                    scenario.target_radius * math.sin(2.0 * math.pi * k / scenario.n_targets))
               for k in range(scenario.n_targets)]
    cluster_r = _CLUSTER_RADIUS_FACTOR * p.C
    pitch = max(0.95 * math.sqrt(math.pi * cluster_r ** 2 / n), 1e-3)
    world = None
    for _ in range(8):
        pts = _grid_positions(n, cluster_r, pitch)
        if len(pts) < n:
            pitch *= 0.9
            continue
        jitter = 0.2 * pitch
        placed = []
        for rid in range(n):
            rng = seeded_rng(scenario.seed, rid)
            dx, dy = rng.uniform(-jitter, jitter, size=2)
            placed.append(Vec2(pts[rid].x + float(dx), pts[rid].y + float(dy)))
        candidate = World(robots=[RobotPhysState(p=pos) for pos in placed],
                          targets=targets, params=p, los_enabled=scenario.los_enabled)
        dmax = max((a.dist(b) for a in placed for b in placed), default=0.0)
        if dmax > p.C:
            pitch *= 0.9
            continue
        if scenario.los_enabled:
            lap = metrics.laplacian(comm_graph(candidate))
            if metrics.fiedler_value(lap) <= 0.0:
                pitch *= 0.92
                continue
        world = candidate
        break
    if world is None:
        raise GenerationError(
            f"could not pack {n} robots into a connected cluster of radius {cluster_r}")
    roles, pairing = init_roles(world, targets)
    agents = []
    for rid in range(n):
        tgt = targets[pairing[rid]] if rid in pairing else None
        agents.append(RobotAgent(rid, roles[rid], scenario.variant, p,
                                 n_robots=n, n_targets=scenario.n_targets, target=tgt))
    return world, agents


class RunInvalid(RuntimeError):
    """An internal invariant failed; the run result must not be trusted."""


@dataclass
class RunResult:
    scenario: Scenario
    summary: Optional[RunSummary]
    samples: list[MetricsSample]
    error: Optional[str] = None

    @property
    def valid(self) -> bool:
        return self.error is None


class Simulation:
    """Owns the world and agents, and drives the synchronous tick loop:

    deliver -> agent steps -> integrate -> sample.
    """

    def __init__(self, scenario: Scenario, *, fiedler_every: int = 1,
                 checker=None, trace: IO[str] | None = None,
                 msg_trace: IO[str] | None = None,
                 motion_enabled: bool = True):
        self.scenario = scenario
        self.world, self.agents = generate(scenario)
        self.fiedler_every = max(1, fiedler_every)
        self.checker = checker
        self.trace = trace
        self.msg_trace = msg_trace
        self.motion_enabled = motion_enabled
        self.samples: list[MetricsSample] = []
        self._outboxes: list[list[Message]] = [[] for _ in range(self.world.n)]
        self._adj = comm_graph(self.world)
        self._sync_agents()

    def _sync_agents(self) -> None:
        for agent, phys in zip(self.agents, self.world.robots):
            agent.pos = phys.p
            agent.vel = phys.v
            agent.theta = phys.theta

    def tick(self) -> MetricsSample:
        world = self.world
        tick = world.tick
        inboxes = deliver(world, self._outboxes, adj=self._adj, trace=self.msg_trace)
        controls = []
        outboxes = []
        for agent, inbox in zip(self.agents, inboxes):
            out, u = agent.step(tick, inbox)
            outboxes.append(out)
            controls.append(u if self.motion_enabled else Vec2(0.0, 0.0))
        self._outboxes = outboxes
        if self.trace is not None:
            self._write_trace(tick, controls)
        world.integrate(controls)
        self._sync_agents()
        self._adj = comm_graph(world)
        with_fiedler = (world.tick - 1) % self.fiedler_every == 0
        s = metrics.sample(world, self.agents, self._adj, with_fiedler=with_fiedler)
        self.samples.append(s)
        if self.checker is not None:
            self.checker.after_tick(self)
        return s

    def _write_trace(self, tick: int, controls: list[Vec2]) -> None:
        for agent, u in zip(self.agents, controls):
            bd = agent.last_breakdown
            self.trace.write(json.dumps({
                "tick": tick, "id": agent.rid, "role": agent.role.value,
                "state": agent.state.value, "round": agent.rnd,
                "parent": agent.parent, "depth": agent.depth,
                "u": [round(u.x, 9), round(u.y, 9)],
                "gate": bd.gate, "emergency": bd.emergency,
            }) + "\n")

    def run(self) -> RunResult:
        limit = self.scenario.resolved_ticks()
        try:
            for _ in range(limit):
                s = self.tick()
                if s.done:
                    break
        except (RunInvalid, FloatingPointError) as exc:
            return RunResult(self.scenario, None, self.samples, error=str(exc))
        summary = metrics.summarize(self.samples, self.scenario.target_radius,
                                    self.world.params)
        return RunResult(self.scenario, summary, self.samples)


def run(scenario: Scenario, **kwargs) -> RunResult:
    return Simulation(scenario, **kwargs).run()


# --- batch sweeps -----------------------------------------------------------

CSV_COLUMNS = ["variant", "targets", "radius", "redundancy", "los", "seed",
               "robots", "status", "completed", "normalized_time",
               "disconnected_time_ratio", "fiedler_low_ratio", "ticks"]


def result_row(res: RunResult) -> list[str]:
    sc = res.scenario
    base = [sc.variant.value, str(sc.n_targets), f"{sc.target_radius:g}",
            str(sc.redundancy), str(int(sc.los_enabled)), str(sc.seed),
            str(sc.resolved_robots())]
    if not res.valid:
        return base + ["INVALID", "0", "", "", "", "0"]
    s = res.summary
    nt = "DNF" if s.normalized_time is None else f"{s.normalized_time:.6f}"
    return base + ["OK", str(int(s.completed)), nt,
                   f"{s.disconnected_time_ratio:.6f}", f"{s.fiedler_low_ratio:.6f}",
                   str(s.ticks)]


def expand_grid(grid: dict, seeds: list[int]) -> list[Scenario]:
    """Cartesian product of a sweep grid with the seed list, in canonical order."""
    variants = [AlgorithmVariant.parse(v) for v in grid.get("variants", ["outwards", "inwards"])]
    scenarios = []
    for variant in sorted(variants, key=lambda v: v.value):
        for targets in sorted(grid.get("targets", [2])):
            for radius in sorted(grid.get("radii", [3.0])):
                for redundancy in sorted(grid.get("redundancies", [2])):
                    for los in sorted(int(x) for x in grid.get("los", [False])):
                        for seed in seeds:
                            scenarios.append(Scenario(
                                variant=variant, n_targets=targets,
                                target_radius=float(radius), redundancy=redundancy,
                                los_enabled=bool(los), seed=seed))
    return scenarios


def _run_one(args: tuple[Scenario, int]) -> tuple[tuple, list[str]]:
    scenario, fiedler_every = args
    try:
        res = run(scenario, fiedler_every=fiedler_every)
    except Exception as exc:  # a failed run must not kill the sweep
        res = RunResult(scenario, None, [], error=repr(exc))
    return scenario.key(), result_row(res)


def sweep(scenarios: list[Scenario], jobs: int = 1, fiedler_every: int = 1,
          out: IO[str] | None = None) -> list[list[str]]:
    """Run scenarios with bounded parallelism; rows come back in canonical order
    regardless of completion order."""
    tasks = [(sc, fiedler_every) for sc in scenarios]
    if jobs <= 1:
        results = dict(_run_one(t) for t in tasks)
    else:
        with Pool(processes=jobs) as pool:
            results = dict(pool.imap_unordered(_run_one, tasks, chunksize=1))
    rows = [results[k] for k in sorted(results)]
    if out is not None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(rows)
    return rows


def load_grid(path: str | Path) -> dict:
    grid = json.loads(Path(path).read_text())
    allowed = {"variants", "targets", "radii", "redundancies", "los"}
    unknown = set(grid) - allowed
    if unknown:
        raise ValueError(f"unknown grid keys: {sorted(unknown)}")
    return grid
