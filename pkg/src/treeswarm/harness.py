"""Omniscient structural checks, run against the live simulation every tick.

These assertions are global properties no single robot can verify locally:
tree shape after barriers, role uniqueness, insertion atomicity. The checker
raises on first violation so the run is marked invalid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .core import AlgorithmVariant, Role
from .protocol import BarrierPhase, RobotAgent
from .scenario import RunInvalid, Simulation


@dataclass
class InvariantChecker:
    strict_single_tree: bool = True
    violations: list[str] = field(default_factory=list)
    raise_on_violation: bool = True
    _pending_inserts: list[tuple[int, int, int]] = field(default_factory=list)

    def _fail(self, sim: Simulation, text: str) -> None:
        msg = f"tick {sim.world.tick}: {text}"
        self.violations.append(msg)
        if self.raise_on_violation:
            raise RunInvalid(msg)

    def after_tick(self, sim: Simulation) -> None:
        agents = sim.agents
        self._check_roles(sim, agents)
        self._check_acyclic(sim, agents)
        self._check_pending_inserts(sim, agents)
        for a in agents:
            for tick_events in [a.events]:
                for ev in tick_events:
                    if ev[0] == "go" and ev[2] is BarrierPhase.PARENT and ev[3] == "condition":
                        self._check_single_tree(sim, agents)
                    if ev[0] == "go" and ev[2] is BarrierPhase.GROWTH:
                        if a.variant is AlgorithmVariant.OUTWARDS:
                            self._check_worker_leaves(sim, agents, context="post-pruning")
                    if ev[0] == "inserted":
                        self._pending_inserts.append((a.rid, ev[1], ev[2]))
        if agents and agents[0].variant is AlgorithmVariant.INWARDS:
            self._check_worker_leaves(sim, agents, context="inwards")
        for a in agents:
            if not (a.pos.is_finite() and a.vel.is_finite()):
                self._fail(sim, f"robot {a.rid} has non-finite state")

    def _check_roles(self, sim: Simulation, agents: list[RobotAgent]) -> None:
        roots = [a for a in agents if a.role is Role.ROOT]
        if len(roots) == 0:
            self._fail(sim, "no root robot")
        elif len(roots) == 2:
            a, b = roots
            handshake = a.handoff_target == b.rid or b.handoff_target == a.rid \
                or abs(a.epoch - b.epoch) == 1
            if not handshake:
                self._fail(sim, f"two roots ({a.rid}, {b.rid}) outside a handoff handshake")
        elif len(roots) > 2:
            self._fail(sim, f"{len(roots)} roots")

    def _check_acyclic(self, sim: Simulation, agents: list[RobotAgent]) -> None:
        for a in agents:
            seen = set()
            node = a
            while node.parent is not None:
                if node.rid in seen:
                    self._fail(sim, f"parent cycle through robot {a.rid}")
                    return
                seen.add(node.rid)
                node = agents[node.parent]

    def _committed(self, agents: list[RobotAgent]) -> list[RobotAgent]:
        rnd = max(a.rnd for a in agents)
        return [a for a in agents if a.rnd == rnd and a.committed]

    def _check_single_tree(self, sim: Simulation, agents: list[RobotAgent]) -> None:
        """At a condition-released parent barrier the committed links must form
        one tree rooted at the root robot."""
        members = self._committed(agents)
        roots = [a for a in members if a.role is Role.ROOT]
        if len(roots) != 1:
            self._fail(sim, f"parent barrier with {len(roots)} committed roots")
            return
        root = roots[0]
        for a in members:
            node = a
            hops = 0
            while node.parent is not None and hops <= len(agents):
                node = agents[node.parent]
                hops += 1
            if node.rid != root.rid:
                self._fail(sim, f"robot {a.rid} not attached to root {root.rid} at parent barrier")
                return
        if self.strict_single_tree and len(members) < len(agents) \
                and agents[0].variant is AlgorithmVariant.OUTWARDS:
            missing = sorted(set(range(len(agents))) - {a.rid for a in members})
            self._fail(sim, f"outwards parent barrier released without robots {missing}")

    def _check_worker_leaves(self, sim: Simulation, agents: list[RobotAgent], context: str) -> None:
        # restrict to the newest round: stragglers still flooding hold old links
        rnd = max(a.rnd for a in agents)
        members = [a for a in agents if a.rnd == rnd and a.parent is not None]
        parents = {a.parent for a in members}
        for a in members:
            if a.rid not in parents and a.role is not Role.WORKER:
                self._fail(sim, f"{context}: non-worker leaf {a.rid} ({a.role.value})")
                return

    def _check_pending_inserts(self, sim: Simulation, agents: list[RobotAgent]) -> None:
        done, keep = [], []
        for spare, child, parent in self._pending_inserts:
            s, c = agents[spare], agents[child]
            if s.parent == parent and c.parent == spare:
                done.append((spare, child, parent))
            else:
                self._fail(sim, f"insertion of {spare} into edge ({child}, {parent}) "
                                f"did not split the edge (spare parent {s.parent}, "
                                f"child parent {c.parent})")
        self._pending_inserts = keep
