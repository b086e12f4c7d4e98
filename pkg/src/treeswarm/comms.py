"""Situated communication: range-limited broadcast with relative-geometry annotation.

Messages put in an outbox at tick t are delivered at tick t+1 to every robot
connected in the communication graph, annotated with the exact range, bearing
(receiver frame) and relative orientation at delivery time. A robot never
receives its own broadcast.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import IO, Optional

import numpy as np

from .core import Params, Role, Vec2, wrap_angle
from .world import World, comm_graph


class MessageKind(Enum):
    START_TREE = "start_tree"
    PARENT_CLAIM = "parent_claim"
    CHILD_ACK = "child_ack"
    WORKER_FLAG = "worker_flag"
    COUNT_REPORT = "count_report"
    CENTROID_REPORT = "centroid_report"
    BARRIER_DONE = "barrier_done"
    GO = "go"
    ROOT_HANDOFF = "root_handoff"
    HANDOFF_ACK = "handoff_ack"
    NEED_EDGE = "need_edge"
    SPARE_CLAIM = "spare_claim"
    TARGET_FORCE = "target_force"
    HEARTBEAT = "heartbeat"


@dataclass(slots=True)
class HeartbeatInfo:
    """Per-tick beacon payload: role, FSM summary and tree fields."""

    role: Role
    state: object  # protocol.FsmState; object-typed to avoid a module cycle
    rnd: int
    committed: bool
    parent: Optional[int]
    old_parent: Optional[int]
    depth: Optional[int]
    dist_root: Optional[float]
    need: object
    arrived: bool
    epoch: int


@dataclass(slots=True)
class Message:
    """Broadcast payload; unused fields stay None for kinds that don't need them."""

    sender: int
    kind: MessageKind
    rnd: int = 0
    to: Optional[int] = None          # addressed kinds (acks, handoff) filter on this
    parent: Optional[int] = None
    child: Optional[int] = None
    dist: Optional[float] = None
    count: Optional[int] = None
    workers: Optional[int] = None
    done: Optional[bool] = None
    phase: Optional[object] = None    # protocol.BarrierPhase
    vec: Optional[Vec2] = None        # always in the sender's local frame
    epoch: int = 0
    hb: Optional[HeartbeatInfo] = None


@dataclass(slots=True)
class SituatedReception:
    msg: Message
    range: float
    bearing: float            # angle to sender in the receiver's frame, (-pi, pi]
    rel_orientation: float    # sender frame relative to receiver frame, (-pi, pi]
    received_at: int


def to_local_frame(rec: SituatedReception) -> Vec2:
    """Sender position in the receiver's local frame."""
    return Vec2(rec.range * math.cos(rec.bearing), rec.range * math.sin(rec.bearing))


class NeighborTable:
    """Latest reception per neighbor, expired after the liveness period I."""

    def __init__(self) -> None:
        self.entries: dict[int, SituatedReception] = {}

    def update(self, rec: SituatedReception) -> None:
        self.entries[rec.msg.sender] = rec

    def expire(self, now: int, params: Params) -> list[int]:
        """Drop entries older than I seconds; return the dropped ids."""
        dropped = [rid for rid, rec in self.entries.items()
                   if (now - rec.received_at) * params.dt > params.I]
        for rid in dropped:
            del self.entries[rid]
        return dropped

    def __contains__(self, rid: int) -> bool:
        return rid in self.entries

    def get(self, rid: int) -> Optional[SituatedReception]:
        return self.entries.get(rid)

    def ids(self) -> list[int]:
        return sorted(self.entries)


def expire(table: NeighborTable, now: int, params: Params) -> NeighborTable:
    table.expire(now, params)
    return table


def deliver(world: World,
            outboxes: list[list[Message]],
            adj: np.ndarray | None = None,
            trace: IO[str] | None = None) -> list[list[SituatedReception]]:
    """Deliver every outbox message to the robots connected to the sender.

    Annotation uses ground truth at delivery time, so entries consumed on the
    tick they arrive are exact.
    """
    if adj is None:
        adj = comm_graph(world)
    n = world.n
    inboxes: list[list[SituatedReception]] = [[] for _ in range(n)]
    robots = world.robots
    now = world.tick
    for sender in range(n):
        box = outboxes[sender]
        if not box:
            continue
        ps = robots[sender].p
        ts = robots[sender].theta
        receivers = np.nonzero(adj[sender])[0]
        for r in receivers:
            pr = robots[r].p
            d = ps.dist(pr)
            bearing = wrap_angle(math.atan2(ps.y - pr.y, ps.x - pr.x) - robots[r].theta)
            rel = wrap_angle(ts - robots[r].theta)
            for msg in box:
                inboxes[r].append(SituatedReception(msg, d, bearing, rel, now))
                if trace is not None:
                    trace.write(json.dumps({
                        "tick": now, "sender": sender, "receiver": int(r),
                        "kind": msg.kind.value, "round": msg.rnd,
                    }) + "\n")
    return inboxes
