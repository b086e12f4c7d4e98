"""Per-robot behavior: the tree-formation state machine and its sub-machines.

Each robot steps once per tick reading only its own state and inbox; all
cross-robot influence flows through next-tick messages, so stepping order is
irrelevant and runs are deterministic. A robot is *committed* when it holds a
parent for the current round (the root always is), and *anchored* once its
depth is known, i.e. its parent chain reaches the root.

The tree-formation loop per round:

  start-tree flood (root)  ->  parent selection (variant-specific)
  ->  parent barrier       ->  grow tree (pruning / spare insertion)
  ->  growth barrier       ->  root selection (centroid handoff chain)
  ->  root barrier         ->  next flood after the reconfiguration period
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .aggregation import centroid_step, count_step, root_handoff
from .comms import HeartbeatInfo, Message, MessageKind, NeighborTable, SituatedReception, to_local_frame
from .core import AlgorithmVariant, Params, Role, RobotId, Vec2, ZERO
from .motion import ForceBreakdown, avoid_force, compose, link_force, orbit, steer_to, target_force
from .world import World

_EST_IMPROVEMENT = 1e-6


class FsmState(Enum):
    INIT = "init"
    START_TREE = "start_tree"
    SELECT_PARENT = "select_parent"
    WAIT_PARENT_BARRIER = "wait_parent_barrier"
    GROW_TREE = "grow_tree"
    WAIT_GROWTH_BARRIER = "wait_growth_barrier"
    SELECT_ROOT = "select_root"
    WAIT_ROOT_BARRIER = "wait_root_barrier"


class BarrierPhase(Enum):
    PARENT = 1
    GROWTH = 2
    ROOT = 3


class NeedState(Enum):
    NO_NEED = "no_need"
    NEED = "need"
    AWAIT = "await"


class SpareMode(Enum):
    WAIT = "wait"
    EXTEND_EDGE = "extend_edge"
    ADJUST_POSITION = "adjust_position"


_GROW_STATES = (FsmState.GROW_TREE, FsmState.WAIT_GROWTH_BARRIER)
_SELECT_STATES = (FsmState.SELECT_PARENT, FsmState.WAIT_PARENT_BARRIER)


def init_roles(world: World, targets: list[Vec2]) -> tuple[list[Role], dict[int, int]]:
    """Deterministic pre-deployment assignment.

    Each target gets the nearest unassigned robot as its worker (ties to the
    lowest id); the remaining robot nearest the cluster centroid becomes the
    root; everyone else starts as a spare. Returns roles and the
    worker-id -> target-index pairing.
    """
    n = world.n
    if n < len(targets) + 1:
        raise ValueError(f"need at least {len(targets) + 1} robots for {len(targets)} targets, got {n}")
    roles = [Role.SPARE] * n
    pairing: dict[int, int] = {}
    taken: set[int] = set()
    for t_idx, tgt in enumerate(targets):
        best = min((rid for rid in range(n) if rid not in taken),
                   key=lambda rid: (world.robots[rid].p.dist(tgt), rid))
        roles[best] = Role.WORKER
        pairing[best] = t_idx
        taken.add(best)
    cx = sum(r.p.x for r in world.robots) / n
    cy = sum(r.p.y for r in world.robots) / n
    centroid = Vec2(cx, cy)
    root = min((rid for rid in range(n) if rid not in taken),
               key=lambda rid: (world.robots[rid].p.dist(centroid), rid))
    roles[root] = Role.ROOT
    return roles, pairing


@dataclass(slots=True)
class TreeLinks:
    """Snapshot of a robot's tree attachment, for traces and checks."""

    old_parent: Optional[int]
    new_parent: Optional[int]
    children: frozenset[int]
    depth: Optional[int]
    useful: bool
    rnd: int


class RobotAgent:
    """One robot's protocol state; stepped once per tick by the simulation."""

    def __init__(self, rid: RobotId, role: Role, variant: AlgorithmVariant,
                 params: Params, n_robots: int, n_targets: int,
                 target: Optional[Vec2] = None):
        self.rid = rid
        self.role = role
        self.variant = variant
        self.params = params
        self.n_robots = n_robots
        self.n_targets = n_targets
        self.target = target

        # odometry mirror, refreshed by the simulation before each step
        self.pos = ZERO
        self.vel = ZERO
        self.theta = 0.0

        # situated neighborhood
        self.table = NeighborTable()
        self.hb: dict[int, HeartbeatInfo] = {}
        self.nbr_pos: dict[int, Vec2] = {}

        # FSM
        self.state = FsmState.INIT
        self.rnd = 0
        self.dist_root: Optional[float] = None
        self.phase_done = 0                      # highest BarrierPhase value applied this round
        self.go_relayed: set[tuple[int, BarrierPhase]] = set()

        # tree links
        self.parent: Optional[int] = None
        self.children: set[int] = set()
        self.old_parent: Optional[int] = None
        self.old_children: set[int] = set()
        self.depth: Optional[int] = 1 if role is Role.ROOT else None
        self.joined = role is Role.ROOT
        self.last_parent_world: Optional[Vec2] = None

        # aggregation state (per round)
        self.child_count: dict[int, int] = {}
        self.child_workers: dict[int, int] = {}
        self.child_done: dict[int, tuple[int, bool]] = {}   # child -> (phase value, done)
        self.child_q: dict[int, Vec2] = {}       # world frame
        self.child_tf: dict[int, Vec2] = {}      # world frame, refreshed per tick
        self.count: Optional[int] = None
        self.workers_below: Optional[int] = None
        self.centroid_world: Optional[Vec2] = None

        # root bookkeeping
        self.epoch = 0
        self.round_start = 0
        self.last_flood: Optional[int] = None
        self.go_emitted: set[tuple[int, BarrierPhase]] = set()
        self.handoff_target: Optional[int] = None
        self.handoff_since: Optional[int] = None
        self.handoff_attempts = 0

        self.anchor_lost_since: Optional[int] = None

        # spare / need sub-machines
        self.need = NeedState.NO_NEED
        self.await_since: Optional[int] = None
        self.await_edge: Optional[tuple[int, int]] = None
        self.spare_mode = SpareMode.WAIT
        self.claim_edge: Optional[tuple[int, int]] = None
        self.claim_tick: Optional[int] = None
        self.pending_insert: Optional[tuple[int, int]] = None   # (child, parent)
        self.reference: Optional[int] = None
        self.need_ads: dict[int, tuple[int, int]] = {}          # advertiser -> (parent, tick)
        self.spare_claims: dict[int, tuple[int, int, int]] = {} # spare -> (child, parent, tick)
        self.arrived = False

        self.events: list[tuple] = []
        self.last_breakdown = ForceBreakdown()

    # -- frame helpers -----------------------------------------------------

    def _to_world_vec(self, v: Vec2, rel_orientation: float) -> Vec2:
        """A free vector in a sender's frame, rotated into the world frame."""
        return v.rotated(self.theta + rel_orientation)

    def _to_local_vec(self, v: Vec2) -> Vec2:
        return v.rotated(-self.theta)

    def _sender_world_pos(self, rec: SituatedReception) -> Vec2:
        return self.pos + to_local_frame(rec).rotated(self.theta)

    @property
    def committed(self) -> bool:
        return self.role is Role.ROOT or self.parent is not None

    @property
    def anchored(self) -> bool:
        return self.committed and self.depth is not None

    def links(self) -> TreeLinks:
        return TreeLinks(old_parent=self.old_parent, new_parent=self.parent,
                         children=frozenset(self.children), depth=self.depth,
                         useful=bool(self.workers_below), rnd=self.rnd)

    # -- main step ---------------------------------------------------------

    def step(self, tick: int, receptions: list[SituatedReception]) -> tuple[list[Message], Vec2]:
        out: list[Message] = []
        self.events.clear()
        self.child_tf.clear()
        self._apply_pending_insert(out)
        for rec in receptions:
            self._ingest(rec, tick, out)
        self._expire(tick)
        self._reconcile(tick)
        self._fsm(tick, out)
        self._need_fsm(tick, out)
        self._spare_fsm(tick, out)
        self._aggregate(tick, out)
        self._root_barriers(tick, out)
        u = self._motion(tick)
        out.append(self._heartbeat())
        return out, u

    # -- message handling ----------------------------------------------------

    def _apply_pending_insert(self, out: list[Message]) -> None:
        if self.pending_insert is None:
            return
        child, parent = self.pending_insert
        self.pending_insert = None
        self.parent = parent
        self.role = Role.CONNECTOR
        self.joined = True
        self.spare_mode = SpareMode.WAIT
        self.claim_edge = None
        self.claim_tick = None
        self.children.add(child)
        self.events.append(("inserted", child, parent))

    def _ingest(self, rec: SituatedReception, tick: int, out: list[Message]) -> None:
        msg = rec.msg
        s = msg.sender
        self.table.update(rec)
        self.nbr_pos[s] = self._sender_world_pos(rec)
        kind = msg.kind
        if kind is MessageKind.HEARTBEAT:
            info = msg.hb
            self.hb[s] = info
            if info.rnd > self.rnd and info.dist_root is not None:
                # late catch-up for robots that missed the flood itself
                self._adopt_round(info.rnd, tick, from_other=True)
                self.dist_root = info.dist_root + rec.range
                out.append(Message(self.rid, MessageKind.START_TREE, rnd=self.rnd, dist=self.dist_root))
            elif (info.rnd == self.rnd and self.dist_root is None
                    and info.dist_root is not None and self.role is not Role.ROOT):
                self.dist_root = info.dist_root + rec.range
            if (self.role is Role.ROOT and info.role is Role.ROOT and s != self.rid
                    and (info.epoch > self.epoch or (info.epoch == self.epoch and s < self.rid))):
                # duplicate-root healing after a broken handoff handshake
                self._demote_root()
        elif kind is MessageKind.START_TREE:
            if msg.rnd > self.rnd:
                self._adopt_round(msg.rnd, tick, from_other=True)
                self.dist_root = msg.dist + rec.range
                out.append(Message(self.rid, MessageKind.START_TREE, rnd=self.rnd, dist=self.dist_root))
            elif msg.rnd == self.rnd and self.role is not Role.ROOT:
                est = msg.dist + rec.range
                # the estimate freezes once committed: parent selection orders
                # robots by (estimate, id), and an estimate that keeps falling
                # after commitment would let a descendant-side neighbor claim
                # this robot back, closing a parent cycle
                if self.parent is None and (self.dist_root is None
                                            or est < self.dist_root - _EST_IMPROVEMENT):
                    self.dist_root = est
                    out.append(Message(self.rid, MessageKind.START_TREE, rnd=self.rnd, dist=est))
        elif kind is MessageKind.PARENT_CLAIM:
            if msg.rnd != self.rnd:
                return
            if msg.parent == self.rid:
                self.children.add(s)
                if msg.child is not None:
                    self.children.discard(msg.child)
                out.append(Message(self.rid, MessageKind.CHILD_ACK, rnd=self.rnd, to=s))
                # being claimed pulls this robot into the tree: it now selects
                # its own parent, recursively toward the root
                self.joined = True
                if self.role is Role.SPARE:
                    self.role = Role.CONNECTOR
                    self.spare_mode = SpareMode.WAIT
                    self.claim_edge = None
            elif msg.child == self.rid:
                # a spare completed an insertion into my parent edge
                self.parent = s
                self.depth = None
                self.events.append(("reparented", s))
        elif kind is MessageKind.GO:
            self._handle_go(msg, tick, out)
        elif kind is MessageKind.COUNT_REPORT:
            if msg.rnd == self.rnd and s in self.children:
                self.child_count[s] = msg.count
        elif kind is MessageKind.WORKER_FLAG:
            if msg.rnd == self.rnd and s in self.children:
                self.child_workers[s] = msg.workers
        elif kind is MessageKind.BARRIER_DONE:
            if msg.rnd == self.rnd and s in self.children:
                self.child_done[s] = (msg.phase.value, msg.done)
        elif kind is MessageKind.CENTROID_REPORT:
            if msg.rnd == self.rnd and s in self.children:
                self.child_q[s] = self._to_world_vec(msg.vec, rec.rel_orientation)
        elif kind is MessageKind.TARGET_FORCE:
            if s in self.children:
                self.child_tf[s] = self._to_world_vec(msg.vec, rec.rel_orientation)
        elif kind is MessageKind.NEED_EDGE:
            if msg.parent is not None:
                self.need_ads[s] = (msg.parent, tick)
        elif kind is MessageKind.SPARE_CLAIM:
            self.spare_claims[s] = (msg.child, msg.parent, tick)
            if (self.role is Role.SPARE and self.spare_mode is SpareMode.EXTEND_EDGE
                    and self.claim_edge == (msg.child, msg.parent) and s < self.rid):
                # lost the edge to a lower-id spare
                self.spare_mode = SpareMode.WAIT
                self.claim_edge = None
                self.claim_tick = None
        elif kind is MessageKind.ROOT_HANDOFF:
            if msg.to == self.rid and msg.rnd == self.rnd:
                if self.role is not Role.ROOT:
                    self._accept_root(msg, rec)
                if self.role is Role.ROOT and self.epoch == msg.epoch + 1:
                    out.append(Message(self.rid, MessageKind.HANDOFF_ACK, rnd=self.rnd, to=s))
        elif kind is MessageKind.HANDOFF_ACK:
            if (msg.to == self.rid and self.role is Role.ROOT
                    and self.handoff_target == s and msg.rnd == self.rnd):
                self._demote_root(new_parent=s)
        elif kind is MessageKind.CHILD_ACK:
            if msg.to == self.rid:
                self.events.append(("acked", s))

    def _handle_go(self, msg: Message, tick: int, out: list[Message]) -> None:
        if msg.rnd > self.rnd:
            self._adopt_round(msg.rnd, tick, from_other=True)
        if msg.rnd != self.rnd or msg.phase is None:
            return
        key = (msg.rnd, msg.phase)
        if key not in self.go_relayed:
            self.go_relayed.add(key)
            out.append(Message(self.rid, MessageKind.GO, rnd=msg.rnd, phase=msg.phase))
        # apply any skipped phases in order so entry actions are never missed
        for value in range(self.phase_done + 1, msg.phase.value + 1):
            self._apply_phase(BarrierPhase(value), tick)

    def _apply_phase(self, phase: BarrierPhase, tick: int) -> None:
        self.phase_done = phase.value
        self.events.append(("phase", self.rnd, phase))
        if phase is BarrierPhase.PARENT:
            self._enter_grow(tick)
        elif phase is BarrierPhase.GROWTH:
            if self.role is Role.ROOT:
                self.state = FsmState.SELECT_ROOT
                self.handoff_target = None
                self.handoff_attempts = 0
            else:
                self.state = FsmState.WAIT_ROOT_BARRIER
        elif phase is BarrierPhase.ROOT:
            self.state = FsmState.START_TREE

    def _adopt_round(self, rnd: int, tick: int, from_other: bool) -> None:
        """Start a new round: the current tree becomes the old tree."""
        if from_other and self.role is Role.ROOT:
            # another robot flooded a newer round; it owns the root role now
            self.role = Role.CONNECTOR
        self.rnd = rnd
        self.old_parent = self.parent
        self.old_children = set(self.children)
        self.parent = None
        self.children = set()
        self.depth = 1 if self.role is Role.ROOT else None
        self.joined = self.role is Role.ROOT
        self.dist_root = 0.0 if self.role is Role.ROOT else None
        self.phase_done = 0
        self.child_count.clear()
        self.child_workers.clear()
        self.child_done.clear()
        self.child_q.clear()
        self.count = None
        self.workers_below = None
        self.need = NeedState.NO_NEED
        self.await_since = None
        self.await_edge = None
        self.need_ads.clear()
        self.spare_claims.clear()
        if self.spare_mode is SpareMode.EXTEND_EDGE:
            self.spare_mode = SpareMode.WAIT
        self.claim_edge = None
        self.claim_tick = None
        self.pending_insert = None
        self.go_relayed = {k for k in self.go_relayed if k[0] >= rnd}
        self.go_emitted = {k for k in self.go_emitted if k[0] >= rnd}
        self.round_start = tick
        self.state = FsmState.SELECT_PARENT
        self.events.append(("adopt", rnd))

    def _accept_root(self, msg: Message, rec: SituatedReception) -> None:
        centroid_local = to_local_frame(rec) + msg.vec.rotated(rec.rel_orientation)
        self.centroid_world = self.pos + centroid_local.rotated(self.theta)
        ex_parent = self.parent
        self.role = Role.ROOT
        self.epoch = msg.epoch + 1
        self.parent = None
        self.depth = 1
        self.joined = True
        self.children.add(msg.sender)
        if ex_parent is not None:
            self.children.discard(ex_parent)
        self.state = FsmState.SELECT_ROOT
        self.phase_done = max(self.phase_done, BarrierPhase.GROWTH.value)
        self.handoff_target = None
        self.handoff_attempts = 0
        self.events.append(("root_accepted", msg.sender))

    def _demote_root(self, new_parent: Optional[int] = None) -> None:
        if new_parent is not None:
            self.children.discard(new_parent)
        if self.children:
            self.role = Role.CONNECTOR
            self.parent = new_parent
        else:
            # childless ex-root would be a useless leaf; rejoin the spare pool
            self.role = Role.SPARE
            self.parent = None
            self.joined = False
            self.spare_mode = SpareMode.WAIT
            self.reference = new_parent
        self.depth = None
        self.handoff_target = None
        self.handoff_since = None
        if self.state is FsmState.SELECT_ROOT:
            self.state = FsmState.WAIT_ROOT_BARRIER
        self.events.append(("root_released", new_parent))

    # -- liveness and bookkeeping -------------------------------------------

    def _expire(self, tick: int) -> None:
        for rid in self.table.expire(tick, self.params):
            self.hb.pop(rid, None)
            self.nbr_pos.pop(rid, None)
            self.need_ads.pop(rid, None)
            self.spare_claims.pop(rid, None)
        horizon = self.params.I / self.params.dt
        self.need_ads = {k: v for k, v in self.need_ads.items() if tick - v[1] <= horizon}
        self.spare_claims = {k: v for k, v in self.spare_claims.items() if tick - v[2] <= horizon}

    def _reconcile(self, tick: int) -> None:
        # children: remove on expiry, on explicit re-parenting, or on a newer
        # round; a fresh beacon naming this robot as parent (re)admits the
        # sender, which heals one-tick races around insertions and handoffs
        for c in sorted(self.children):
            info = self.hb.get(c)
            if c not in self.table:
                self.children.discard(c)
            elif info is not None and (
                    info.rnd > self.rnd
                    or (info.rnd == self.rnd and info.parent is not None and info.parent != self.rid)
                    or (info.rnd == self.rnd and info.role is Role.ROOT)):
                self.children.discard(c)
        for c in sorted(self.hb):
            info = self.hb[c]
            if (c in self.table and info.rnd == self.rnd
                    and info.parent == self.rid and info.role is not Role.ROOT):
                self.children.add(c)
        for c in sorted(self.old_children):
            info = self.hb.get(c)
            if c not in self.table or (info is not None and info.old_parent != self.rid):
                self.old_children.discard(c)
        for store in (self.child_count, self.child_workers, self.child_done, self.child_q):
            for c in list(store):
                if c not in self.children:
                    del store[c]
        # parent liveness: silent or vanished parent triggers re-selection
        if self.parent is not None and self.parent not in self.table:
            self.last_parent_world = self.nbr_pos.get(self.parent, self.last_parent_world)
            self.events.append(("orphaned", self.parent))
            self.parent = None
            self.depth = None
        if self.old_parent is not None and self.old_parent not in self.table:
            self.old_parent = None
        # depth from the parent's beacon; root is always depth 1
        if self.role is Role.ROOT:
            self.depth = 1
        elif self.parent is not None:
            info = self.hb.get(self.parent)
            if info is not None and info.rnd == self.rnd and info.depth is not None:
                self.depth = info.depth + 1
            elif info is not None and info.rnd != self.rnd:
                self.depth = None
            if self.depth is not None and self.depth > self.n_robots:
                # depth runaway means a stale-information cycle: restart selection
                self.events.append(("cycle_break",))
                self.parent = None
                self.depth = None
        # track how long this robot has been committed but cut off from the
        # root; _fsm switches parent on timeout when an alternative exists
        if self.committed and self.depth is None and self.role is not Role.ROOT:
            if self.anchor_lost_since is None:
                self.anchor_lost_since = tick
        else:
            self.anchor_lost_since = None
        if self.target is not None:
            self.arrived = self.pos.dist(self.target) <= self.params.target_reach

    # -- FSM ------------------------------------------------------------------

    def _fsm(self, tick: int, out: list[Message]) -> None:
        if self.state is FsmState.INIT:
            if self.role is Role.ROOT:
                self._flood(tick, out)
            return
        if self.state is FsmState.START_TREE and self.role is Role.ROOT:
            # the reconfiguration period runs from the round start, so a root
            # that took the role mid-round keeps the same flood cadence
            if (tick - self.round_start) * self.params.dt >= self.params.R:
                self._flood(tick, out)
            return
        if self.state is FsmState.SELECT_PARENT and self.committed:
            self.state = FsmState.WAIT_PARENT_BARRIER
        if self.state is FsmState.WAIT_PARENT_BARRIER and not self.committed:
            self.state = FsmState.SELECT_PARENT
        if not self.committed and self._selection_enabled():
            choice = (self.select_parent_outwards() if self.variant is AlgorithmVariant.OUTWARDS
                      else self.select_parent_inwards())
            if choice is not None:
                self._commit_to(choice, out)
        elif (self.anchor_lost_since is not None
                and tick - self.anchor_lost_since > max(30, int(3 * self.params.I / self.params.dt))):
            # detached fragment (selection cycle or lost chain head): switch to
            # an anchored alternative when one exists, otherwise stay linked
            self.anchor_lost_since = tick
            choice = (self.select_parent_outwards() if self.variant is AlgorithmVariant.OUTWARDS
                      else self.select_parent_inwards())
            if choice is not None and choice != self.parent:
                self.events.append(("anchor_timeout", self.parent))
                self._commit_to(choice, out)
        if self.state in _GROW_STATES:
            if (self.variant is AlgorithmVariant.OUTWARDS and self.role is Role.SPARE
                    and self.parent is not None and not self.children):
                self._detach()
            if self.role is Role.WORKER and self.state is FsmState.GROW_TREE and self.arrived:
                self.state = FsmState.WAIT_GROWTH_BARRIER

    def _selection_enabled(self) -> bool:
        if self.role is Role.ROOT or self.dist_root is None:
            return False
        if self.variant is AlgorithmVariant.OUTWARDS:
            if self.role is Role.SPARE:
                return self.state in _SELECT_STATES
            return True
        # inwards: workers always; others only once pulled into the tree
        return self.role is Role.WORKER or (self.joined and self.role is not Role.SPARE)

    def select_parent_outwards(self) -> Optional[int]:
        """Nearest anchored non-worker neighbor, ties to the lowest id."""
        best = None
        for rid in self.table.ids():
            info = self.hb.get(rid)
            if info is None or info.rnd != self.rnd or info.depth is None:
                continue
            if info.role is Role.WORKER or rid in self.children:
                continue
            d = (self.nbr_pos[rid] - self.pos).norm()
            key = (d, rid)
            if best is None or key < best:
                best = key
        return best[1] if best is not None else None

    def select_parent_inwards(self) -> Optional[int]:
        """Neighbor with the smallest root-distance estimate, in tree or not.

        The candidate's (estimate, id) must order strictly below ours, which
        rules out claim cycles; the estimate always decreases toward the root.
        Candidates already within the emergency range are preferred over ones
        beyond it: attaching past E would start the edge in an emergency
        maneuver and physically drag this robot (and its subtree) backward.
        """
        if self.dist_root is None:
            return None
        me = (self.dist_root, self.rid)
        best_near = None
        best_far = None
        for rid in self.table.ids():
            info = self.hb.get(rid)
            if info is None or info.rnd != self.rnd or info.role is Role.WORKER:
                continue
            if rid in self.children:
                continue
            est = 0.0 if info.role is Role.ROOT else info.dist_root
            if est is None:
                continue
            key = (est, rid)
            if key >= me:
                continue
            if (self.nbr_pos[rid] - self.pos).norm() <= self.params.E:
                if best_near is None or key < best_near:
                    best_near = key
            elif best_far is None or key < best_far:
                best_far = key
        if best_near is not None:
            return best_near[1]
        return best_far[1] if best_far is not None else None

    def _commit_to(self, parent: int, out: list[Message]) -> None:
        self.parent = parent
        self.joined = True
        self.last_parent_world = None
        if self.role is Role.SPARE:
            self.role = Role.CONNECTOR
            self.spare_mode = SpareMode.WAIT
            self.claim_edge = None
        info = self.hb.get(parent)
        if info is not None and info.rnd == self.rnd and info.depth is not None:
            self.depth = info.depth + 1
        out.append(Message(self.rid, MessageKind.PARENT_CLAIM, rnd=self.rnd, parent=parent))
        self.events.append(("committed", parent))
        if self.state is FsmState.SELECT_PARENT:
            self.state = FsmState.WAIT_PARENT_BARRIER

    def _flood(self, tick: int, out: list[Message]) -> None:
        self._adopt_round(self.rnd + 1, tick, from_other=False)
        self.last_flood = tick
        self.state = FsmState.WAIT_PARENT_BARRIER
        out.append(Message(self.rid, MessageKind.START_TREE, rnd=self.rnd, dist=0.0))
        self.events.append(("flood", self.rnd))

    def _enter_grow(self, tick: int) -> None:
        self.old_parent = None
        self.old_children.clear()
        self.state = FsmState.GROW_TREE
        self.need = NeedState.NO_NEED
        self.child_done.clear()
        if self.variant is AlgorithmVariant.OUTWARDS:
            if (self.role is Role.CONNECTOR and self.committed
                    and self.workers_below == 0):
                self.role = Role.SPARE   # useless branch; disbands leaf-first
        else:
            if self.role is Role.CONNECTOR and not self.committed and not self.children:
                self.role = Role.SPARE
                self.spare_mode = SpareMode.WAIT

    def _detach(self) -> None:
        self.reference = self.parent
        if self.parent is not None:
            self.last_parent_world = self.nbr_pos.get(self.parent, self.last_parent_world)
        self.parent = None
        self.depth = None
        self.joined = False
        self.spare_mode = SpareMode.WAIT
        self.events.append(("detached",))

    # -- spare / need sub-machines --------------------------------------------

    def parent_distance(self) -> Optional[float]:
        if self.parent is None or self.parent not in self.nbr_pos:
            return None
        return (self.nbr_pos[self.parent] - self.pos).norm()

    def _need_fsm(self, tick: int, out: list[Message]) -> None:
        if self.role is Role.SPARE or not self.committed:
            return
        if self.phase_done < BarrierPhase.PARENT.value:
            return
        if self.need is NeedState.NO_NEED:
            d = self.parent_distance()
            child_need = any(
                (info := self.hb.get(c)) is not None and info.need is NeedState.NEED
                for c in sorted(self.children))
            if child_need or (d is not None and d > self.params.E and self._pulling_outward()):
                self.need = NeedState.NEED
        if self.need is NeedState.NEED:
            claim = self._claim_on_my_edges()
            parent_info = self.hb.get(self.parent) if self.parent is not None else None
            if claim is not None:
                self.need = NeedState.AWAIT
                self.await_since = tick
                self.await_edge = claim
            elif parent_info is not None and parent_info.need is NeedState.AWAIT:
                self.need = NeedState.AWAIT
                self.await_since = tick
                self.await_edge = None
            else:
                vec = None
                if self.parent is not None and self.parent in self.nbr_pos:
                    vec = self._to_local_vec(self.nbr_pos[self.parent] - self.pos)
                if self.parent is not None and vec is not None:
                    out.append(Message(self.rid, MessageKind.NEED_EDGE, rnd=self.rnd,
                                       parent=self.parent, vec=vec))
        elif self.need is NeedState.AWAIT:
            horizon = self.params.I / self.params.dt
            fresh_claim = self._claim_on_my_edges() if self.await_edge is not None else None
            inserted = False
            if self.await_edge is not None:
                child, parent = self.await_edge
                if child == self.rid:
                    inserted = self.parent != parent
                else:
                    info = self.hb.get(child)
                    inserted = info is not None and info.parent not in (self.rid, None)
            if inserted or (fresh_claim is None and self.await_since is not None
                            and tick - self.await_since > horizon
                            and self.await_edge is not None):
                self.need = NeedState.NO_NEED
                self.await_edge = None
                self.await_since = None
            elif self.await_edge is None:
                parent_info = self.hb.get(self.parent) if self.parent is not None else None
                if parent_info is None or parent_info.need is not NeedState.AWAIT:
                    self.need = NeedState.NO_NEED
                    self.await_since = None

    def _pulling_outward(self) -> bool:
        """True when this robot's target demand points away from its parent,
        i.e. a stretched edge reflects unmet reach rather than a transient."""
        if self.parent is None or self.parent not in self.nbr_pos:
            return False
        if self.role is Role.WORKER and self.target is not None:
            pull = target_force(self.pos, self.target, self.params)
        else:
            pull = ZERO
            for c in sorted(self.child_tf):
                pull = pull + self.child_tf[c]
        if pull.norm() < 1e-9:
            return False
        toward_parent = (self.nbr_pos[self.parent] - self.pos).unit()
        return pull.dot(toward_parent) < 0.0

    def _claim_on_my_edges(self) -> Optional[tuple[int, int]]:
        """A live spare claim naming an edge incident to this robot."""
        for spare in sorted(self.spare_claims):
            child, parent, _ = self.spare_claims[spare]
            if child == self.rid and parent == self.parent and self.parent is not None:
                return (child, parent)
            if parent == self.rid and child in self.children:
                return (child, parent)
        return None

    def _spare_fsm(self, tick: int, out: list[Message]) -> None:
        if self.role is not Role.SPARE or self.committed:
            return
        if self.spare_mode is SpareMode.EXTEND_EDGE:
            if not self._claim_still_valid():
                self.spare_mode = SpareMode.WAIT
                self.claim_edge = None
                self.claim_tick = None
            else:
                child, parent = self.claim_edge
                out.append(Message(self.rid, MessageKind.SPARE_CLAIM, rnd=self.rnd,
                                   child=child, parent=parent))
                mid = (self.nbr_pos[child] + self.nbr_pos[parent]) * 0.5
                if (mid - self.pos).norm() <= self.params.J and self.claim_tick is not None \
                        and tick > self.claim_tick:
                    # rewire: I take the parent side, the child re-parents to me
                    out.append(Message(self.rid, MessageKind.PARENT_CLAIM, rnd=self.rnd,
                                       parent=parent, child=child))
                    self.pending_insert = (child, parent)
                return
        # WAIT: scan for edges in need, then either claim one or adjust
        # position. Claims are valid any time after the parent barrier, when
        # the round's tree is stable; recruitment stays live through root
        # selection and the wait for the next reconfiguration.
        if self.phase_done >= BarrierPhase.PARENT.value:
            edge = self._find_needed_edge()
            if edge is not None:
                self.claim_edge = edge
                self.claim_tick = tick
                self.spare_mode = SpareMode.EXTEND_EDGE
                out.append(Message(self.rid, MessageKind.SPARE_CLAIM, rnd=self.rnd,
                                   child=edge[0], parent=edge[1]))
                self.events.append(("claimed", edge))
                return
        self.spare_mode = SpareMode.ADJUST_POSITION

    def _claim_still_valid(self) -> bool:
        if self.claim_edge is None:
            return False
        child, parent = self.claim_edge
        if child not in self.table or parent not in self.table:
            return False
        info = self.hb.get(child)
        if info is None or info.rnd != self.rnd or info.parent != parent:
            return False
        return True

    def _find_needed_edge(self) -> Optional[tuple[int, int]]:
        """Nearest advertised edge with both endpoints visible; ties by child id."""
        best_key = None
        best_edge = None
        for child in sorted(self.need_ads):
            parent, _ = self.need_ads[child]
            if child not in self.table or parent not in self.table:
                continue
            info = self.hb.get(child)
            if info is None or info.rnd != self.rnd or info.parent != parent:
                continue
            # yield to a lower-id spare already claiming this edge
            contested = any(sp < self.rid and (c, p) == (child, parent)
                            for sp, (c, p, _) in self.spare_claims.items())
            if contested:
                continue
            mid = (self.nbr_pos[child] + self.nbr_pos[parent]) * 0.5
            key = ((mid - self.pos).norm(), child)
            if best_key is None or key < best_key:
                best_key = key
                best_edge = (child, parent)
        return best_edge

    # -- aggregation and barriers ----------------------------------------------

    def _aggregate(self, tick: int, out: list[Message]) -> None:
        if not self.committed:
            return
        in_selection = self.phase_done < BarrierPhase.PARENT.value
        kids = sorted(self.children)
        # worker-subtree aggregation (branch usefulness)
        if all(c in self.child_workers for c in kids):
            self.workers_below = (1 if self.role is Role.WORKER else 0) \
                + sum(self.child_workers[c] for c in kids)
        # node count
        if self.depth is not None and all(c in self.child_count for c in kids):
            self.count = count_step(self.depth, [self.child_count[c] for c in kids])
        else:
            self.count = None
        if in_selection and self.parent is not None:
            if self.workers_below is not None:
                out.append(Message(self.rid, MessageKind.WORKER_FLAG, rnd=self.rnd,
                                   workers=self.workers_below))
            if self.count is not None:
                out.append(Message(self.rid, MessageKind.COUNT_REPORT, rnd=self.rnd,
                                   count=self.count))
        # centroid
        if in_selection and self.depth is not None and self.count is not None \
                and all(c in self.child_q for c in kids):
            contribs = [self.child_q[c] for c in kids]
            if self.role is Role.ROOT:
                rel = centroid_step(self.depth, self.count, contribs, None, is_root=True)
                self.centroid_world = self.pos + rel
            elif self.parent in self.nbr_pos:
                parent_vec = self.nbr_pos[self.parent] - self.pos
                q = centroid_step(self.depth, self.count, contribs, parent_vec, is_root=False)
                out.append(Message(self.rid, MessageKind.CENTROID_REPORT, rnd=self.rnd,
                                   vec=self._to_local_vec(q)))
        # barrier aggregation
        phase = BarrierPhase.PARENT if in_selection else BarrierPhase.GROWTH
        done = self._barrier_done_self(phase) and self._children_done(phase, kids)
        if self.parent is not None and self.phase_done < BarrierPhase.GROWTH.value:
            out.append(Message(self.rid, MessageKind.BARRIER_DONE, rnd=self.rnd,
                               phase=phase, done=done))
        # target forces flow upstream continuously
        if self.role is Role.WORKER and self.target is not None:
            tf = target_force(self.pos, self.target, self.params)
            if self.parent is not None and tf.norm() > 0.0:
                out.append(Message(self.rid, MessageKind.TARGET_FORCE, rnd=self.rnd,
                                   vec=self._to_local_vec(tf)))
        elif self.children and self.parent is not None:
            total = ZERO
            for c in sorted(self.child_tf):
                total = total + self.child_tf[c]
            if total.norm() > 0.0:
                out.append(Message(self.rid, MessageKind.TARGET_FORCE, rnd=self.rnd,
                                   vec=self._to_local_vec(total)))

    def _barrier_done_self(self, phase: BarrierPhase) -> bool:
        if phase is BarrierPhase.PARENT:
            return self.anchored
        return self.role is not Role.WORKER or self.arrived

    def _children_done(self, phase: BarrierPhase, kids: list[int]) -> bool:
        return all(self.child_done.get(c, (0, False)) == (phase.value, True) for c in kids)

    def _root_barriers(self, tick: int, out: list[Message]) -> None:
        if self.role is not Role.ROOT:
            return
        timeout = (tick - self.round_start) * self.params.dt >= self.params.R
        if self.state is FsmState.WAIT_PARENT_BARRIER:
            kids = sorted(self.children)
            agg_done = self.anchored and self._children_done(BarrierPhase.PARENT, kids)
            if self.variant is AlgorithmVariant.OUTWARDS:
                full = self.count is not None and self.count >= self.n_robots
            else:
                full = self.workers_below is not None and self.workers_below >= self.n_targets
            if (agg_done and full) or timeout:
                self._emit_go(BarrierPhase.PARENT, tick, out, timeout=not (agg_done and full))
        elif self.state in _GROW_STATES:
            kids = sorted(self.children)
            agg_done = self._barrier_done_self(BarrierPhase.GROWTH) \
                and self._children_done(BarrierPhase.GROWTH, kids)
            if agg_done or timeout:
                self._emit_go(BarrierPhase.GROWTH, tick, out, timeout=not agg_done)
        elif self.state is FsmState.SELECT_ROOT:
            self._handoff_step(tick, out)

    def _emit_go(self, phase: BarrierPhase, tick: int, out: list[Message], timeout: bool) -> None:
        key = (self.rnd, phase)
        if key in self.go_emitted:
            return
        self.go_emitted.add(key)
        self.go_relayed.add(key)
        out.append(Message(self.rid, MessageKind.GO, rnd=self.rnd, phase=phase))
        self.events.append(("go", self.rnd, phase, "timeout" if timeout else "condition"))
        self._apply_phase(phase, tick)

    def _handoff_step(self, tick: int, out: list[Message]) -> None:
        if self.centroid_world is None:
            self._emit_go(BarrierPhase.ROOT, tick, out, timeout=False)
            return
        horizon = self.params.I / self.params.dt
        if self.handoff_target is not None:
            if self.handoff_target in self.table:
                out.append(Message(self.rid, MessageKind.ROOT_HANDOFF, rnd=self.rnd,
                                   to=self.handoff_target, epoch=self.epoch,
                                   vec=self._to_local_vec(self.centroid_world - self.pos)))
            if self.handoff_since is not None and tick - self.handoff_since > horizon:
                self.handoff_target = None
                self.handoff_since = None
                if self.handoff_attempts >= 2:
                    self._emit_go(BarrierPhase.ROOT, tick, out, timeout=True)
            return
        centroid_local = self._to_local_vec(self.centroid_world - self.pos)
        candidates = []
        for rid in self.table.ids():
            info = self.hb.get(rid)
            if info is None or info.rnd != self.rnd or not info.committed:
                continue
            if info.role in (Role.WORKER, Role.ROOT):
                continue
            candidates.append((rid, self._to_local_vec(self.nbr_pos[rid] - self.pos)))
        target = root_handoff(centroid_local, candidates)
        if target is None:
            self._emit_go(BarrierPhase.ROOT, tick, out, timeout=False)
        else:
            self.handoff_target = target
            self.handoff_since = tick
            self.handoff_attempts += 1
            out.append(Message(self.rid, MessageKind.ROOT_HANDOFF, rnd=self.rnd,
                               to=target, epoch=self.epoch,
                               vec=self._to_local_vec(self.centroid_world - self.pos)))
            self.events.append(("handoff_sent", target))

    # -- motion -----------------------------------------------------------------

    def _tree_force_sum(self, partners: list[int]) -> Vec2:
        """Edge-regulation force toward/away from the given partners, bounded
        per term at the actuator limit so near-field spikes (freshly split
        edges) cannot drown the target and avoidance terms."""
        total = ZERO
        for rid in partners:
            if rid not in self.nbr_pos:
                continue
            off = self.nbr_pos[rid] - self.pos
            d = off.norm()
            total = total + off.unit() * link_force(d, self.params)
        return total.clamped(self.params.u_max)

    def _kin(self) -> set[int]:
        kin = set(self.children) | set(self.old_children)
        if self.parent is not None:
            kin.add(self.parent)
        if self.old_parent is not None:
            kin.add(self.old_parent)
        return kin

    def _motion(self, tick: int) -> Vec2:
        p = self.params
        if self.role is Role.SPARE and not self.committed:
            u = self._spare_motion()
            self.last_breakdown = ForceBreakdown(u_target=u, u_total=u)
            return self.last_breakdown.u_total
        # Each robot regulates its own parent edges only. Mirroring the edge
        # force onto parents turns any parked child into a steady push on its
        # parent (the balance point sits on the repulsive side of the law), and
        # the swarm drifts off as a train: the root flees while its chain
        # follows. One-sided regulation anchors the root; the formation still
        # re-centers through root handoffs and the propagated target forces.
        tree_new = self._tree_force_sum([self.parent] if self.parent is not None else [])
        tree_old = self._tree_force_sum([self.old_parent] if self.old_parent is not None else [])
        # target demand only applies while anchored: a fragment whose chain to
        # the root broke must not keep dragging itself (and its subtree) away
        if self.role is Role.WORKER and self.target is not None and self.anchored:
            tgt = target_force(self.pos, self.target, p)
        else:
            tgt = ZERO
            if self.anchored:
                for c in sorted(self.child_tf):
                    tgt = tgt + self.child_tf[c]
        kin = self._kin()
        offsets = [self.nbr_pos[rid] - self.pos for rid in self.table.ids() if rid not in kin]
        avoid = avoid_force(offsets, p)
        parent_links = []
        for pid in (self.parent, self.old_parent):
            if pid is not None and pid in self.nbr_pos:
                off = self.nbr_pos[pid] - self.pos
                parent_links.append((off.norm(), off.unit()))
        if not parent_links and self.parent is None \
                and self.role in (Role.WORKER, Role.CONNECTOR):
            # orphaned: head for the last known parent position; once that spot
            # proves empty, fall back to the deployment origin so a detached
            # fragment tows itself back into contact with the swarm
            goal = self.last_parent_world
            if goal is not None and (goal - self.pos).norm() < 0.5:
                self.last_parent_world = None
                goal = None
            if goal is None:
                goal = ZERO
            off = goal - self.pos
            u = steer_to(off, self.vel, p)
            bd = ForceBreakdown(emergency=True, gate=0, u_total=u)
            self.last_breakdown = bd
            return bd.u_total
        bd = compose(tree_old, tree_new, tgt, avoid, parent_links, p)
        self.last_breakdown = bd
        # acceleration-commanded robots need velocity damping or they coast
        # forever once the potential terms cancel (e.g. a freshly handed-off
        # root); the composed force itself stays as specified in bd.u_total
        return bd.u_total - self.vel * p.damping

    def _spare_motion(self) -> Vec2:
        p = self.params
        kin: set[int] = set()
        offsets = [self.nbr_pos[rid] - self.pos for rid in self.table.ids() if rid not in kin]
        avoid = avoid_force(offsets, p)
        if self.spare_mode is SpareMode.EXTEND_EDGE and self.claim_edge is not None:
            child, parent = self.claim_edge
            if child in self.nbr_pos and parent in self.nbr_pos:
                mid = (self.nbr_pos[child] + self.nbr_pos[parent]) * 0.5
                return steer_to(mid - self.pos, self.vel, p) + avoid
        ref = self._reference_robot()
        if ref is None:
            if self.last_parent_world is not None:
                return steer_to(self.last_parent_world - self.pos, self.vel, p) + avoid
            return avoid
        off = self.nbr_pos[ref] - self.pos
        if off.norm() <= p.S:
            return orbit(off, self.vel, p) + avoid
        return steer_to(off, self.vel, p, approach_gain=100.0) + avoid

    def _reference_robot(self) -> Optional[int]:
        """Committed neighbor this spare keeps station on.

        Outwards spares come from disbanded branches and curl back toward the
        root, so they prefer the most root-ward (smallest depth) committed
        neighbor; inwards spares disperse along the tree and simply hold on to
        the nearest one.
        """
        if self.reference is not None and self.reference in self.nbr_pos:
            info = self.hb.get(self.reference)
            if not (self.variant is AlgorithmVariant.OUTWARDS and info is not None
                    and info.depth is not None and info.depth > 1
                    and self._rootward_candidate(info.depth) is not None):
                return self.reference
        if self.variant is AlgorithmVariant.OUTWARDS:
            best = self._rootward_candidate(None)
        else:
            best = None
            for rid in self.table.ids():
                info = self.hb.get(rid)
                if info is None or not info.committed:
                    continue
                key = ((self.nbr_pos[rid] - self.pos).norm(), rid)
                if best is None or key < best:
                    best = key
            best = best[1] if best is not None else None
        if best is None:
            fallback = None
            for rid in self.table.ids():
                key = ((self.nbr_pos[rid] - self.pos).norm(), rid)
                if fallback is None or key < fallback:
                    fallback = key
            best = fallback[1] if fallback is not None else None
        self.reference = best
        return self.reference

    def _rootward_candidate(self, below_depth: Optional[int]) -> Optional[int]:
        best = None
        for rid in self.table.ids():
            info = self.hb.get(rid)
            if info is None or not info.committed or info.depth is None:
                continue
            if below_depth is not None and info.depth >= below_depth:
                continue
            key = (info.depth, (self.nbr_pos[rid] - self.pos).norm(), rid)
            if best is None or key < best:
                best = key
        return best[2] if best is not None else None

    # -- emission ----------------------------------------------------------------

    def _heartbeat(self) -> Message:
        info = HeartbeatInfo(
            role=self.role, state=self.state, rnd=self.rnd, committed=self.committed,
            parent=self.parent, old_parent=self.old_parent, depth=self.depth,
            dist_root=self.dist_root, need=self.need, arrived=self.arrived,
            epoch=self.epoch,
        )
        return Message(self.rid, MessageKind.HEARTBEAT, rnd=self.rnd, hb=info)

    def parent_liveness(self) -> Optional[int]:
        """Exposed for tests: current parent or None after liveness expiry."""
        return self.parent
