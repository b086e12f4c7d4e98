"""Per-robot control synthesis from virtual potential forces.

The parent-child interaction is a scalar law applied along the line between
the two robots, positive meaning attraction; both endpoints of a tree edge
feel it (mirrored), so edges equilibrate at the ideal distance. Target and
avoidance forces pass through a gate that closes when the parent distance
exceeds the safe range, and beyond the emergency threshold everything is
overridden by a maximum-acceleration pull back toward the parent.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .core import Params, Vec2, ZERO

_MIN_DIST = 1e-6


def _pair_law(d: float, zero_at: float, gain: float) -> float:
    if d < _MIN_DIST:
        d = _MIN_DIST
    r = zero_at / d
    r2 = r * r
    return (gain / d) * (r2 - r2 * r2)


def tree_force(d: float, params: Params) -> float:
    """Signed magnitude of the parent-child interaction at distance d.

    Positive = attraction toward the partner. Zero exactly at d = delta,
    repulsive below, attractive above.
    """
    return _pair_law(d, params.delta, params.epsilon)


def link_force(d: float, params: Params) -> float:
    """Edge interaction as applied by robots: spacer, free band, leash.

    Parent-child pairs repel below the avoidance spacing, move freely through
    the band up to the emergency threshold, and feel the (gentle) attraction
    tail beyond it, where the emergency maneuver is the real outer wall. The
    free band matters: with the optimized sets delta > E, so the raw law is
    repulsive-saturated across the entire permitted band. Edges then inflate
    rigidly toward E, workers overshoot targets they have already reached, and
    the tau-scale steering is drowned by one to two orders of magnitude.
    With a free band, a pulled edge pins just above E (driving spare
    recruitment) while a satisfied one parks anywhere, so workers can stop on
    their targets. delta remains the deployment-spacing parameter.
    """
    raw = _pair_law(d, params.E, params.epsilon)
    if d < params.A_avoid:
        return raw
    return max(raw, 0.0)


def target_force(pos: Vec2, target: Vec2, params: Params) -> Vec2:
    """Unit pull toward the target scaled by tau; zero once within reach."""
    offset = target - pos
    if offset.norm() < params.target_reach:
        return ZERO
    return offset.unit() * params.tau


def avoid_force(offsets: list[Vec2], params: Params) -> Vec2:
    """Repulsion from non-kin neighbors inside the avoidance range.

    ``offsets`` are vectors from self to each neighbor not in a parent-child
    relationship. Linear ramp, magnitude tau at contact, zero at A_avoid.
    """
    total = ZERO
    a = params.A_avoid
    for off in offsets:
        d = off.norm()
        if d >= a:
            continue
        if d < _MIN_DIST:
            d = _MIN_DIST
            off = Vec2(_MIN_DIST, 0.0)
        total = total + off.unit() * (-params.tau * (a - d) / a)
    return total


@dataclass(slots=True)
class ForceBreakdown:
    u_tree_old: Vec2 = ZERO
    u_tree_new: Vec2 = ZERO
    u_target: Vec2 = ZERO
    u_avoid: Vec2 = ZERO
    gate: int = 1
    emergency: bool = False
    u_total: Vec2 = ZERO


def compose(u_tree_old: Vec2,
            u_tree_new: Vec2,
            u_target: Vec2,
            u_avoid: Vec2,
            parent_links: list[tuple[float, Vec2]],
            params: Params) -> ForceBreakdown:
    """Combine force components given the (distance, unit direction) of each
    active parent link (new and old tree).

    While every parent is within the emergency range E the output is
    tree + gate * (target + avoid) with gate = 1 iff all parents are within
    the safe range S. Otherwise the robot performs an emergency maneuver:
    full acceleration straight toward the farthest parent. Robots with no
    parent (root, unattached spares) always have gate 1.
    """
    bd = ForceBreakdown(u_tree_old=u_tree_old, u_tree_new=u_tree_new,
                        u_target=u_target, u_avoid=u_avoid)
    if parent_links:
        d_max, dir_max = max(parent_links, key=lambda link: link[0])
        if d_max > params.E:
            bd.emergency = True
            bd.gate = 0
            bd.u_total = dir_max * params.u_max
            return bd
        bd.gate = 1 if d_max <= params.S else 0
    u = u_tree_old + u_tree_new
    if bd.gate:
        u = u + u_target + u_avoid
    bd.u_total = u
    return bd


def steer_to(goal_offset: Vec2, vel: Vec2, params: Params, approach_gain: float = 2.0) -> Vec2:
    """Acceleration that tracks a velocity toward a goal point, slowing near it."""
    d = goal_offset.norm()
    speed = min(params.v_max, approach_gain * d)
    v_des = goal_offset.unit() * speed
    return ((v_des - vel) * (1.0 / params.dt)).clamped(params.u_max)


def orbit(ref_offset: Vec2, vel: Vec2, params: Params) -> Vec2:
    """Tangential (counter-clockwise) velocity around a reference robot."""
    v_des = ref_offset.unit().perp() * params.v_max
    return ((v_des - vel) * (1.0 / params.dt)).clamped(params.u_max)
