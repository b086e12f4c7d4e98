"""Tree-structured distributed computations: node count, centroid, root handoff.

These are the per-node update rules; the protocol layer wires them to child
reports arriving over situated messages. All vectors here are free vectors in
one robot's reference frame.
"""
from __future__ import annotations

from typing import Optional, Sequence

from .core import Vec2, ZERO

# A handoff must improve the root-to-centroid distance by more than this to
# fire, which keeps near-equidistant robots from trading the root forever.
HANDOFF_HYSTERESIS = 0.05


def count_step(depth: int, child_counts: Sequence[int]) -> int:
    """Subtree count at a node of the given depth (root depth is 1).

    Leaves report their own depth; a single-child node forwards the child
    count; otherwise counts are combined relative to the node's depth.
    """
    k = len(child_counts)
    if k == 0:
        return depth
    if k == 1:
        return child_counts[0]
    return sum(c - depth for c in child_counts) + depth


def centroid_step(depth: int,
                  count: int,
                  child_contribs: Sequence[Vec2],
                  parent_vec: Optional[Vec2],
                  is_root: bool) -> Vec2:
    """Accumulate child contributions; emit this node's contribution.

    Non-root nodes return the vector to pass upstream (in their own frame,
    child contributions already rotated in). The root returns the centroid
    estimate relative to itself: accumulated sum divided by the tree count.
    """
    a = ZERO
    for q in child_contribs:
        a = a + q
    if is_root:
        return a * (1.0 / count)
    assert parent_vec is not None
    descendants = count - depth
    return a - parent_vec * float(descendants + 1)


def root_handoff(centroid: Vec2,
                 candidates: Sequence[tuple[int, Vec2]],
                 hysteresis: float = HANDOFF_HYSTERESIS) -> Optional[int]:
    """Pick the neighbor to hand the root role to, or None to keep it.

    ``centroid`` and candidate positions are in the current root's frame. The
    chosen neighbor must be closer to the centroid than the root by more than
    the hysteresis margin; ties break toward the lowest id.
    """
    d_self = centroid.norm()
    best: Optional[tuple[float, int]] = None
    for rid, pos in sorted(candidates):
        d = (centroid - pos).norm()
        if best is None or d < best[0] - 1e-12:
            best = (d, rid)
    if best is not None and best[0] < d_self - hysteresis:
        return best[1]
    return None
