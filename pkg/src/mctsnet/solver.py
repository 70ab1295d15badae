"""Exact Sokoban solver used to produce supervised action labels.

A* over full (agent, boxes) positions with an admissible heuristic: the sum
over boxes of the Manhattan distance to the nearest target.  Every push
moves one box one cell, and each action costs one step, so the heuristic
never overestimates.  Boxes stuck in a non-target corner can never reach a
target, so such nodes are pruned.
"""

from __future__ import annotations

import heapq

from .sokoban import ACTIONS, DELTAS, GridState, transition


def _corner_deadlock(s: GridState, box: tuple[int, int]) -> bool:
    r, c = box
    if s.bit(r, c) & s.targets:
        return False

    def wall(rr, cc):
        return not s.in_bounds(rr, cc) or bool(s.bit(rr, cc) & s.walls)

    # a corner needs one wall on each axis
    return (wall(r - 1, c) and (wall(r, c - 1) or wall(r, c + 1))) or (
        wall(r + 1, c) and (wall(r, c - 1) or wall(r, c + 1))
    )


def _heuristic(s: GridState) -> int:
    targets = s.target_cells()
    total = 0
    for br, bc in s.box_cells():
        if s.bit(br, bc) & s.targets:
            continue
        total += min(abs(br - tr) + abs(bc - tc) for tr, tc in targets)
    return total


def solve_oracle(s: GridState, max_nodes: int = 200_000) -> list[int] | None:
    """Minimal-length action sequence solving ``s``, or None if the budget runs out.

    The returned plan, replayed through :func:`~mctsnet.sokoban.transition`,
    reaches a terminal state in exactly ``len(plan)`` steps.
    """
    s.validate()
    if s.terminal:
        return []

    counter = 0
    open_heap = [(_heuristic(s), 0, counter, s)]
    g_cost: dict[GridState, int] = {s: 0}
    parent: dict[GridState, tuple[GridState, int]] = {}
    expanded = 0

    while open_heap:
        f, g, _, cur = heapq.heappop(open_heap)
        if g > g_cost.get(cur, -1):
            continue  # stale queue entry
        if cur.terminal:
            plan: list[int] = []
            node = cur
            while node in parent:
                node, a = parent[node]
                plan.append(a)
            plan.reverse()
            return plan
        expanded += 1
        if expanded > max_nodes:
            return None
        for a in ACTIONS:
            nxt, _, done = transition(cur, a)
            if nxt == cur:
                continue
            if nxt in g_cost and g_cost[nxt] <= g + 1:
                continue
            if not done and nxt.boxes != cur.boxes:
                dr, dc = DELTAS[a]
                new_box = (nxt.agent[0] + dr, nxt.agent[1] + dc)
                if _corner_deadlock(nxt, new_box):
                    continue
            g_cost[nxt] = g + 1
            parent[nxt] = (cur, a)
            counter += 1
            heapq.heappush(open_heap, (g + 1 + _heuristic(nxt), g + 1, counter, nxt))
    return None
