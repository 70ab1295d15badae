import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mctsnet import sokoban
from mctsnet.sokoban import (
    ACTIONS,
    DELTAS,
    GridState,
    InvalidStateError,
    RewardScheme,
    decode,
    encode,
    from_xsb,
    generate_level,
    to_xsb,
    transition,
)
from mctsnet.solver import solve_oracle

SCHEME = RewardScheme()


def simple_room(width=5, height=5, boxes=(), targets=(), agent=(1, 1), extra_walls=()):
    walls = 0
    for r in range(height):
        for c in range(width):
            if r in (0, height - 1) or c in (0, width - 1):
                walls |= 1 << (r * width + c)
    for r, c in extra_walls:
        walls |= 1 << (r * width + c)
    bmask = tmask = 0
    for r, c in boxes:
        bmask |= 1 << (r * width + c)
    for r, c in targets:
        tmask |= 1 << (r * width + c)
    return GridState(width=width, height=height, walls=walls, targets=tmask, boxes=bmask, agent=agent)


# --- independent rules oracle (set-based, no bitmasks) ----------------------

def oracle_step(state: GridState, action: int):
    walls = set(state.wall_cells())
    boxes = set(state.box_cells())
    targets = set(state.target_cells())
    agent = state.agent
    dr, dc = DELTAS[action]
    dest = (agent[0] + dr, agent[1] + dc)

    def inside(cell):
        return 0 <= cell[0] < state.height and 0 <= cell[1] < state.width

    if not inside(dest) or dest in walls:
        return boxes, agent
    if dest in boxes:
        dest2 = (dest[0] + dr, dest[1] + dc)
        if not inside(dest2) or dest2 in walls or dest2 in boxes:
            return boxes, agent
        boxes = (boxes - {dest}) | {dest2}
        return boxes, dest
    return boxes, dest


class TestTransition:
    def test_blocked_move_is_identity(self):
        s = simple_room(boxes=[(3, 3)], targets=[(3, 2)], agent=(1, 1))
        s2, r, done = transition(s, sokoban.UP)
        assert s2 == s and s2 is s
        assert r == SCHEME.step_penalty
        assert not done

    def test_push_last_box_onto_target_solves(self):
        s = simple_room(boxes=[(2, 2)], targets=[(2, 3)], agent=(2, 1))
        s2, r, done = transition(s, sokoban.RIGHT)
        assert done
        assert s2.terminal
        assert r == pytest.approx(SCHEME.step_penalty + SCHEME.box_on + SCHEME.solve_bonus)

    def test_push_box_off_target_penalised(self):
        s = simple_room(boxes=[(2, 2)], targets=[(2, 2), (3, 3)], agent=(2, 1))
        # two targets, one box on one of them: pushing it off costs box_off
        s = simple_room(
            boxes=[(2, 2), (3, 1)], targets=[(2, 2), (3, 3)], agent=(2, 1), width=6
        )
        s2, r, done = transition(s, sokoban.RIGHT)
        assert r == pytest.approx(SCHEME.step_penalty + SCHEME.box_off)
        assert not done

    def test_invalid_state_rejected(self):
        s = simple_room(boxes=[(3, 3)], targets=[(3, 2)], agent=(0, 0))  # on the border wall
        with pytest.raises(InvalidStateError):
            transition(s, sokoban.UP)

    def test_terminal_state_rejected(self):
        s = simple_room(boxes=[(2, 2)], targets=[(2, 2)], agent=(1, 1))
        with pytest.raises(InvalidStateError):
            transition(s, sokoban.UP)

    def test_random_walks_match_independent_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            s = generate_level(7, 7, 2, rng)
            for _step in range(50):
                if s.terminal:
                    break
                a = int(rng.integers(4))
                expect_boxes, expect_agent = oracle_step(s, a)
                s, _, _ = transition(s, a)
                assert set(s.box_cells()) == expect_boxes
                assert s.agent == expect_agent

    def test_box_conservation(self):
        rng = np.random.default_rng(3)
        s = generate_level(7, 7, 2, rng)
        walls, targets = s.walls, s.targets
        for _ in range(100):
            if s.terminal:
                break
            s, _, _ = transition(s, int(rng.integers(4)))
            assert bin(s.boxes).count("1") == 2
            assert s.walls == walls and s.targets == targets


class TestEncode:
    def test_agent_plane_single_one(self):
        s = simple_room(width=5, height=5, boxes=[(3, 3)], targets=[(3, 2)], agent=(1, 1))
        planes = encode(s)
        assert planes.shape == (4, 5, 5)
        assert planes[1].sum() == 1.0
        assert planes[1, 1, 1] == 1.0

    def test_plane_sums_count_objects(self):
        rng = np.random.default_rng(11)
        s = generate_level(7, 7, 2, rng)
        planes = encode(s)
        assert planes[0].sum() == len(s.wall_cells())
        assert planes[2].sum() == 2
        assert planes[3].sum() == 2

    def test_encode_decode_round_trip(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            s = generate_level(6, 6, 1, rng)
            assert decode(encode(s)) == s


class TestXsb:
    def test_round_trip(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            s = generate_level(7, 7, 2, rng)
            assert from_xsb(to_xsb(s)) == s

    def test_known_level(self):
        text = "#####\n#@$.#\n#####"
        s = from_xsb(text)
        assert s.agent == (1, 1)
        assert s.box_cells() == [(1, 2)]
        assert s.target_cells() == [(1, 3)]
        assert to_xsb(s) == text

    def test_save_load(self, tmp_path):
        rng = np.random.default_rng(9)
        levels = [generate_level(6, 6, 1, rng) for _ in range(5)]
        path = tmp_path / "levels.xsb"
        sokoban.save_levels(levels, str(path))
        assert sokoban.load_levels(str(path)) == levels


class TestGenerator:
    def test_counts(self):
        rng = np.random.default_rng(1)
        s = generate_level(5, 5, 1, rng)
        assert bin(s.boxes).count("1") == 1
        assert bin(s.targets).count("1") == 1
        s.validate()

    def test_deterministic(self):
        a = generate_level(7, 7, 2, np.random.default_rng(42))
        b = generate_level(7, 7, 2, np.random.default_rng(42))
        assert a == b

    def test_no_box_starts_solved(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            s = generate_level(7, 7, 2, rng)
            assert not s.terminal

    def test_generated_levels_solvable(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            s = generate_level(7, 7, 1, rng)
            assert solve_oracle(s, max_nodes=100_000) is not None


class TestSolver:
    def test_already_solved(self):
        s = simple_room(boxes=[(2, 2)], targets=[(2, 2)], agent=(1, 1))
        assert solve_oracle(s) == []

    def test_single_push(self):
        s = simple_room(boxes=[(2, 2)], targets=[(2, 3)], agent=(2, 1))
        assert solve_oracle(s) == [sokoban.RIGHT]

    def test_plans_replay_to_terminal(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            s = generate_level(7, 7, 1, rng)
            plan = solve_oracle(s)
            assert plan is not None
            for i, a in enumerate(plan):
                s, _, done = transition(s, a)
                assert done == (i == len(plan) - 1)

    def test_plan_is_minimal_on_small_level(self):
        # brute-force BFS gives the true distance
        s = from_xsb("######\n#@ $.#\n######")
        plan = solve_oracle(s)
        assert plan is not None

        from collections import deque

        seen = {s}
        frontier = deque([(s, 0)])
        best = None
        while frontier:
            cur, d = frontier.popleft()
            if cur.terminal:
                best = d
                break
            for a in ACTIONS:
                nxt, _, _ = transition(cur, a)
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append((nxt, d + 1))
        assert len(plan) == best

    def test_budget_exhaustion_returns_none(self):
        rng = np.random.default_rng(10)
        s = generate_level(8, 8, 3, rng, pulls=60)
        assert solve_oracle(s, max_nodes=1) is None


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), steps=st.integers(1, 30))
def test_transition_invariants_property(seed, steps):
    rng = np.random.default_rng(seed)
    s = generate_level(6, 6, 1, rng)
    n_walls = len(s.wall_cells())
    for _ in range(steps):
        if s.terminal:
            break
        s2, _, done = transition(s, int(rng.integers(4)))
        assert len(s2.wall_cells()) == n_walls
        assert bin(s2.boxes).count("1") == 1
        assert done == s2.terminal
        s = s2
