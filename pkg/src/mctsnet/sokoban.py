"""Deterministic Sokoban environment.

Board positions are immutable values with structural equality, so they can
be used as dict keys by the solver and by transposition checks.  Cell sets
(walls, targets, boxes) are stored as integer bitmasks indexed row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTIONS = (UP, DOWN, LEFT, RIGHT)
ACTION_NAMES = ("up", "down", "left", "right")
DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1))

# feature plane order used by encode()
PLANES = ("wall", "agent", "box", "target")


class InvalidStateError(ValueError):
    """Raised when an operation receives a structurally invalid board."""


@dataclass(frozen=True)
class GridState:
    """Immutable Sokoban position.

    walls/targets/boxes are bitmasks with bit ``r * width + c`` set when the
    cell at (r, c) holds that object.  The agent never overlaps a wall or a
    box.
    """

    width: int
    height: int
    walls: int
    targets: int
    boxes: int
    agent: tuple[int, int]

    def bit(self, r: int, c: int) -> int:
        return 1 << (r * self.width + c)

    def in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.height and 0 <= c < self.width

    @property
    def terminal(self) -> bool:
        return self.boxes == self.targets

    def validate(self) -> None:
        """Check structural invariants, raising InvalidStateError on failure."""
        full = (1 << (self.width * self.height)) - 1
        for name, mask in (("walls", self.walls), ("targets", self.targets), ("boxes", self.boxes)):
            if mask & ~full:
                raise InvalidStateError(f"{name} bitmask has bits outside the {self.height}x{self.width} board")
        r, c = self.agent
        if not self.in_bounds(r, c):
            raise InvalidStateError(f"agent {self.agent} out of bounds")
        abit = self.bit(r, c)
        if abit & self.walls:
            raise InvalidStateError("agent standing on a wall")
        if abit & self.boxes:
            raise InvalidStateError("agent standing on a box")
        if self.walls & self.boxes:
            raise InvalidStateError("box inside a wall")
        if bin(self.boxes).count("1") != bin(self.targets).count("1"):
            raise InvalidStateError("box count differs from target count")

    def box_cells(self) -> list[tuple[int, int]]:
        return _cells(self.boxes, self.width, self.height)

    def target_cells(self) -> list[tuple[int, int]]:
        return _cells(self.targets, self.width, self.height)

    def wall_cells(self) -> list[tuple[int, int]]:
        return _cells(self.walls, self.width, self.height)


def _cells(mask: int, width: int, height: int) -> list[tuple[int, int]]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(divmod(i, width))
        mask >>= 1
        i += 1
    return out


@dataclass(frozen=True)
class RewardScheme:
    """Reward shaping for transitions.

    The values follow the convention used in prior Sokoban RL work and are
    fully configurable; nothing downstream assumes these magnitudes.
    """

    step_penalty: float = -0.1
    box_on: float = 1.0
    box_off: float = -1.0
    solve_bonus: float = 10.0


DEFAULT_REWARDS = RewardScheme()


def transition(s: GridState, a: int, scheme: RewardScheme = DEFAULT_REWARDS) -> tuple[GridState, float, bool]:
    """Apply action ``a``; returns (next state, reward, terminal).

    Standard rules: the agent moves one cell; a box in the way is pushed iff
    its destination is free; blocked moves leave the state unchanged (still
    costing the step penalty).  Terminal iff every box sits on a target.
    """
    if a not in ACTIONS:
        raise ValueError(f"action must be one of {ACTIONS}, got {a!r}")
    abit = s.bit(*s.agent)
    if (abit & s.walls) or (abit & s.boxes):
        raise InvalidStateError("transition called on invalid state (agent overlaps wall/box)")
    if s.terminal:
        raise InvalidStateError("transition called on terminal state")

    dr, dc = DELTAS[a]
    r0, c0 = s.agent
    r1, c1 = r0 + dr, c0 + dc
    reward = scheme.step_penalty

    if not s.in_bounds(r1, c1) or (s.bit(r1, c1) & s.walls):
        return s, reward, False

    dest = s.bit(r1, c1)
    if dest & s.boxes:
        r2, c2 = r1 + dr, c1 + dc
        if not s.in_bounds(r2, c2):
            return s, reward, False
        dest2 = s.bit(r2, c2)
        if dest2 & (s.walls | s.boxes):
            return s, reward, False
        new_boxes = (s.boxes & ~dest) | dest2
        was_on = bool(dest & s.targets)
        now_on = bool(dest2 & s.targets)
        if now_on and not was_on:
            reward += scheme.box_on
        elif was_on and not now_on:
            reward += scheme.box_off
        s2 = replace(s, boxes=new_boxes, agent=(r1, c1))
    else:
        s2 = replace(s, agent=(r1, c1))

    done = s2.boxes == s2.targets
    if done:
        reward += scheme.solve_bonus
    return s2, reward, done


def encode(s: GridState, dtype=np.float64) -> np.ndarray:
    """Binary feature planes [4, H, W] ordered (wall, agent, box, target)."""
    planes = np.zeros((4, s.height, s.width), dtype=dtype)
    for r, c in s.wall_cells():
        planes[0, r, c] = 1.0
    planes[1, s.agent[0], s.agent[1]] = 1.0
    for r, c in s.box_cells():
        planes[2, r, c] = 1.0
    for r, c in s.target_cells():
        planes[3, r, c] = 1.0
    return planes


def decode(planes: np.ndarray) -> GridState:
    """Inverse of :func:`encode`."""
    if planes.ndim != 4 - 1 or planes.shape[0] != 4:
        raise ValueError(f"expected [4, H, W] planes, got shape {planes.shape}")
    height, width = planes.shape[1], planes.shape[2]

    def mask_of(plane: np.ndarray) -> int:
        m = 0
        for r in range(height):
            for c in range(width):
                if plane[r, c] != 0:
                    m |= 1 << (r * width + c)
        return m

    ar, ac = np.argwhere(planes[1] != 0)[0]
    return GridState(
        width=width,
        height=height,
        walls=mask_of(planes[0]),
        targets=mask_of(planes[3]),
        boxes=mask_of(planes[2]),
        agent=(int(ar), int(ac)),
    )


# ---------------------------------------------------------------------------
# XSB text format

_XSB_OF = {
    "wall": "#",
    "floor": " ",
    "agent": "@",
    "box": "$",
    "target": ".",
    "box_on_target": "*",
    "agent_on_target": "+",
}


def to_xsb(s: GridState) -> str:
    rows = []
    for r in range(s.height):
        row = []
        for c in range(s.width):
            bit = s.bit(r, c)
            wall = bool(bit & s.walls)
            box = bool(bit & s.boxes)
            target = bool(bit & s.targets)
            agent = (r, c) == s.agent
            if wall:
                ch = "#"
            elif box and target:
                ch = "*"
            elif box:
                ch = "$"
            elif agent and target:
                ch = "+"
            elif agent:
                ch = "@"
            elif target:
                ch = "."
            else:
                ch = " "
            row.append(ch)
        rows.append("".join(row))
    return "\n".join(rows)


def from_xsb(text: str) -> GridState:
    lines = [ln for ln in text.split("\n") if ln.strip("\r")]
    if not lines:
        raise ValueError("empty XSB block")
    height = len(lines)
    width = max(len(ln) for ln in lines)
    walls = targets = boxes = 0
    agent = None
    for r, ln in enumerate(lines):
        for c, ch in enumerate(ln):
            bit = 1 << (r * width + c)
            if ch == "#":
                walls |= bit
            elif ch == "$":
                boxes |= bit
            elif ch == ".":
                targets |= bit
            elif ch == "*":
                boxes |= bit
                targets |= bit
            elif ch == "@":
                agent = (r, c)
            elif ch == "+":
                agent = (r, c)
                targets |= bit
            elif ch in (" ", "-", "_"):
                continue
            else:
                raise ValueError(f"unknown XSB character {ch!r} at row {r}, col {c}")
    if agent is None:
        raise ValueError("XSB block has no agent")
    state = GridState(width=width, height=height, walls=walls, targets=targets, boxes=boxes, agent=agent)
    state.validate()
    return state


def save_levels(levels: list[GridState], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n\n".join(to_xsb(s) for s in levels))
        fh.write("\n")


def load_levels(path: str) -> list[GridState]:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    blocks = [b for b in text.split("\n\n") if b.strip()]
    return [from_xsb(b) for b in blocks]


# ---------------------------------------------------------------------------
# Level generation (reverse play)


class GenerationError(RuntimeError):
    pass


def generate_level(
    width: int,
    height: int,
    n_boxes: int,
    rng: np.random.Generator,
    pulls: int = 30,
    max_attempts: int = 200,
) -> GridState:
    """Generate a solvable level by playing Sokoban in reverse.

    Boxes start on their targets; a random walk of pulls (the reverse of a
    push) and plain moves scatters the boxes and the agent.  The forward
    replay of the reversed pull sequence solves the level, so every output
    is solvable by construction.  Levels where some box never left its
    starting target, or where no pull happened at all, are rejected.
    """
    interior = (width - 2) * (height - 2)
    if interior < n_boxes * 2 + 1:
        raise GenerationError(f"{width}x{height} board too small for {n_boxes} boxes")
    for _ in range(max_attempts):
        state, start_cells = _random_solved_room(width, height, n_boxes, rng)
        out = _reverse_scramble(state, start_cells, pulls, rng)
        if out is not None:
            return out
    raise GenerationError(f"failed to generate a level after {max_attempts} attempts")


def _random_solved_room(width, height, n_boxes, rng):
    """Carve a connected open region, then put boxes on targets inside it."""
    border = set()
    for r in range(height):
        border.add((r, 0))
        border.add((r, width - 1))
    for c in range(width):
        border.add((0, c))
        border.add((height - 1, c))

    interior = [(r, c) for r in range(1, height - 1) for c in range(1, width - 1)]
    room_size = max(n_boxes * 3 + 2, int(len(interior) * 0.7))
    room_size = min(room_size, len(interior))

    start = interior[rng.integers(len(interior))]
    room = {start}
    frontier = [start]
    while len(room) < room_size and frontier:
        idx = rng.integers(len(frontier))
        r, c = frontier[idx]
        nbrs = [
            (r + dr, c + dc)
            for dr, dc in DELTAS
            if 1 <= r + dr < height - 1 and 1 <= c + dc < width - 1 and (r + dr, c + dc) not in room
        ]
        if not nbrs:
            frontier.pop(idx)
            continue
        cell = nbrs[rng.integers(len(nbrs))]
        room.add(cell)
        frontier.append(cell)

    walls = 0
    for r in range(height):
        for c in range(width):
            if (r, c) in border or ((r, c) not in room):
                walls |= 1 << (r * width + c)

    open_cells = sorted(room)
    picks = rng.permutation(len(open_cells))
    box_cells = [open_cells[i] for i in picks[:n_boxes]]
    agent = open_cells[picks[n_boxes]]
    mask = 0
    for r, c in box_cells:
        mask |= 1 << (r * width + c)
    state = GridState(width=width, height=height, walls=walls, targets=mask, boxes=mask, agent=agent)
    return state, box_cells


def _reverse_scramble(state, start_cells, pulls, rng):
    """Random reverse moves: plain steps plus pulls that drag a box."""
    width = state.width
    boxes = {cell: cell for cell in start_cells}  # current -> starting target
    agent = state.agent
    walls = state.walls
    n_pulls = 0

    def blocked(cell):
        r, c = cell
        if not (0 <= r < state.height and 0 <= c < width):
            return True
        bit = 1 << (r * width + c)
        return bool(bit & walls) or (cell in boxes)

    for _ in range(pulls):
        moves = []
        for a, (dr, dc) in enumerate(DELTAS):
            dest = (agent[0] + dr, agent[1] + dc)
            if blocked(dest):
                continue
            behind = (agent[0] - dr, agent[1] - dc)
            if behind in boxes:
                moves.append((a, dest, behind))  # pulling the box into our old cell
            moves.append((a, dest, None))
        if not moves:
            break
        a, dest, pulled = moves[rng.integers(len(moves))]
        if pulled is not None:
            boxes[agent] = boxes.pop(pulled)
            n_pulls += 1
        agent = dest

    if n_pulls == 0:
        return None
    if any(cur == origin for cur, origin in boxes.items()):
        return None
    mask = 0
    for r, c in boxes:
        mask |= 1 << (r * width + c)
    return replace(state, boxes=mask, agent=agent)
