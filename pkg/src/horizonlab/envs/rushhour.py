"""Rush Hour on a 6x6 board: generation, BFS move oracle and unit/macro slides.

The target car ``X`` is horizontal on row 2 and exits through the right edge;
it has escaped once its rightmost cell reaches column 5. A *slide move* moves
one vehicle any positive number of free cells; a *cell move* moves it one.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..grammar import (
    ATOMIC,
    DIRECTIONS,
    TARGET_ID,
    ActionSpace,
    MacroAction,
    MacroMode,
    Slide,
    TokenGrammar,
    build_vocabulary,
)
from .base import Environment, Infeasible, Observation, Transition, Unsolvable

W = 6
EXIT_ROW = 2
TABLE2_BANDS = {
    "R1": (4, 6),
    "R2": (7, 9),
    "R3": (10, 12),
    "R4": (13, 15),
    "R5": (16, 18),
    "R6": (19, 21),
}
H_MAX_ATOMIC = 30
H_MAX_MACRO = 20


@dataclass(frozen=True)
class Vehicle:
    id: str
    row: int
    col: int
    horizontal: bool
    length: int

    def cells(self) -> list[tuple[int, int]]:
        if self.horizontal:
            return [(self.row, self.col + k) for k in range(self.length)]
        return [(self.row + k, self.col) for k in range(self.length)]

    def moved(self, delta: int) -> "Vehicle":
        if self.horizontal:
            return Vehicle(self.id, self.row, self.col + delta, True, self.length)
        return Vehicle(self.id, self.row + delta, self.col, False, self.length)

    @property
    def pos(self) -> int:
        return self.col if self.horizontal else self.row


@dataclass(frozen=True)
class RushBoard:
    vehicles: tuple[Vehicle, ...]

    def __post_init__(self):
        object.__setattr__(self, "vehicles", tuple(sorted(self.vehicles, key=lambda v: v.id)))

    def by_id(self, vid: str) -> Vehicle | None:
        for v in self.vehicles:
            if v.id == vid:
                return v
        return None

    @property
    def target(self) -> Vehicle:
        t = self.by_id(TARGET_ID)
        if t is None:
            raise ValueError("board has no target car")
        return t

    def grid(self) -> np.ndarray:
        g = np.full((W, W), ".", dtype="<U1")
        for v in self.vehicles:
            for r, c in v.cells():
                g[r, c] = v.id
        return g

    def to_string(self) -> str:
        return "".join(self.grid().ravel())

    @classmethod
    def from_string(cls, s: str) -> "RushBoard":
        if len(s) != W * W:
            raise ValueError("rush hour boards are 36-character strings")
        cells: dict[str, list[tuple[int, int]]] = {}
        for i, ch in enumerate(s):
            if ch == ".":
                continue
            if not ch.isalpha() or not ch.isupper():
                raise ValueError(f"bad board character {ch!r}")
            cells.setdefault(ch, []).append(divmod(i, W))
        vehicles = []
        for vid, cs in cells.items():
            rows = {r for r, _ in cs}
            cols = {c for _, c in cs}
            if len(rows) == 1 and sorted(c for _, c in cs) == list(range(min(cols), min(cols) + len(cs))):
                vehicles.append(Vehicle(vid, cs[0][0], min(cols), True, len(cs)))
            elif len(cols) == 1 and sorted(r for r, _ in cs) == list(range(min(rows), min(rows) + len(cs))):
                vehicles.append(Vehicle(vid, min(rows), cs[0][1], False, len(cs)))
            else:
                raise ValueError(f"vehicle {vid} is not a straight contiguous run")
        board = cls(tuple(vehicles))
        validate_board(board)
        return board

    def render(self) -> str:
        return "\n".join("".join(row) for row in self.grid().tolist())

    def solved(self) -> bool:
        t = self.target
        return t.col + t.length == W


def validate_board(board: RushBoard) -> None:
    seen = set()
    for v in board.vehicles:
        if v.length not in (2, 3):
            raise ValueError(f"vehicle {v.id} has length {v.length}")
        for r, c in v.cells():
            if not (0 <= r < W and 0 <= c < W):
                raise ValueError(f"vehicle {v.id} leaves the board")
            if (r, c) in seen:
                raise ValueError(f"vehicle {v.id} overlaps another")
            seen.add((r, c))
    t = board.target
    if not t.horizontal or t.row != EXIT_ROW:
        raise ValueError("target car must be horizontal on the exit row")


# -- compact search state ------------------------------------------------------


class _Layout:
    """Fixed lanes of a board; a search state is the tuple of vehicle positions."""

    def __init__(self, board: RushBoard):
        self.vehicles = board.vehicles
        self.n = len(self.vehicles)
        self.target = next(i for i, v in enumerate(self.vehicles) if v.id == TARGET_ID)
        self.goal_pos = W - self.vehicles[self.target].length
        # bit of each lane cell, and body mask at each lane position
        self.lane_bits = []
        self.body = []
        for v in self.vehicles:
            bits = [1 << self._cell(v, q) for q in range(W)]
            self.lane_bits.append(bits)
            self.body.append([sum(bits[p : p + v.length]) for p in range(W - v.length + 1)])
        self.lengths = [v.length for v in self.vehicles]

    def start(self, board: RushBoard) -> tuple[int, ...]:
        return tuple(v.pos for v in board.vehicles)

    def occupancy(self, state) -> int:
        occ = 0
        for i, p in enumerate(state):
            occ |= self.body[i][p]
        return occ

    @staticmethod
    def _cell(v, lane_pos):
        return v.row * W + lane_pos if v.horizontal else lane_pos * W + v.col

    def free_run(self, state, occ, i, sign) -> int:
        """Free cells in front of vehicle ``i`` in direction ``sign`` (+1/-1)."""
        bits = self.lane_bits[i]
        p = state[i]
        run = 0
        q = p + self.lengths[i] if sign > 0 else p - 1
        while 0 <= q < W and not occ & bits[q]:
            run += 1
            q += sign
        return run

    def slide_neighbors(self, state) -> Iterator[tuple[int, ...]]:
        occ = self.occupancy(state)
        for i in range(self.n):
            bits = self.lane_bits[i]
            p = state[i]
            q = p + self.lengths[i]
            k = 1
            while q < W and not occ & bits[q]:
                yield state[:i] + (p + k,) + state[i + 1 :]
                q += 1
                k += 1
            q = p - 1
            while q >= 0 and not occ & bits[q]:
                yield state[:i] + (q,) + state[i + 1 :]
                q -= 1

    def unit_neighbors(self, state) -> Iterator[tuple[int, ...]]:
        occ = self.occupancy(state)
        for i in range(self.n):
            bits = self.lane_bits[i]
            p = state[i]
            q = p + self.lengths[i]
            if q < W and not occ & bits[q]:
                yield state[:i] + (p + 1,) + state[i + 1 :]
            if p > 0 and not occ & bits[p - 1]:
                yield state[:i] + (p - 1,) + state[i + 1 :]

    def is_goal(self, state) -> bool:
        return state[self.target] == self.goal_pos

    def board(self, state) -> RushBoard:
        return RushBoard(tuple(v.moved(p - v.pos) for v, p in zip(self.vehicles, state)))


def _bfs(board: RushBoard, neighbors: str) -> int:
    lay = _Layout(board)
    start = lay.start(board)
    if lay.is_goal(start):
        return 0
    nb = lay.slide_neighbors if neighbors == "slide" else lay.unit_neighbors
    dist = {start: 0}
    q = deque([start])
    while q:
        s = q.popleft()
        d = dist[s] + 1
        for t in nb(s):
            if t not in dist:
                if lay.is_goal(t):
                    return d
                dist[t] = d
                q.append(t)
    raise Unsolvable("target car cannot reach the exit")


def solve_min_moves(board: RushBoard) -> int:
    """Fewest slide moves (any distance counts once) that free the target car.

    Raises:
        Unsolvable: if the exit is unreachable.
    """
    return _bfs(board, "slide")


def solve_min_cell_moves(board: RushBoard) -> int:
    """Fewest unit (one-cell) moves that free the target car."""
    return _bfs(board, "unit")


def component_distances(
    board: RushBoard, max_states: int | None = None, unit: bool = False
) -> dict[tuple[int, ...], int]:
    """Slide-move distance to the goal for every state reachable from ``board``.

    Moves are reversible, so a multi-source BFS from the goal states of the
    component gives exact distances. States with no path are absent. With
    ``unit`` the distances count one-cell moves instead.

    Raises:
        Infeasible: if the component has more than ``max_states`` states.
    """
    lay = _Layout(board)
    start = lay.start(board)
    seen = {start}
    q = deque([start])
    goals = []
    while q:
        s = q.popleft()
        if lay.is_goal(s):
            goals.append(s)
        for t in lay.slide_neighbors(s):
            if t not in seen:
                seen.add(t)
                q.append(t)
                if max_states is not None and len(seen) > max_states:
                    raise Infeasible(f"component exceeds {max_states} states")
    dist = {g: 0 for g in goals}
    q = deque(goals)
    step = lay.unit_neighbors if unit else lay.slide_neighbors
    while q:
        s = q.popleft()
        d = dist[s] + 1
        for t in step(s):
            if t not in dist:
                dist[t] = d
                q.append(t)
    return dist


def layout_board(board: RushBoard, state) -> RushBoard:
    return _Layout(board).board(state)


@dataclass(frozen=True)
class CandidateConfig:
    min_vehicles: int = 8
    max_vehicles: int = 13
    p_truck: float = 0.25
    attempts: int = 200


class Reject(Exception):
    pass


def generate_candidate(config: CandidateConfig, seed: int) -> RushBoard:
    """Randomly place the target car plus a random number of other vehicles.

    Raises:
        Reject: placement sampling failed or the board is unsolvable/already solved.
    """
    if not 1 <= config.min_vehicles <= config.max_vehicles <= 18:
        raise ValueError("vehicle count range out of board capacity")
    rng = np.random.default_rng(seed)
    n_total = int(rng.integers(config.min_vehicles, config.max_vehicles + 1))
    occ = np.zeros((W, W), dtype=bool)
    tcol = int(rng.integers(0, W - 2))
    vehicles = [Vehicle(TARGET_ID, EXIT_ROW, tcol, True, 2)]
    occ[EXIT_ROW, tcol : tcol + 2] = True
    ids = iter("ABCDEFGHIJKLMNOPQRSTUVW")
    tries = 0
    while len(vehicles) < n_total:
        tries += 1
        if tries > config.attempts:
            raise Reject("placement sampling failed")
        horizontal = bool(rng.random() < 0.5)
        length = 3 if rng.random() < config.p_truck else 2
        if horizontal:
            r = int(rng.integers(0, W))
            if r == EXIT_ROW:
                continue
            c = int(rng.integers(0, W - length + 1))
            span = occ[r, c : c + length]
        else:
            r = int(rng.integers(0, W - length + 1))
            c = int(rng.integers(0, W))
            span = occ[r : r + length, c]
        if span.any():
            continue
        span[:] = True
        vehicles.append(Vehicle(next(ids), r, c, horizontal, length))
    board = RushBoard(tuple(vehicles))
    try:
        if solve_min_moves(board) == 0:
            raise Reject("already solved")
    except Unsolvable:
        raise Reject("unsolvable") from None
    return board


def iddfs_min_moves(board: RushBoard, limit: int = 12) -> int | None:
    """Independent oracle: iterative-deepening DFS over slide moves.

    A transposition table keyed by state keeps the largest remaining depth
    already explored, so re-visits with no more budget are pruned.
    """
    lay = _Layout(board)
    start = lay.start(board)

    def occ_of(state):
        grid = [[False] * W for _ in range(W)]
        for v, p in zip(lay.vehicles, state):
            for k in range(v.length):
                if v.horizontal:
                    grid[v.row][p + k] = True
                else:
                    grid[p + k][v.col] = True
        return grid

    def moves(state):
        grid = occ_of(state)
        for i, v in enumerate(lay.vehicles):
            p = state[i]
            for sign in (1, -1):
                q = p + v.length if sign > 0 else p - 1
                k = 0
                while 0 <= q < W:
                    free = not (grid[v.row][q] if v.horizontal else grid[q][v.col])
                    if not free:
                        break
                    k += 1
                    s = list(state)
                    s[i] = p + sign * k
                    yield tuple(s)
                    q += sign

    for depth in range(limit + 1):
        best: dict[tuple[int, ...], int] = {}

        def dfs(state, remaining):
            if state[lay.target] == lay.goal_pos:
                return True
            if remaining == 0 or best.get(state, -1) >= remaining:
                return False
            best[state] = remaining
            return any(dfs(t, remaining - 1) for t in moves(state))

        if dfs(start, depth):
            return depth
    return None


def band_for(min_moves: int) -> str | None:
    for label, (lo, hi) in TABLE2_BANDS.items():
        if lo <= min_moves <= hi:
            return label
    return None


@dataclass(frozen=True)
class RushTask:
    board: RushBoard
    min_moves: int
    min_cell_moves: int
    level_band: str | None = None
    seed: int = 0
    task_id: str = ""

    @property
    def goal_distance(self) -> int:
        return self.min_moves

    def to_record(self) -> dict:
        return {
            "id": self.task_id,
            "board": self.board.to_string(),
            "min_moves": self.min_moves,
            "min_cell_moves": self.min_cell_moves,
            "band": self.level_band,
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RushTask":
        return cls(
            RushBoard.from_string(rec["board"]),
            int(rec["min_moves"]),
            int(rec["min_cell_moves"]),
            rec.get("band"),
            int(rec.get("seed", 0)),
            str(rec.get("id", "")),
        )

    def sidecar_json(self) -> str:
        return json.dumps({"min_moves": self.min_moves, "band": self.level_band}, sort_keys=True)


def make_task(board: RushBoard, seed: int = 0, task_id: str = "") -> RushTask:
    m = solve_min_moves(board)
    return RushTask(board, m, solve_min_cell_moves(board), band_for(m), seed, task_id or board.to_string())


_DELTA = {"up": -1, "down": 1, "left": -1, "right": 1}


def apply(board: RushBoard, macro: MacroAction) -> Transition:
    """Slide one vehicle ``len(macro)`` cells; all-or-nothing on any blockage."""
    n = len(macro.atoms)
    first = macro.atoms[0]
    bad = Transition(board, (False,) * n, (), board.solved(), board.solved())
    if not all(isinstance(a, Slide) and a == first for a in macro.atoms):
        return bad
    v = board.by_id(first.vehicle)
    if v is None or first.direction not in DIRECTIONS:
        return bad
    if v.horizontal != (first.direction in ("left", "right")):
        return bad
    sign = _DELTA[first.direction]
    occupied = {cell for o in board.vehicles if o.id != v.id for cell in o.cells()}
    cur = v
    for _ in range(n):
        cur = cur.moved(sign)
        for r, c in cur.cells():
            if not (0 <= r < W and 0 <= c < W) or (r, c) in occupied:
                return bad
    nxt = RushBoard(tuple(cur if o.id == v.id else o for o in board.vehicles))
    done = nxt.solved()
    return Transition(nxt, (True,) * n, (), done, done)


class RushHourEnv(Environment):
    env_tag = "rushhour"

    def __init__(self, task: RushTask, mode: MacroMode = ATOMIC, dense: bool = False):
        super().__init__(task, mode, dense)
        self.space = ActionSpace("rushhour")
        self.vocab = build_vocabulary(self.space)
        ids = "".join(v.id for v in task.board.vehicles)
        self.grammar = TokenGrammar(self.vocab, mode, vehicles=ids)

    @property
    def goal_distance(self) -> int:
        return self.task.min_moves

    @property
    def goal_text(self) -> str:
        return "slide vehicles until car X exits on the right of row 3"

    def reset(self) -> Observation:
        self.state = self.task.board
        return self.observe()

    def observe(self) -> Observation:
        b = self.state
        lay = _Layout(b)
        st = lay.start(b)
        occ = lay.occupancy(st)
        runs = {}
        for i, v in enumerate(lay.vehicles):
            fwd = lay.free_run(st, occ, i, 1)
            back = lay.free_run(st, occ, i, -1)
            if v.horizontal:
                runs[v.id] = {"right": fwd, "left": back, "up": 0, "down": 0}
            else:
                runs[v.id] = {"down": fwd, "up": back, "left": 0, "right": 0}
        t = b.target
        blockers = tuple(sorted({b.grid()[EXIT_ROW, c] for c in range(t.col + 2, W)} - {"."}))
        return Observation(b.render(), b.to_string(), (runs, blockers))

    def step(self, action: MacroAction) -> Transition:
        tr = apply(self.state, action)
        self.state = tr.state
        return tr

    def features(self, obs: Observation, prefix):
        runs, blockers = obs.data
        lex = self.vocab.lexemes
        n = len(prefix)
        if n == 0:
            return (("head",),)
        if n == 1:
            return (("vehicle", len(blockers)),) + tuple(("blocker", b) for b in blockers[:2])
        vid = lex[prefix[1]][1:]
        r = runs.get(vid, {})
        if n == 2:
            return tuple(("dir-run", vid in blockers, d, min(r.get(d, 0), 2)) for d in DIRECTIONS)
        d = lex[prefix[2]].lower()
        return (("dist", vid == TARGET_ID, min(r.get(d, 0), 5)),)
