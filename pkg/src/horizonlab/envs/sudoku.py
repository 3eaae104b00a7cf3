"""Sudoku: unique-solution generation, basic-technique grading and turn semantics.

Boards are ``size x size`` numpy int grids with 0 for empty. Sizes 4 and 9 are
supported (2x2 and 3x3 boxes). Box indices are 0-based, row-major.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..grammar import (
    ATOMIC,
    ActionSpace,
    Assign,
    MacroAction,
    MacroMode,
    TokenGrammar,
    build_vocabulary,
)
from .base import Environment, Infeasible, Observation, Transition

TABLE1_BANDS = {
    "L1": (11, 15),
    "L2": (16, 20),
    "L3": (21, 25),
    "L4": (26, 30),
    "L5": (31, 35),
    "L6": (36, 40),
    "L7": (41, 45),
}
SMALL_BANDS = {"S1": (2, 4), "S2": (5, 7), "S3": (8, 10), "S4": (11, 12)}

BASIC = "basic"
BACKTRACKING_ONLY = "backtracking_only"


def box_size(size: int) -> int:
    b = math.isqrt(size)
    if b * b != size or size not in (4, 9):
        raise ValueError("size must be 4 or 9")
    return b


def level_for(empty_count: int, size: int) -> str | None:
    bands = TABLE1_BANDS if size == 9 else SMALL_BANDS
    for label, (lo, hi) in bands.items():
        if lo <= empty_count <= hi:
            return label
    return None


class _Units:
    """Precomputed peers and units for one board size."""

    _cache: dict[int, "_Units"] = {}

    def __init__(self, size):
        b = box_size(size)
        self.size = size
        self.b = b
        cells = range(size * size)
        self.rows = [[r * size + c for c in range(size)] for r in range(size)]
        self.cols = [[r * size + c for r in range(size)] for c in range(size)]
        self.boxes = [
            [
                (br * b + i) * size + bc * b + j
                for i in range(b)
                for j in range(b)
            ]
            for br in range(b)
            for bc in range(b)
        ]
        self.units = self.rows + self.cols + self.boxes
        self.box_of = [(i // size) // b * b + (i % size) // b for i in cells]
        self.peers = []
        for i in cells:
            r, c = divmod(i, size)
            p = set(self.rows[r]) | set(self.cols[c]) | set(self.boxes[self.box_of[i]])
            p.discard(i)
            self.peers.append(tuple(sorted(p)))
        self.full = (1 << size) - 1

    @classmethod
    def of(cls, size):
        if size not in cls._cache:
            cls._cache[size] = cls(size)
        return cls._cache[size]


def _bit(v: int) -> int:
    return 1 << (v - 1)


def _candidates(flat: list[int], units: _Units) -> list[int]:
    cand = []
    for i, v in enumerate(flat):
        if v:
            cand.append(0)
            continue
        used = 0
        for p in units.peers[i]:
            if flat[p]:
                used |= _bit(flat[p])
        cand.append(units.full & ~used)
    return cand


def is_valid_partial(grid) -> bool:
    """No duplicate nonzero value in any row, column or box."""
    g = np.asarray(grid)
    units = _Units.of(g.shape[0])
    flat = g.ravel().tolist()
    for unit in units.units:
        vals = [flat[i] for i in unit if flat[i]]
        if len(vals) != len(set(vals)):
            return False
    return all(0 <= v <= units.size for v in flat)


def is_solved_grid(grid) -> bool:
    g = np.asarray(grid)
    return bool(np.all(g > 0)) and is_valid_partial(g)


def count_solutions(grid, cap: int = 2) -> int:
    """Count completions of ``grid`` by backtracking, stopping at ``cap``."""
    g = np.asarray(grid)
    units = _Units.of(g.shape[0])
    flat = g.ravel().tolist()
    if not is_valid_partial(g):
        return 0
    count = 0

    def search(flat):
        nonlocal count
        cand = _candidates(flat, units)
        best, best_n = -1, 99
        for i, v in enumerate(flat):
            if v == 0:
                n = bin(cand[i]).count("1")
                if n < best_n:
                    best, best_n = i, n
                    if n <= 1:
                        break
        if best < 0:
            count += 1
            return count >= cap
        if best_n == 0:
            return False
        m = cand[best]
        while m:
            low = m & -m
            m ^= low
            flat[best] = low.bit_length()
            if search(flat):
                return True
        flat[best] = 0
        return False

    search(flat)
    return count


def solve(grid) -> np.ndarray | None:
    """First completion found by backtracking, or None."""
    g = np.asarray(grid)
    units = _Units.of(g.shape[0])
    flat = g.ravel().tolist()
    if not is_valid_partial(g):
        return None

    def search():
        cand = _candidates(flat, units)
        best, best_n = -1, 99
        for i, v in enumerate(flat):
            if v == 0:
                n = bin(cand[i]).count("1")
                if n < best_n:
                    best, best_n = i, n
        if best < 0:
            return True
        m = cand[best]
        while m:
            low = m & -m
            m ^= low
            flat[best] = low.bit_length()
            if search():
                return True
        flat[best] = 0
        return False

    if not search():
        return None
    return np.array(flat, dtype=np.int8).reshape(g.shape)


def generate_solved_grid(size: int, seed: int) -> np.ndarray:
    """A uniformly shuffled valid completed grid, deterministic per seed."""
    box_size(size)
    rng = np.random.default_rng(seed)
    units = _Units.of(size)
    flat = [0] * (size * size)

    def fill():
        cand = _candidates(flat, units)
        best, best_n = -1, 99
        for i, v in enumerate(flat):
            if v == 0:
                n = bin(cand[i]).count("1")
                if n < best_n:
                    best, best_n = i, n
        if best < 0:
            return True
        for v in (rng.permutation(size) + 1).tolist():
            if cand[best] & _bit(v):
                flat[best] = v
                if fill():
                    return True
        flat[best] = 0
        return False

    fill()
    return np.array(flat, dtype=np.int8).reshape(size, size)


@dataclass(frozen=True)
class SudokuBoard:
    cells: np.ndarray
    givens_mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=np.int8))
        object.__setattr__(self, "givens_mask", np.asarray(self.givens_mask, dtype=bool))
        self.cells.setflags(write=False)
        self.givens_mask.setflags(write=False)

    @property
    def size(self) -> int:
        return self.cells.shape[0]

    @property
    def empty_count(self) -> int:
        return int(np.count_nonzero(self.cells == 0))

    @classmethod
    def from_puzzle(cls, cells) -> "SudokuBoard":
        c = np.asarray(cells, dtype=np.int8)
        return cls(c, c > 0)

    def to_string(self) -> str:
        return "".join(str(int(v)) for v in self.cells.ravel())

    @classmethod
    def from_string(cls, s: str) -> "SudokuBoard":
        n = math.isqrt(len(s))
        if n * n != len(s) or n not in (4, 9) or not s.isdigit():
            raise ValueError(f"not a 16- or 81-digit puzzle string: {s!r}")
        return cls.from_puzzle(np.array([int(ch) for ch in s], dtype=np.int8).reshape(n, n))

    def render(self) -> str:
        return "\n".join(" ".join(str(v) if v else "." for v in row) for row in self.cells.tolist())

    def __eq__(self, other):
        return (
            isinstance(other, SudokuBoard)
            and np.array_equal(self.cells, other.cells)
            and np.array_equal(self.givens_mask, other.givens_mask)
        )

    def __hash__(self):
        return hash((self.cells.tobytes(), self.givens_mask.tobytes()))


@dataclass(frozen=True)
class SudokuTask:
    board: SudokuBoard
    solution: np.ndarray
    level: str | None = None
    technique_grade: str = BASIC
    seed: int = 0
    task_id: str = ""

    @property
    def empty_count(self) -> int:
        return self.board.empty_count

    @property
    def goal_distance(self) -> int:
        return self.board.empty_count

    @property
    def size(self) -> int:
        return self.board.size

    def to_record(self) -> dict:
        return {
            "id": self.task_id,
            "puzzle": self.board.to_string(),
            "solution": "".join(str(int(v)) for v in np.asarray(self.solution).ravel()),
            "level": self.level,
            "grade": self.technique_grade,
            "empty_count": self.empty_count,
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SudokuTask":
        board = SudokuBoard.from_string(rec["puzzle"])
        sol = SudokuBoard.from_string(rec["solution"]).cells.copy()
        return cls(board, sol, rec.get("level"), rec.get("grade", BASIC), int(rec.get("seed", 0)), str(rec.get("id", "")))

    def sidecar_json(self) -> str:
        rec = self.to_record()
        return json.dumps({k: rec[k] for k in ("solution", "level", "grade", "empty_count")}, sort_keys=True)


def _removal_keeps_unique(flat, i, units) -> bool:
    """Cheap sufficient test: the removed value is the only candidate left."""
    v = flat[i]
    flat[i] = 0
    used = 0
    for p in units.peers[i]:
        if flat[p]:
            used |= _bit(flat[p])
    flat[i] = v
    return (units.full & ~used) == _bit(v)


def dig_puzzle(grid, empty_target: int, seed: int, retries: int = 20) -> SudokuTask:
    """Blank ``empty_target`` cells of a solved grid keeping the solution unique.

    Raises:
        Infeasible: if no dig order within ``retries`` attempts reaches the target.
    """
    solution = np.asarray(grid, dtype=np.int8)
    size = solution.shape[0]
    if not 0 < empty_target < size * size:
        raise ValueError("empty_target must lie strictly between 0 and size**2")
    if not is_solved_grid(solution):
        raise ValueError("grid is not a valid completed sudoku")
    units = _Units.of(size)
    rng = np.random.default_rng(seed)
    for _ in range(retries):
        flat = solution.ravel().tolist()
        removed = 0
        for i in rng.permutation(size * size).tolist():
            if removed == empty_target:
                break
            if _removal_keeps_unique(flat, i, units):
                flat[i] = 0
                removed += 1
                continue
            v = flat[i]
            flat[i] = 0
            if count_solutions(np.array(flat).reshape(size, size), cap=2) == 1:
                removed += 1
            else:
                flat[i] = v
        if removed == empty_target:
            cells = np.array(flat, dtype=np.int8).reshape(size, size)
            board = SudokuBoard.from_puzzle(cells)
            grade = grade_basic(board)
            return SudokuTask(board, solution.copy(), level_for(empty_target, size), grade, seed)
    raise Infeasible(f"could not reach {empty_target} empties with a unique solution")


def basic_fixpoint(grid) -> np.ndarray:
    """Apply Full House, Naked Single and Hidden Single until nothing changes."""
    g = np.asarray(grid)
    units = _Units.of(g.shape[0])
    flat = g.ravel().tolist()
    changed = True
    while changed:
        changed = False
        cand = _candidates(flat, units)
        # full house: a unit with one empty cell
        for unit in units.units:
            empties = [i for i in unit if flat[i] == 0]
            if len(empties) == 1:
                i = empties[0]
                missing = units.full
                for j in unit:
                    if flat[j]:
                        missing &= ~_bit(flat[j])
                if missing and missing & (missing - 1) == 0 and cand[i] & missing:
                    flat[i] = missing.bit_length()
                    changed = True
        if changed:
            continue
        # naked single
        for i, v in enumerate(flat):
            if v == 0 and cand[i] and cand[i] & (cand[i] - 1) == 0:
                flat[i] = cand[i].bit_length()
                changed = True
        if changed:
            continue
        # hidden single
        for unit in units.units:
            for d in range(1, units.size + 1):
                spots = [i for i in unit if flat[i] == 0 and cand[i] & _bit(d)]
                if len(spots) == 1 and not any(flat[j] == d for j in unit):
                    flat[spots[0]] = d
                    changed = True
                    break
            if changed:
                break
    return np.array(flat, dtype=np.int8).reshape(g.shape)


def grade_basic(puzzle) -> str:
    cells = puzzle.cells if isinstance(puzzle, SudokuBoard) else np.asarray(puzzle)
    done = basic_fixpoint(cells)
    return BASIC if np.all(done > 0) and is_valid_partial(done) else BACKTRACKING_ONLY


def box_complete(cells: np.ndarray, solution: np.ndarray, box: int) -> bool:
    units = _Units.of(cells.shape[0])
    flat_c = cells.ravel()
    flat_s = np.asarray(solution).ravel()
    return all(flat_c[i] == flat_s[i] for i in units.boxes[box])


def apply(board: SudokuBoard, macro: MacroAction, solution) -> Transition:
    """Apply atoms in order; invalid atoms are skipped and flagged."""
    size = board.size
    units = _Units.of(size)
    sol = np.asarray(solution)
    cells = board.cells.copy()
    before = {b for b in range(size) if box_complete(cells, sol, b)}
    valid = []
    correct = []
    for atom in macro.atoms:
        if not isinstance(atom, Assign):
            valid.append(False)
            correct.append(False)
            continue
        r, c, v = atom.row - 1, atom.col - 1, atom.value
        ok = 0 <= r < size and 0 <= c < size and 1 <= v <= size
        if ok:
            i = r * size + c
            ok = not board.givens_mask[r, c] and cells[r, c] == 0
            if ok:
                flat = cells.ravel()
                ok = all(flat[p] != v for p in units.peers[i])
        if ok:
            cells[r, c] = v
        valid.append(bool(ok))
        correct.append(bool(ok and sol[r, c] == v))
    after = {b for b in range(size) if box_complete(cells, sol, b)}
    events = tuple(sorted(after - before))
    nxt = SudokuBoard(cells, board.givens_mask)
    success = bool(np.array_equal(cells, sol))
    return Transition(nxt, tuple(valid), events, success, success, tuple(correct))


def step_correctness(atoms: Sequence[Assign], solution, valid: Sequence[bool] | None = None) -> float:
    """Fraction of atoms that write the solution's value into their cell."""
    if not atoms:
        return 0.0
    sol = np.asarray(solution)
    hits = 0
    for k, a in enumerate(atoms):
        if valid is not None and not valid[k]:
            continue
        if sol[a.row - 1, a.col - 1] == a.value:
            hits += 1
    return hits / len(atoms)


def make_task(size: int, empty_target: int, seed: int, task_id: str = "") -> SudokuTask:
    grid = generate_solved_grid(size, seed)
    t = dig_puzzle(grid, empty_target, seed)
    return SudokuTask(t.board, t.solution, t.level, t.technique_grade, seed, task_id or f"sudoku-{size}-{seed}")


class SudokuEnv(Environment):
    env_tag = "sudoku"

    def __init__(self, task: SudokuTask, mode: MacroMode = ATOMIC, dense: bool = False):
        super().__init__(task, mode, dense)
        self.space = ActionSpace("sudoku", size=task.size)
        self.vocab = build_vocabulary(self.space)
        self.grammar = TokenGrammar(self.vocab, mode)
        self._units = _Units.of(task.size)

    @property
    def goal_distance(self) -> int:
        return self.task.goal_distance

    @property
    def goal_text(self) -> str:
        return f"fill all {self.task.goal_distance} empty cells of the {self.task.size}x{self.task.size} grid"

    def reset(self) -> Observation:
        self.state = self.task.board
        return self.observe()

    def observe(self) -> Observation:
        cells = self.state.cells
        flat = cells.ravel().tolist()
        cand = _candidates(flat, self._units)
        return Observation(self.state.render(), (self.task.task_id, self.state.to_string()), (flat, cand))

    def step(self, action: MacroAction) -> Transition:
        tr = apply(self.state, action, self.task.solution)
        self.state = tr.state
        return tr

    def features(self, obs: Observation, prefix):
        flat, cand = obs.data
        size = self.task.size
        pos = len(prefix) % self.grammar.atom_len
        atoms = len(prefix) // self.grammar.atom_len
        lex = self.vocab.lexemes
        if pos == 0:
            return (("head", atoms, sum(1 for v in flat if v == 0) > atoms),)
        if pos == 1:
            return (("digit",),)
        d = int(lex[prefix[-1]][1:]) if pos == 2 else int(lex[prefix[-2]][1:])
        if pos == 2:
            spots = sum(1 for i in range(size * size) if cand[i] >> (d - 1) & 1)
            return (("row", d), ("digit-open", min(spots, 3)))
        r = int(lex[prefix[-1]][1:]) - 1
        feats = [("col",)]
        for c in range(size):
            i = r * size + c
            m = cand[i]
            if flat[i] or not m >> (d - 1) & 1:
                feats.append(("cell-blocked", c))
            elif m & (m - 1) == 0:
                feats.append(("cell-single", c))
            else:
                feats.append(("cell-open", c))
        return tuple(feats)
