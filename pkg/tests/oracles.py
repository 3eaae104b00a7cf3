"""Independent reference implementations used only by the tests."""

import itertools

import numpy as np


def sudoku_valid_complete(grid) -> bool:
    g = np.asarray(grid)
    n = g.shape[0]
    b = int(round(n**0.5))
    want = set(range(1, n + 1))
    rows = all(set(g[r].tolist()) == want for r in range(n))
    cols = all(set(g[:, c].tolist()) == want for c in range(n))
    boxes = all(
        set(g[r : r + b, c : c + b].ravel().tolist()) == want for r in range(0, n, b) for c in range(0, n, b)
    )
    return rows and cols and boxes


def enumerate_completions_4x4(puzzle) -> list:
    """Every completion of a 4x4 puzzle, by brute force over row permutations."""
    p = np.asarray(puzzle)
    perms = list(itertools.permutations(range(1, 5)))
    options = []
    for r in range(4):
        fixed = p[r]
        options.append([q for q in perms if all(f == 0 or f == v for f, v in zip(fixed, q))])
    out = []
    for rows in itertools.product(*options):
        g = np.array(rows)
        if sudoku_valid_complete(g):
            out.append(g)
    return out


def rush_iddfs(board, limit: int):
    """Iterative deepening over slide moves on the 36-character grid string."""
    s = board.to_string()
    cars = {}
    for i, ch in enumerate(s):
        if ch != ".":
            cars.setdefault(ch, []).append(i)

    def horizontal(cells):
        return len(cells) == 1 or cells[1] - cells[0] == 1

    def moves(state):
        grid = list(state)
        for v, cells in sorted(_cars(state).items()):
            step = 1 if horizontal(cells) else 6
            for sign in (-1, 1):
                k = 0
                head = cells[-1] if sign > 0 else cells[0]
                while True:
                    nxt = head + sign * step * (k + 1)
                    if not 0 <= nxt < 36:
                        break
                    if step == 1 and nxt // 6 != head // 6:
                        break
                    if grid[nxt] != ".":
                        break
                    k += 1
                    g2 = list(state)
                    for c in cells:
                        g2[c] = "."
                    for c in cells:
                        g2[c + sign * step * k] = v
                    yield "".join(g2)

    def goal(state):
        return state[17] == "X"

    def dfs(state, depth, seen):
        if goal(state):
            return True
        if depth == 0:
            return False
        for nxt in moves(state):
            if seen.get(nxt, -1) >= depth - 1:
                continue
            seen[nxt] = depth - 1
            if dfs(nxt, depth - 1, seen):
                return True
        return False

    for d in range(limit + 1):
        if dfs(s, d, {s: d}):
            return d
    return None


def _cars(state):
    cars = {}
    for i, ch in enumerate(state):
        if ch != ".":
            cars.setdefault(ch, []).append(i)
    return cars


def slide_unit(state: str, vid: str, direction: str) -> str | None:
    """One unit slide on a grid string, or None when blocked."""
    cells = _cars(state).get(vid)
    if cells is None:
        return None
    horizontal = len(cells) == 1 or cells[1] - cells[0] == 1
    if horizontal and direction in ("up", "down") or not horizontal and direction in ("left", "right"):
        return None
    delta = {"left": -1, "right": 1, "up": -6, "down": 6}[direction]
    head = cells[-1] if delta > 0 else cells[0]
    nxt = head + delta
    if not 0 <= nxt < 36 or (abs(delta) == 1 and nxt // 6 != head // 6) or state[nxt] != ".":
        return None
    g = list(state)
    for c in cells:
        g[c] = "."
    for c in cells:
        g[c + delta] = vid
    return "".join(g)


def singles_solve(puzzle) -> np.ndarray:
    """Fill cells by naked and hidden singles only, using plain candidate sets.

    Full House is the special case of a naked single with one empty cell in a
    unit, so it needs no separate rule here.
    """
    g = np.array(puzzle, dtype=int)
    n = g.shape[0]
    b = int(round(n**0.5))
    units = [[(r, c) for c in range(n)] for r in range(n)]
    units += [[(r, c) for r in range(n)] for c in range(n)]
    units += [
        [(r, c) for r in range(br, br + b) for c in range(bc, bc + b)] for br in range(0, n, b) for bc in range(0, n, b)
    ]
    peers = {
        (r, c): {p for u in units if (r, c) in u for p in u} - {(r, c)} for r in range(n) for c in range(n)
    }
    while True:
        cand = {
            cell: set(range(1, n + 1)) - {g[p] for p in peers[cell]}
            for cell in peers
            if g[cell] == 0
        }
        placed = False
        for cell, opts in cand.items():
            if len(opts) == 1:
                g[cell] = opts.pop()
                placed = True
                break
        if not placed:
            for u in units:
                for d in range(1, n + 1):
                    if any(g[cell] == d for cell in u):
                        continue
                    spots = [cell for cell in u if g[cell] == 0 and d in cand[cell]]
                    if len(spots) == 1:
                        g[spots[0]] = d
                        placed = True
                        break
                if placed:
                    break
        if not placed:
            return g
