import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from horizonlab.envs.base import Infeasible
from horizonlab.envs.sudoku import (
    BACKTRACKING_ONLY,
    BASIC,
    TABLE1_BANDS,
    SudokuBoard,
    SudokuEnv,
    SudokuTask,
    apply,
    basic_fixpoint,
    count_solutions,
    dig_puzzle,
    generate_solved_grid,
    grade_basic,
    level_for,
    make_task,
    step_correctness,
)
from horizonlab.grammar import Assign, MacroAction, flexible

from oracles import enumerate_completions_4x4, sudoku_valid_complete

# 56 empties; basic techniques stall, one Naked Pair elimination unlocks the rest.
# Found by scanning generator output with an independent pencil-mark solver.
NAKED_PAIR = "003000056700000008002058310600000030090086004000007000000000000045062079030000060"
NAKED_PAIR_SOLUTION = "183274956759613248462958317674129835391586724528437691216795483845362179937841562"


def _grid(s):
    return np.array([int(c) for c in s]).reshape(9, 9)


def test_table1_bands_match_published_ranges():
    assert TABLE1_BANDS == {
        "L1": (11, 15), "L2": (16, 20), "L3": (21, 25), "L4": (26, 30),
        "L5": (31, 35), "L6": (36, 40), "L7": (41, 45),
    }


@pytest.mark.parametrize("size", [4, 9])
def test_solved_grid_valid_and_deterministic(size):
    g = generate_solved_grid(size, 1)
    assert sudoku_valid_complete(g)
    assert np.array_equal(g, generate_solved_grid(size, 1))


def test_many_solved_grids_valid():
    for seed in range(200):
        assert sudoku_valid_complete(generate_solved_grid(9, seed))


def test_dig_l1_band():
    t = make_task(9, 12, 3)
    assert t.empty_count == 12 == t.goal_distance
    assert t.level == "L1" == level_for(12, 9)
    assert count_solutions(t.board.cells, cap=2) == 1


def test_dig_single_empty_is_basic():
    t = make_task(9, 1, 5)
    assert t.empty_count == 1 and t.technique_grade == BASIC


def test_dig_rejects_bad_target():
    g = generate_solved_grid(4, 0)
    with pytest.raises(ValueError):
        dig_puzzle(g, 0, 0)
    with pytest.raises(ValueError):
        dig_puzzle(g, 16, 0)


def test_dig_infeasible():
    # a 4x4 grid cannot keep a unique solution with 15 of 16 cells blank
    with pytest.raises(Infeasible):
        dig_puzzle(generate_solved_grid(4, 0), 15, 0, retries=3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 10))
def test_small_puzzles_have_exactly_one_completion(seed, empties):
    t = make_task(4, empties, seed)
    sols = enumerate_completions_4x4(t.board.cells)
    assert len(sols) == 1 and np.array_equal(sols[0], t.solution)


def test_naked_pair_puzzle_is_not_basic():
    grid = _grid(NAKED_PAIR)
    assert count_solutions(grid, cap=2) == 1
    assert grade_basic(grid) == BACKTRACKING_ONLY
    stalled = basic_fixpoint(grid)
    assert (stalled == 0).any()
    # everything the fixpoint did fill agrees with the unique solution
    sol = _grid(NAKED_PAIR_SOLUTION)
    assert np.all((stalled == 0) | (stalled == sol))


def test_wrong_value_poisons_board():
    t = make_task(9, 20, 11)
    r, c = map(int, np.argwhere(t.board.cells == 0)[0])
    wrong = next(v for v in range(1, 10) if v != t.solution[r, c])
    cells = t.board.cells.copy()
    cells[r, c] = wrong
    assert count_solutions(cells, cap=2) == 0


def test_apply_correct_last_cell_terminates():
    t = make_task(9, 1, 2)
    r, c = map(int, np.argwhere(t.board.cells == 0)[0])
    tr = apply(t.board, MacroAction((Assign(int(t.solution[r, c]), r + 1, c + 1),)), t.solution)
    assert tr.terminal and tr.success and tr.valid == (True,)


def test_apply_given_cell_invalid():
    t = make_task(9, 20, 2)
    r, c = map(int, np.argwhere(t.board.givens_mask)[0])
    tr = apply(t.board, MacroAction((Assign(1, r + 1, c + 1),)), t.solution)
    assert tr.valid == (False,) and tr.state == t.board


def test_apply_constraint_violation_invalid():
    t = make_task(9, 20, 4)
    r, c = map(int, np.argwhere(t.board.cells == 0)[0])
    clash = int(next(v for v in t.board.cells[r] if v))
    tr = apply(t.board, MacroAction((Assign(clash, r + 1, c + 1),)), t.solution)
    assert tr.valid == (False,)


def test_box_completion_event_fires_once():
    sol = generate_solved_grid(9, 8)
    cells = sol.copy()
    # blank three cells of box 4 (the centre box) and two cells elsewhere
    hole = [(3, 3), (4, 4), (5, 5)]
    for r, c in hole + [(0, 0), (8, 8)]:
        cells[r, c] = 0
    board = SudokuBoard.from_puzzle(cells)
    macro = MacroAction(tuple(Assign(int(sol[r, c]), r + 1, c + 1) for r, c in hole))
    tr = apply(board, macro, sol)
    assert tr.subgoal_events == (4,)
    again = apply(tr.state, MacroAction((Assign(int(sol[0, 0]), 1, 1),)), sol)
    assert 4 not in again.subgoal_events and again.subgoal_events == (0,)


def test_step_correctness_examples():
    sol = generate_solved_grid(9, 0)
    right = Assign(int(sol[0, 0]), 1, 1)
    wrong = Assign(int(sol[1, 1]) % 9 + 1, 2, 2)
    assert step_correctness([right], sol) == 1.0
    assert step_correctness([wrong], sol) == 0.0
    assert step_correctness([right, Assign(int(sol[2, 2]), 3, 3), wrong], sol) == pytest.approx(2 / 3)


def test_monotone_solvability():
    t = make_task(9, 25, 21)
    assert t.technique_grade == BASIC
    for r, c in np.argwhere(t.board.cells == 0)[:5]:
        tr = apply(t.board, MacroAction((Assign(int(t.solution[r, c]), int(r) + 1, int(c) + 1),)), t.solution)
        assert grade_basic(tr.state) == BASIC


def test_record_roundtrip():
    t = make_task(9, 14, 6, task_id="x")
    back = SudokuTask.from_record(t.to_record())
    assert back.board == t.board and np.array_equal(back.solution, t.solution)
    assert back.task_id == "x" and back.level == "L1"


def test_board_string_validation():
    with pytest.raises(ValueError):
        SudokuBoard.from_string("123")


def test_env_episode_with_macro():
    t = make_task(4, 5, 9)
    env = SudokuEnv(t, flexible(5))
    env.reset()
    empties = [tuple(map(int, rc)) for rc in np.argwhere(t.board.cells == 0)]
    macro = MacroAction(tuple(Assign(int(t.solution[r, c]), r + 1, c + 1) for r, c in empties), 5)
    tr = env.step(macro)
    assert tr.success and all(tr.valid) and all(tr.correct)
