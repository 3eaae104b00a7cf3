"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Every check compares package code against an independent oracle or a closed
form. Criteria 10 to 12 run seeded experiments and full pipelines and are
marked slow; together they take about ten minutes on one CPU.
"""

import math
import random
import string
import time

import numpy as np
import pytest

from horizonlab import datasets as ds
from horizonlab.configio import build_config
from horizonlab.core import discounted_return
from horizonlab.envs.rushhour import (
    CandidateConfig,
    Reject,
    RushBoard,
    apply as rush_apply,
    generate_candidate,
    solve_min_moves,
)
from horizonlab.envs.sudoku import BASIC, count_solutions, grade_basic, make_task
from horizonlab.experiments import ChainProtocol, curriculum_vs_long, depth_sweep, horizon_arms
from horizonlab.grammar import (
    UNBOUNDED,
    FormatError,
    MacroAction,
    Slide,
    build_vocabulary,
    detokenize,
    parse_action,
    render_action,
    tokenize_action,
)
from horizonlab.harness import pass_avg_at_k
from horizonlab.policy import accumulate_policy_gradient, logit_gradient
from horizonlab.rl import ISConfig, importance_weight, importance_weights, normalize

from acceptance_report import record
from conftest import load_corpus
from oracles import enumerate_completions_4x4, rush_iddfs, singles_solve, slide_unit, sudoku_valid_complete
from probes import finite_difference, make_probe, touched

SEEDS = range(20)


def test_criterion_1_gradient_matches_finite_differences():
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        kind = ("chain", "sudoku", "rushhour")[i % 3]
        pol, batch = make_probe(kind, 1000 + i)
        g = accumulate_policy_gradient(pol, batch).grad
        c = touched(batch)
        fd = finite_difference(pol.weights, batch, c)
        worst = max(worst, np.linalg.norm(g[c] - fd) / max(np.linalg.norm(fd), 1e-12))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 30
    assert record(1, ok, f"100 probes, worst relative error {worst:.2e}, {elapsed:.1f}s (limits 1e-5, 30s)")


def test_criterion_2_logit_gradient_structure():
    rng = np.random.default_rng(2)
    bad = 0
    for _ in range(1000):
        p = rng.dirichlet(np.ones(rng.integers(2, 16)))
        s = int(rng.integers(len(p)))
        A = float(rng.normal(0, 3))
        g = logit_gradient(p, s, A)
        expect = -p * A
        expect[s] = (1 - p[s]) * A
        fine = np.max(np.abs(g - expect)) <= 1e-12 and abs(g.sum()) <= 1e-12
        if A < 0:
            fine &= bool(np.all(np.delete(g, s) > 0))
        bad += not fine
    assert record(2, bad == 0, f"1000 simplex points, {bad} violations of the closed form at 1e-12")


def test_criterion_3_importance_weight_law():
    cfg = ISConfig()
    problems = []
    rng = np.random.default_rng(3)
    lp = rng.normal(-2, 1, 7).tolist()
    if importance_weight(lp, lp) != (1.0, 1.0, 1.0):
        problems.append("on-policy")
    rs, rg, w = importance_weight([math.log(4), 0.0], [0.0, 0.0])
    if not (abs(rs - 4) < 1e-12 and abs(rg - 2) < 1e-12 and w == 0.0):
        problems.append("(4, 1) example")
    rs, rg, w = importance_weight([math.log(1.009)] * 2, [0.0, 0.0])
    direct = 1.009 * 1.009
    if not (abs(rg - 1.009) < 1e-12 and abs(w - direct) < 1e-12):
        problems.append("(1.009, 1.009) example")
    for _ in range(200):
        n = rng.integers(1, 9, 64)
        geo = np.exp(rng.uniform(math.log(1.0101), 2.0, 64))
        _, rho_geo, w = importance_weights(np.log(geo) * n, n, cfg)
        if not np.all(rho_geo > cfg.c_high) or np.mean(w == 0) != 1.0:
            problems.append("masked fraction below 1 for a rejected batch")
            break
    lr = rng.normal(0, 5, 100_000)
    w = importance_weights(lr, rng.integers(1, 9, lr.size), cfg)[2]
    if w.max() > 3.0:
        problems.append(f"weight {w.max()} above 3")
    detail = "on-policy, closed-form examples, full masking above 1.01, w <= 3 on 1e5 turns"
    assert record(3, not problems, detail + (f"; failed: {problems}" if problems else ""))


def test_criterion_4_normalization_contract():
    rng = np.random.default_rng(4)
    worst_mean = worst_std = 0.0
    for n in np.unique(np.geomspace(10, 10_000, 200).astype(int)):
        v = rng.normal(rng.uniform(-50, 50), rng.uniform(0.01, 20), n)
        out = normalize(v)
        worst_mean = max(worst_mean, abs(out.mean()))
        worst_std = max(worst_std, abs(out.std() - 1))
    const_ok = all(not normalize([c] * n).any() for c in (-3.7, 0.0, 0.1, 1e6) for n in (1, 10, 1000))
    bitwise = all(
        normalize(v, "batch").tobytes() == normalize(v, "group", groups=[0] * len(v)).tobytes()
        for v in (rng.normal(0, 1, n) for n in (2, 10, 100, 10_000))
    )
    ok = worst_mean <= 1e-9 and worst_std <= 1e-9 and const_ok and bitwise
    detail = f"|mean| {worst_mean:.1e}, |std-1| {worst_std:.1e}, constant->0 {const_ok}, one group = batch {bitwise}"
    assert record(4, ok, detail)


def test_criterion_5_return_recursion():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100_000):
        r = rng.normal(0, 1, rng.integers(1, 40))
        g = rng.uniform(0, 1)
        G = discounted_return(r, g)
        worst = max(worst, abs(G[-1] - r[-1]))
        if len(r) > 1:
            worst = max(worst, float(np.max(np.abs(G[:-1] - (r[:-1] + g * G[1:])))))
    gamma = build_config("").advantage.gamma
    ok = worst <= 1e-12 and gamma == 0.995
    assert record(5, ok, f"1e5 sequences, worst residual {worst:.1e}; default gamma from empty config {gamma}")


def test_criterion_6_sudoku_oracles():
    t0 = time.perf_counter()
    small_bad = 0
    for s in range(1000):
        t = make_task(4, 2 + s % 9, s)
        sols = enumerate_completions_4x4(t.board.cells)
        small_bad += not (len(sols) == 1 and np.array_equal(sols[0], t.solution))
    big_bad = big = 0
    for s in range(200):
        t = make_task(9, 20 + s % 31, s)
        big += 1
        big_bad += not (count_solutions(t.board.cells, cap=2) == 1 and sudoku_valid_complete(t.solution))
    bands = [ds.LevelBand(b.label, b.low, b.high, 12, 8) for b in ds.table1_bands()[:4]]
    m = ds.run_pipeline("sudoku", ds.PipelineConfig(bands), 6)
    not_basic = 0
    for task in m.tasks():
        filled = singles_solve(task.board.cells)
        not_basic += not (grade_basic(task.board) == BASIC and np.array_equal(filled, task.solution))
    elapsed = time.perf_counter() - t0
    ok = small_bad == 0 and big_bad == 0 and not_basic == 0 and elapsed < 120
    detail = (
        f"size 4: {small_bad}/1000 non-unique, size 9: {big_bad}/{big} failures, "
        f"L1-L4 emissions not basic: {not_basic}/{len(m.records)}, {elapsed:.0f}s"
    )
    assert record(6, ok, detail)


def _legal_macros(boards, n, rng):
    out = []
    while len(out) < n:
        b = rng.choice(boards)
        v = rng.choice(b.vehicles)
        dirs = ["left", "right"] if v.horizontal else ["up", "down"]
        d = rng.choice(dirs)
        s, free = b.to_string(), 0
        while free < 4 and (s := slide_unit(s, v.id, d)):
            free += 1
        if free:
            out.append((b, MacroAction((Slide(v.id, d),) * rng.randint(1, free))))
    return out


def test_criterion_7_rush_hour_oracles():
    boards, seed = [], 0
    while len(boards) < 500:
        try:
            boards.append(generate_candidate(CandidateConfig(), seed))
        except Reject:
            pass
        seed += 1
    checked = disagree = 0
    for b in boards:
        m = solve_min_moves(b)
        if m <= 10:
            checked += 1
            disagree += rush_iddfs(b, 10) != m
    rng = random.Random(7)
    macro_bad = 0
    for b, macro in _legal_macros(boards, 10_000, rng):
        tr = rush_apply(b, macro)
        seq, s = b, b.to_string()
        for atom in macro.atoms:
            step = rush_apply(seq, MacroAction((atom,)))
            seq = step.state if all(step.valid) else None
            s = slide_unit(s, atom.vehicle, atom.direction)
            if seq is None:
                break
        macro_bad += not (all(tr.valid) and seq is not None and tr.state == seq and tr.state.to_string() == s)
    ok = checked > 0 and disagree == 0 and macro_bad == 0
    detail = f"BFS vs IDDFS on {checked} boards: {disagree} disagreements; macro vs sequential: {macro_bad}/10000 mismatches"
    assert record(7, ok, detail)


def _mutate(text: str, rng: random.Random, alphabet: str) -> str:
    chars = list(text)
    for _ in range(rng.randint(1, 3)):
        op = rng.random()
        pos = rng.randint(0, len(chars))
        if op < 0.4:
            chars.insert(pos, rng.choice(alphabet))
        elif op < 0.7 and chars:
            del chars[min(pos, len(chars) - 1)]
        elif chars:
            chars[min(pos, len(chars) - 1)] = rng.choice(alphabet)
    return "".join(chars)


def test_criterion_8_grammar_roundtrip_and_fuzz():
    corpus = load_corpus()
    rt_bad = 0
    for env, mode, text in corpus:
        action = parse_action(text, env, mode)
        vocab = build_vocabulary(env)
        rt_bad += render_action(action) != text or detokenize(tokenize_action(text, vocab), vocab) != text
    rng = random.Random(8)
    alphabet = string.printable + "é\x00<>"
    crashes = parsed = 0
    for i in range(1_000_000):
        env, mode, text = corpus[i % len(corpus)]
        src = _mutate(text, rng, alphabet) if i % 4 else "".join(rng.choices(alphabet, k=rng.randint(0, 30)))
        use = UNBOUNDED if i % 2 else mode
        try:
            a = parse_action(src, env, use)
        except FormatError:
            continue
        except Exception:  # any other exception type counts as a crash
            crashes += 1
            continue
        parsed += 1
        if not use.admits(len(a)) or parse_action(render_action(a), env, use) != a:
            crashes += 1
    ok = rt_bad == 0 and crashes == 0
    detail = f"{len(corpus)} corpus lines, {rt_bad} round-trip failures; 1e6 fuzz inputs, {parsed} parsed, {crashes} crashes"
    assert record(8, ok, detail)


def _closed_form(table):
    t = np.asarray(table, dtype=bool)
    return float(np.mean(t.any(axis=1))), float(np.mean(t))


def test_criterion_9_estimators():
    rng = np.random.default_rng(9)
    ok = pass_avg_at_k([[1, 0, 0, 0]]) == (1.0, 0.25)
    ok &= pass_avg_at_k([[1, 1, 0, 0], [0, 0, 0, 0], [0, 0, 0, 1], [1, 1, 1, 1]]) == (0.75, 7 / 16)
    for _ in range(1000):
        t = rng.random((int(rng.integers(1, 40)), 4)) < rng.random()
        p, a = pass_avg_at_k(t)
        ep, ea = _closed_form(t)
        ok &= abs(p - ep) <= 1e-12 and abs(a - ea) <= 1e-12
        p1, a1 = pass_avg_at_k(t[:, :1])
        ok &= p1 == a1
    assert record(9, ok, "pass@4/avg@4 equal closed forms on 1000 tables, (1,0,0,0) -> 1.0/0.25, pass@1 = avg@1")


@pytest.mark.slow
def test_criterion_10_horizon_arms():
    t0 = time.perf_counter()
    runs = [horizon_arms(s, ChainProtocol()) for s in SEEDS]
    elapsed = time.perf_counter() - t0
    mean = {k: float(np.mean([r[k] for r in runs])) for k in runs[0]}
    d4 = mean["d4_atomic"] >= 0.9
    macro_gap = mean["d12_macro"] - mean["d12_atomic"]
    subgoal_gap = mean["d12_subgoal"] - mean["d12_atomic"]
    parts = {
        "d4 atomic >= 0.9": d4,
        "macro d12 - atomic d12 >= 0.2": macro_gap >= 0.2,
        "subgoal d12 - sparse d12 >= 0.2": subgoal_gap >= 0.2,
        "under 600s": elapsed < 600,
    }
    detail = (
        f"d4 {mean['d4_atomic']:.3f}, d12 atomic {mean['d12_atomic']:.3f}, macro {mean['d12_macro']:.3f}, "
        f"subgoal {mean['d12_subgoal']:.3f}, {elapsed:.0f}s; "
        + ", ".join(f"{k}: {'ok' if v else 'NOT MET'}" for k, v in parts.items())
    )
    assert record(10, all(parts.values()), detail)


@pytest.mark.slow
def test_criterion_11_generalization_and_curriculum():
    sweeps = [depth_sweep(s, ChainProtocol()) for s in SEEDS]
    depths = sorted(sweeps[0]["atomic"])
    atomic = {d: float(np.mean([s["atomic"][d] for s in sweeps])) for d in depths}
    macro = {d: float(np.mean([s["macro"][d] for s in sweeps])) for d in depths}
    dominates = all(macro[d] > atomic[d] for d in depths)
    pairs = [curriculum_vs_long(s) for s in SEEDS]
    cur, long_only = float(np.mean([p[0] for p in pairs])), float(np.mean([p[1] for p in pairs]))
    curriculum_ok = cur >= long_only
    curve = " ".join(f"d{d} {macro[d]:.3f}/{atomic[d]:.3f}" for d in depths)
    detail = (
        f"macro/atomic {curve}: dominance {'ok' if dominates else 'NOT MET'}; "
        f"curriculum {cur:.3f} vs long-only {long_only:.3f}: {'ok' if curriculum_ok else 'NOT MET'}"
    )
    assert record(11, dominates and curriculum_ok, detail)


def _integrity(m: ds.DatasetManifest) -> list[str]:
    errs = []
    ids = [r["id"] for r in m.records]
    if len(set(ids)) != len(ids):
        errs.append("duplicate ids")
    states = [ds._dumps(r["state"]) for r in m.records]
    if len(set(states)) != len(states):
        errs.append("duplicate instances")
    for rec, task in zip(m.records, m.tasks()):
        if not m.band(rec["band"]).contains(rec["goal_distance"]) or task.goal_distance != rec["goal_distance"]:
            errs.append(f"{rec['id']} outside its band")
    return errs


@pytest.mark.slow
def test_criterion_12_pipeline_fidelity(tmp_path):
    problems = []
    for env, bands in (("sudoku", ds.table1_bands()), ("rushhour", ds.table2_bands())):
        blobs = []
        for run in range(2):
            m = ds.run_pipeline(env, ds.default_config(env), 0)
            path = tmp_path / f"{env}{run}.jsonl"
            ds.write_manifest(m, path)
            blobs.append(path.read_bytes())
        want = {b.label: {"train": b.train, "test": b.test} for b in bands}
        got = {k: {"train": v.get("train", 0), "test": v.get("test", 0)} for k, v in m.counts().items()}
        if got != want:
            problems.append(f"{env} counts {got}")
        problems += [f"{env}: {e}" for e in _integrity(m)]
        if env == "sudoku":
            for task in m.tasks():
                if count_solutions(task.board.cells, cap=2) != 1 or not np.array_equal(
                    singles_solve(task.board.cells), task.solution
                ):
                    problems.append(f"sudoku {task.task_id} not unique and basic")
        else:
            for rec, task in zip(m.records, m.tasks()):
                if solve_min_moves(RushBoard.from_string(rec["state"]["board"])) != rec["goal_distance"]:
                    problems.append(f"{rec['id']} min_moves mismatch")
        if blobs[0] != blobs[1]:
            problems.append(f"{env} rerun not byte-identical")
    detail = "Table 1 and Table 2 manifests: exact counts, band integrity, byte-identical reruns"
    assert record(12, not problems, detail + (f"; problems: {problems[:5]}" if problems else ""))
