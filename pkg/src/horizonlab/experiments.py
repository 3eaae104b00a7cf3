"""Seeded chain-environment protocols shared by the experiment scripts and tests.

Every protocol trains a fresh policy from zero weights on chain tasks that
share one cue-to-branch rule, so skill at one depth transfers to any other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .envs import make_env
from .envs.chain import ChainTask, generate_chain
from .grammar import ATOMIC, MacroMode, flexible
from .harness import CurriculumPlan, Phase, evaluate, run_curriculum
from .policy import FeatureMap, SoftmaxSequencePolicy
from .rl import AdvantageConfig, ISConfig, TrainerConfig, train

MACRO = flexible(4)


@dataclass(frozen=True)
class ChainProtocol:
    """Knobs shared by all chain runs."""

    branching: int = 2
    n_tasks: int = 64
    iterations: int = 100
    short_iterations: int = 200
    tasks_per_batch: int = 16
    learning_rate: float = 0.05
    table_size: int = 2**14
    budget_factor: int = 2
    tail: int = 10
    eval_tasks: int = 32
    eval_k: int = 4


def chain_tasks(depths: Sequence[int], n: int, seed: int, branching: int = 2) -> list[ChainTask]:
    rng = np.random.default_rng(seed)
    return [
        generate_chain(int(rng.choice(depths)), branching, int(s), task_id=f"c{seed}-{i}")
        for i, s in enumerate(rng.integers(0, 2**31, size=n))
    ]


def budget(depth: int, mode: MacroMode, factor: int = 2) -> int:
    """Turn budget: ``factor`` times the minimum turn count for the mode."""
    per = mode.max_atoms or depth
    return factor * math.ceil(depth / per)


def fresh_policy(protocol: ChainProtocol) -> SoftmaxSequencePolicy:
    env = make_env(generate_chain(1, protocol.branching, 0))
    return SoftmaxSequencePolicy(len(env.vocab.lexemes), FeatureMap(protocol.table_size))


def run_chain(
    depths: Sequence[int],
    mode: MacroMode,
    seed: int,
    protocol: ChainProtocol = ChainProtocol(),
    *,
    subgoal_every: int | None = None,
    policy: SoftmaxSequencePolicy | None = None,
    iterations: int | None = None,
    advantage: AdvantageConfig = AdvantageConfig(),
    importance: ISConfig = ISConfig(),
) -> tuple[SoftmaxSequencePolicy, list[dict]]:
    """Train on chains with depths drawn from ``depths``.

    With ``subgoal_every`` the environment emits a subgoal event (and a +1
    dense reward) every that many nodes and returns are computed per segment.
    """
    policy = policy or fresh_policy(protocol)
    tasks = chain_tasks(depths, protocol.n_tasks, seed, protocol.branching)
    segmented = subgoal_every is not None
    cfg = TrainerConfig(
        iterations=iterations or protocol.iterations,
        tasks_per_batch=protocol.tasks_per_batch,
        learning_rate=protocol.learning_rate,
        h_max=budget(max(depths), mode, protocol.budget_factor),
        macro_mode=mode,
        dense_rewards=segmented,
        subgoal_every=subgoal_every,
        seed=seed,
    )
    adv = replace(advantage, segment_subgoals=segmented) if segmented else advantage
    hist = train(policy, tasks, cfg, adv, importance)
    return policy, hist


def final_success(hist: Sequence[dict], tail: int = 10) -> float:
    """Mean training success over the last ``tail`` iterations."""
    return float(np.mean([r["success_rate"] for r in hist[-tail:]]))


def depth_success(
    policy: SoftmaxSequencePolicy,
    depths: Sequence[int],
    mode: MacroMode,
    seed: int,
    protocol: ChainProtocol = ChainProtocol(),
) -> dict[int, float]:
    """avg@K on held-out chains, one band per depth."""
    source = {
        f"D{d}": chain_tasks([d], protocol.eval_tasks, 10_000 + seed, protocol.branching) for d in depths
    }
    h = {f"D{d}": budget(d, mode, protocol.budget_factor) for d in depths}
    rep = evaluate(policy, source, None, protocol.eval_k, 0.8, seed, split=None, macro_mode=mode, h_max=h)
    return {d: rep.row(f"D{d}").avg_at_k for d in depths}


def horizon_arms(seed: int, protocol: ChainProtocol = ChainProtocol()) -> dict[str, float]:
    """Final training success of the four horizon arms for one seed.

    The depth-4 arm gets ``short_iterations`` updates; the depth-12 arms
    (sparse atomic, sparse macro, subgoals every 4 nodes) get ``iterations``.
    """
    p = protocol
    return {
        "d4_atomic": final_success(run_chain([4], ATOMIC, seed, p, iterations=p.short_iterations)[1], p.tail),
        "d12_atomic": final_success(run_chain([12], ATOMIC, seed, p)[1], p.tail),
        "d12_macro": final_success(run_chain([12], MACRO, seed, p)[1], p.tail),
        "d12_subgoal": final_success(run_chain([12], ATOMIC, seed, p, subgoal_every=4)[1], p.tail),
    }


def depth_sweep(
    seed: int,
    protocol: ChainProtocol = ChainProtocol(),
    train_depths: Sequence[int] = (2, 3, 4),
    eval_depths: Sequence[int] = (6, 8, 10, 12),
) -> dict[str, dict[int, float]]:
    """Train atomic and macro policies on short chains, score them on unseen depths."""
    out = {}
    for name, mode in (("atomic", ATOMIC), ("macro", MACRO)):
        pol, _ = run_chain(train_depths, mode, seed, protocol)
        out[name] = depth_success(pol, eval_depths, mode, seed, protocol)
    return out


def curriculum_vs_long(
    seed: int,
    short: Sequence[int] = (3, 4, 5),
    long: Sequence[int] = (8, 9, 10),
    protocol: ChainProtocol = ChainProtocol(),
    mode: MacroMode = ATOMIC,
) -> tuple[float, float]:
    """Held-out success on ``long`` depths after short-then-long vs long-only training.

    Both arms get the same total number of updates.
    """
    it = protocol.iterations
    tasks = {"short": chain_tasks(short, protocol.n_tasks, seed), "long": chain_tasks(long, protocol.n_tasks, seed + 1)}
    held = {"long": chain_tasks(long, protocol.eval_tasks, 10_000 + seed)}

    def trainer(depths, n):
        return TrainerConfig(
            iterations=n,
            tasks_per_batch=protocol.tasks_per_batch,
            learning_rate=protocol.learning_rate,
            h_max=budget(max(depths), mode, protocol.budget_factor),
            macro_mode=mode,
            seed=seed,
        )

    def source_with_eval():
        return {"short": tasks["short"], "long": tasks["long"], "held": held["long"]}

    results = []
    for phases in (
        [Phase("short", ["short"], trainer(short, it)), Phase("long", ["long"], trainer(long, it))],
        [Phase("long-only", ["long"], trainer(long, 2 * it))],
    ):
        plan = CurriculumPlan(phases, ["held"], eval_k=protocol.eval_k, eval_split=None, train_split=None)
        res = run_curriculum(plan, fresh_policy(protocol), source_with_eval(), eval_seed=seed)
        results.append(res.report.row("held").avg_at_k)
    return results[0], results[1]
