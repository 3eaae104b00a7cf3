"""Off-policy REINFORCE with split reward streams, batch normalization and MIS x TIS.

Per turn ``t`` of a trajectory::

    r_traj_t = sum_{k>=t} gamma^(k-t) r_k          (environment rewards only)
    r_step_t = format_penalty_t + validity_penalty_t
    A_t      = norm(r_traj)_t + alpha * norm(r_step)_t
    w_t      = 1[c_low <= rho_geo_t <= c_high] * min(rho_seq_t, c_trunc)

and every token of the turn is pushed along ``w_t * A_t * grad log pi``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import InteractionLog, Outcome, Step, Trajectory, Turn, build_window, discounted_return
from .envs import make_env
from .grammar import ATOMIC, FormatError, MacroMode, detokenize, parse_action
from .policy import Decision, PackedDecisions, SoftmaxSequencePolicy, sample_action

log = logging.getLogger(__name__)

FORMAT_PENALTY = -0.5
VALIDITY_PENALTY = -0.5


@dataclass(frozen=True)
class AdvantageConfig:
    gamma: float = 0.995
    alpha: float = 0.2
    normalization: str = "batch"
    epsilon: float = 1e-8
    segment_subgoals: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0,1]")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.normalization not in ("batch", "group", "none"):
            raise ValueError("normalization must be batch, group or none")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class ISConfig:
    c_low: float = 0.995
    c_high: float = 1.01
    c_trunc: float = 3.0
    mode: str = "mis+tis"

    def __post_init__(self):
        if not 0 < self.c_low <= 1 <= self.c_high:
            raise ValueError("need 0 < c_low <= 1 <= c_high")
        if self.c_trunc < 1:
            raise ValueError("c_trunc must be >= 1")
        if self.mode not in ("mis+tis", "tis", "mis", "none"):
            raise ValueError("IS mode must be mis+tis, tis, mis or none")


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 4
    iterations: int | None = None
    tasks_per_batch: int = 16
    rollouts_per_task: int = 1
    minibatches: int = 1
    learning_rate: float = 1e-2
    temperature: float = 0.8
    train_temperature: float | None = None
    h_max: int = 50
    window: int = 2
    macro_mode: MacroMode = ATOMIC
    dense_rewards: bool = False
    subgoal_every: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.minibatches < 1:
            raise ValueError("minibatches must be >= 1")
        if self.tasks_per_batch < 1 or self.rollouts_per_task < 1:
            raise ValueError("batch sizes must be positive")
        if self.temperature <= 0 or (self.train_temperature is not None and self.train_temperature <= 0):
            raise ValueError("temperatures must be positive")
        if self.h_max < 1:
            raise ValueError("h_max must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @property
    def batch_size(self) -> int:
        return self.tasks_per_batch * self.rollouts_per_task

    @property
    def training_temperature(self) -> float:
        return self.temperature if self.train_temperature is None else self.train_temperature


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, log: list[dict]):
        super().__init__(message)
        self.log = log


# -- reward transforms -----------------------------------------------------------


def segment_by_subgoal(trajectory: Trajectory) -> list[tuple[int, int]]:
    """Inclusive (start, end) step ranges, cut after every step with a subgoal event."""
    segs = []
    start = 0
    n = len(trajectory.steps)
    for t, s in enumerate(trajectory.steps):
        if s.subgoal_events:
            segs.append((start, t))
            start = t + 1
    if start < n:
        segs.append((start, n - 1))
    return segs


def decompose_rewards(trajectory: Trajectory, config: AdvantageConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-step trajectory-level returns and step-level penalties, kept apart."""
    r = trajectory.env_rewards()
    if config.segment_subgoals:
        r_traj = np.empty_like(r)
        for a, b in segment_by_subgoal(trajectory):
            r_traj[a : b + 1] = discounted_return(r[a : b + 1], config.gamma)
    else:
        r_traj = discounted_return(r, config.gamma)
    r_step = np.array([s.format_penalty + s.validity_penalty for s in trajectory.steps], dtype=float)
    return r_traj, r_step


def _standardize(v: np.ndarray, epsilon: float) -> np.ndarray:
    if np.all(v == v[0]):
        # exact zeros; (v - mean) / epsilon would amplify the mean's rounding error
        return np.zeros_like(v)
    mu = v.mean()
    sd = v.std()
    return (v - mu) / max(sd, epsilon)


def normalize(
    values: Sequence[float],
    mode: str = "batch",
    epsilon: float = 1e-8,
    groups: Sequence | None = None,
) -> np.ndarray:
    """Batch, group or no standardization (population std, floored at epsilon)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("cannot normalize an empty batch")
    if mode == "none":
        return v.copy()
    if mode == "batch":
        return _standardize(v, epsilon)
    if mode == "group":
        if groups is None:
            raise ValueError("group normalization needs group labels")
        labels = list(groups)
        if len(labels) != v.size:
            raise ValueError("one group label per value")
        out = np.empty_like(v)
        order: dict = {}
        for i, g in enumerate(labels):
            order.setdefault(g, []).append(i)
        for idx in order.values():
            ix = np.asarray(idx)
            out[ix] = _standardize(v[ix], epsilon)
        return out
    raise ValueError(f"unknown normalization mode {mode!r}")


def mix_advantage(r_traj_hat, r_step_hat, alpha: float) -> np.ndarray:
    return np.asarray(r_traj_hat, dtype=float) + alpha * np.asarray(r_step_hat, dtype=float)


def importance_weight(
    train_logprobs: Sequence[float], behavior_logprobs: Sequence[float], config: ISConfig = ISConfig()
) -> tuple[float, float, float]:
    """(rho_seq, rho_geo, w) for one turn, computed in log space.

    Raises:
        ValueError: when the two token sequences differ in length.
    """
    tl = np.asarray(train_logprobs, dtype=float)
    bl = np.asarray(behavior_logprobs, dtype=float)
    if tl.shape != bl.shape:
        raise ValueError("train and behavior log-probabilities cover different token counts")
    if tl.size == 0:
        raise ValueError("a turn has at least one token")
    if not (np.all(np.isfinite(tl)) and np.all(np.isfinite(bl))):
        raise ValueError("log-probabilities must be finite")
    rs, rg, w = importance_weights(np.array([tl.sum() - bl.sum()]), np.array([tl.size]), config)
    return float(rs[0]), float(rg[0]), float(w[0])


def importance_weights(log_ratio: np.ndarray, n_tokens: np.ndarray, config: ISConfig):
    """Vectorized ``importance_weight`` from summed per-turn log-ratios."""
    log_ratio = np.asarray(log_ratio, dtype=float)
    with np.errstate(over="ignore"):
        rho_seq = np.exp(log_ratio)
        rho_geo = np.exp(log_ratio / np.asarray(n_tokens, dtype=float))
    mask = (rho_geo >= config.c_low) & (rho_geo <= config.c_high)
    if config.mode == "mis+tis":
        w = np.where(mask, np.minimum(rho_seq, config.c_trunc), 0.0)
    elif config.mode == "tis":
        w = np.minimum(rho_seq, config.c_trunc)
    elif config.mode == "mis":
        w = np.where(mask, rho_seq, 0.0)
    else:
        w = np.ones_like(rho_seq)
    return rho_seq, rho_geo, w


# -- rollouts --------------------------------------------------------------------


@dataclass
class Rollout:
    trajectory: Trajectory
    decisions: list[list[Decision]]
    atoms: list[int]
    correct: list[int]
    format_errors: int = 0
    invalid_turns: int = 0


def rollout(
    policy: SoftmaxSequencePolicy,
    env,
    h_max: int,
    temperature: float,
    rng: np.random.Generator,
    *,
    window: int = 2,
    seed: int = 0,
) -> Rollout:
    """Run one episode, recording tokens, behavior log-probs and rewards per turn."""
    obs = env.reset()
    history = InteractionLog(env.goal_text)
    steps: list[Step] = []
    decisions: list[list[Decision]] = []
    atoms: list[int] = []
    correct: list[int] = []
    n_format = n_invalid = 0
    outcome = Outcome.BUDGET_EXHAUSTED
    for _ in range(h_max):
        context = build_window(history, window).render() + f"\nOBS: {obs.text}"
        sampled = sample_action(policy, env, obs, temperature, rng)
        text = detokenize(sampled.tokens, env.vocab)
        fmt = val = env_r = 0.0
        events: tuple[int, ...] = ()
        done = success = False
        n_atoms = n_correct = 0
        try:
            macro = parse_action(text, env.space, env.mode)
        except FormatError:
            fmt = FORMAT_PENALTY
            n_format += 1
        else:
            tr = env.step(macro)
            n_atoms = len(macro)
            n_correct = sum(tr.correct) if tr.correct is not None else 0
            if not all(tr.valid):
                val = VALIDITY_PENALTY
                n_invalid += 1
            events = tr.subgoal_events
            done, success = tr.terminal, tr.success
            if env.dense:
                env_r = float(len(events))
            elif success:
                env_r = 1.0
        steps.append(
            Step(context, tuple(sampled.tokens), tuple(sampled.logprobs), env_r, fmt, val, tuple(events))
        )
        decisions.append(sampled.decisions)
        atoms.append(n_atoms)
        correct.append(n_correct)
        history.append(Turn(obs.text, text))
        obs = env.observe()
        if done:
            outcome = Outcome.SUCCESS if success else Outcome.FAILURE
            break
    traj = Trajectory(getattr(env.task, "task_id", ""), tuple(steps), outcome, seed)
    return Rollout(traj, decisions, atoms, correct, n_format, n_invalid)


# -- batch assembly --------------------------------------------------------------


@dataclass
class AdvantageBatch:
    """Per-turn training quantities for one batch, flattened in trajectory order."""

    traj_index: np.ndarray
    turn: np.ndarray
    r_traj: np.ndarray
    r_step: np.ndarray
    r_traj_hat: np.ndarray
    r_step_hat: np.ndarray
    advantage: np.ndarray
    behavior_logprob: np.ndarray
    n_tokens: np.ndarray
    batch_size: int
    weight: np.ndarray | None = None

    @property
    def coefficient(self) -> np.ndarray:
        w = np.ones_like(self.advantage) if self.weight is None else self.weight
        return w * self.advantage


def build_advantages(
    trajectories: Sequence[Trajectory], config: AdvantageConfig, groups: Sequence | None = None
) -> AdvantageBatch:
    """Decompose, normalize and mix rewards for every turn in the batch.

    ``groups`` labels each trajectory (defaults to its task id) for group mode;
    only the trajectory-level component is group-normalized.
    """
    rt, rs, ti, tn, bl, nt, gl = [], [], [], [], [], [], []
    labels = list(groups) if groups is not None else [t.task_id for t in trajectories]
    for k, traj in enumerate(trajectories):
        a, b = decompose_rewards(traj, config)
        rt.append(a)
        rs.append(b)
        n = len(traj.steps)
        ti.append(np.full(n, k))
        tn.append(np.arange(n))
        bl.append([sum(s.behavior_logprobs) for s in traj.steps])
        nt.append([len(s.action_tokens) for s in traj.steps])
        gl += [labels[k]] * n
    r_traj = np.concatenate(rt)
    r_step = np.concatenate(rs)
    if config.normalization == "group":
        th = normalize(r_traj, "group", config.epsilon, gl)
        sh = normalize(r_step, "batch", config.epsilon)
    else:
        th = normalize(r_traj, config.normalization, config.epsilon)
        sh = normalize(r_step, config.normalization, config.epsilon)
    return AdvantageBatch(
        np.concatenate(ti),
        np.concatenate(tn),
        r_traj,
        r_step,
        th,
        sh,
        mix_advantage(th, sh, config.alpha),
        np.concatenate([np.asarray(x, dtype=float) for x in bl]),
        np.concatenate([np.asarray(x) for x in nt]),
        len(trajectories),
    )


# -- training --------------------------------------------------------------------


EnvFactory = Callable[[object], object]


def default_env_factory(cfg: TrainerConfig) -> EnvFactory:
    def factory(task):
        opts = {}
        if cfg.subgoal_every is not None:
            opts["subgoal_every"] = cfg.subgoal_every
        return make_env(task, cfg.macro_mode, cfg.dense_rewards, **opts)

    return factory


def train(
    policy: SoftmaxSequencePolicy,
    tasks: Sequence,
    trainer_config: TrainerConfig,
    advantage_config: AdvantageConfig = AdvantageConfig(),
    is_config: ISConfig = ISConfig(),
    *,
    env_factory: EnvFactory | None = None,
    callback: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Train ``policy`` in place; returns one metrics record per iteration.

    Raises:
        TrainingAborted: when an update produces a non-finite gradient. The
            parameters are rolled back to the start of that iteration first.
    """
    cfg = trainer_config
    if not tasks:
        raise ValueError("no training tasks")
    make = env_factory or default_env_factory(cfg)
    rng = np.random.default_rng(cfg.seed)
    n_batches = math.ceil(len(tasks) / cfg.tasks_per_batch)
    iterations = cfg.iterations if cfg.iterations is not None else cfg.epochs * n_batches
    t_train = cfg.training_temperature
    table = policy.feature_map.table_size
    order: list[int] = []
    history: list[dict] = []
    for it in range(iterations):
        snapshot = policy.weights.copy()
        picked = []
        for _ in range(cfg.tasks_per_batch):
            if not order:
                order = list(rng.permutation(len(tasks)))
            picked.append(order.pop())
        rollouts: list[Rollout] = []
        labels = []
        for ti in picked:
            for _ in range(cfg.rollouts_per_task):
                env = make(tasks[ti])
                rollouts.append(
                    rollout(policy, env, cfg.h_max, cfg.temperature, rng, window=cfg.window, seed=cfg.seed)
                )
                labels.append(ti)
        trajs = [r.trajectory for r in rollouts]
        batch = build_advantages(trajs, advantage_config, labels)
        step_decisions = [d for r in rollouts for d in r.decisions]
        weights = np.zeros_like(batch.advantage)
        rho_geo_all = np.ones_like(batch.advantage)
        rho_seq_all = np.ones_like(batch.advantage)
        chunks = np.array_split(np.arange(len(trajs)), cfg.minibatches)
        aborted = False
        for chunk in chunks:
            if len(chunk) == 0:
                continue
            sel = np.flatnonzero(np.isin(batch.traj_index, chunk))
            packed = PackedDecisions.build([step_decisions[i] for i in sel], table)
            train_lp = packed.action_logprobs(policy.weights, t_train)
            rs, rg, w = importance_weights(train_lp - batch.behavior_logprob[sel], batch.n_tokens[sel], is_config)
            weights[sel], rho_geo_all[sel], rho_seq_all[sel] = w, rg, rs
            coef = w * batch.advantage[sel]
            g = packed.gradient(policy.weights, coef, t_train) / len(chunk)
            if not np.all(np.isfinite(g)):
                aborted = True
                break
            policy.weights += cfg.learning_rate * g
        batch.weight = weights
        succ = np.array([t.success for t in trajs], dtype=float)
        free = [d for ds in step_decisions for d in ds if not d.forced]
        packed_all = PackedDecisions.build([free], table)
        entropy = float(packed_all.entropy(snapshot).mean()) if free else 0.0
        masked = (rho_geo_all < is_config.c_low) | (rho_geo_all > is_config.c_high)
        turns = len(batch.advantage)
        horizons = [len(t) for t in trajs if t.success]
        rec = {
            "iteration": it,
            "success_rate": float(succ.mean()),
            "entropy": entropy,
            "mean_abs_advantage": float(np.abs(batch.advantage).mean()),
            "masked_fraction": float(masked.mean()),
            "truncated_fraction": float(((rho_seq_all > is_config.c_trunc) & ~masked).mean()),
            "mean_weight": float(weights.mean()),
            "format_error_ratio": sum(r.format_errors for r in rollouts) / turns,
            "invalid_action_ratio": sum(r.invalid_turns for r in rollouts) / turns,
            "mean_effective_horizon": float(np.mean(horizons)) if horizons else None,
            "aborted": aborted,
        }
        history.append(rec)
        if callback:
            callback(rec)
        if aborted:
            policy.weights[:] = snapshot
            log.error("iteration %d: non-finite gradient, parameters rolled back", it)
            raise TrainingAborted(f"non-finite gradient at iteration {it}", history)
    return history


METRIC_FIELDS = (
    "iteration",
    "success_rate",
    "entropy",
    "mean_abs_advantage",
    "masked_fraction",
    "truncated_fraction",
    "mean_weight",
    "format_error_ratio",
    "invalid_action_ratio",
    "mean_effective_horizon",
    "aborted",
)


def write_metrics(records: Sequence[dict], jsonl_path, csv_path=None) -> None:
    """One JSON object per iteration, plus an optional CSV mirror."""
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            for r in records:
                w.writerow(r)
