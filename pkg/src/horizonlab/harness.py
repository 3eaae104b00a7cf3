"""Evaluation (pass@K, avg@K, step accuracy), horizon sweeps and curricula."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .datasets import DatasetManifest
from .envs import env_tag_of, make_env
from .grammar import ATOMIC, MacroMode
from .policy import SoftmaxSequencePolicy, checkpoint_hash, load_checkpoint, save_checkpoint
from .rl import AdvantageConfig, ISConfig, TrainerConfig, TrainingAborted, rollout, train

log = logging.getLogger(__name__)

TaskSource = DatasetManifest | Mapping[str, Sequence]


def pass_avg_at_k(outcomes) -> tuple[float, float]:
    """(pass@K, avg@K) from an instances x K success table."""
    o = np.asarray(outcomes, dtype=bool)
    if o.ndim != 2 or o.shape[1] < 1:
        raise ValueError("outcomes must be a 2-D table with K >= 1 columns")
    if o.shape[0] == 0:
        raise ValueError("no instances")
    return float(o.any(axis=1).mean()), float(o.mean())


@dataclass
class EvalRow:
    band: str
    instances: int
    goal_distance: float
    pass_at_k: float
    avg_at_k: float
    mean_effective_horizon: float | None
    min_effective_horizon: int | None
    step_accuracy: float | None = None


@dataclass
class EvalReport:
    rows: list[EvalRow]
    k: int
    temperature: float
    seed: int
    checkpoint: str
    macro_mode: str = "atomic"
    provenance: dict = field(default_factory=dict)

    def row(self, band: str) -> EvalRow:
        for r in self.rows:
            if r.band == band:
                return r
        raise KeyError(band)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "temperature": self.temperature,
            "seed": self.seed,
            "checkpoint": self.checkpoint,
            "macro_mode": self.macro_mode,
            "rows": [asdict(r) for r in self.rows],
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = list(EvalRow.__dataclass_fields__)
        w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow(asdict(r))
        return buf.getvalue()

    def write(self, out_dir: str | Path, stem: str = "eval") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(self.to_json() + "\n")
        (out / f"{stem}.csv").write_text(self.to_csv())


def _bands_of(source: TaskSource, bands: Sequence[str] | None, split: str | None) -> dict[str, list]:
    if isinstance(source, DatasetManifest):
        labels = bands if bands is not None else [b.label for b in source.bands]
        return {b: source.tasks([b], split) for b in labels}
    labels = bands if bands is not None else list(source)
    return {b: list(source[b]) for b in labels}


def _episode_seed(seed: int, task_id: str, k: int) -> int:
    h = hashlib.sha256(json.dumps([seed, task_id, k]).encode()).digest()
    return int.from_bytes(h[:8], "little")


def evaluate(
    policy: SoftmaxSequencePolicy,
    source: TaskSource,
    bands: Sequence[str] | None = None,
    K: int = 4,
    temperature: float = 0.8,
    seed: int = 0,
    *,
    split: str | None = "test",
    macro_mode: MacroMode = ATOMIC,
    h_max: int | Mapping[str, int] = 50,
    window: int = 2,
    env_options: dict | None = None,
) -> EvalReport:
    """K independent rollouts per instance; one report row per non-empty band.

    Every episode draws from its own generator keyed by (seed, task id, k),
    so results do not depend on evaluation order.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    opts = env_options or {}
    rows = []
    for label, tasks in _bands_of(source, bands, split).items():
        if not tasks:
            log.warning("band %s has no instances; row omitted", label)
            continue
        outcomes = np.zeros((len(tasks), K), dtype=bool)
        horizons: list[int] = []
        step_acc: list[float] = []
        sudoku = env_tag_of(tasks[0]) == "sudoku"
        budget = h_max[label] if isinstance(h_max, Mapping) else h_max
        for i, task in enumerate(tasks):
            for k in range(K):
                env = make_env(task, macro_mode, False, **opts)
                rng = np.random.default_rng(_episode_seed(seed, task.task_id, k))
                ro = rollout(policy, env, budget, temperature, rng, window=window, seed=seed)
                outcomes[i, k] = ro.trajectory.success
                if ro.trajectory.success:
                    horizons.append(len(ro.trajectory))
                if sudoku:
                    step_acc += [c / a for a, c in zip(ro.atoms, ro.correct) if a]
        p, a = pass_avg_at_k(outcomes)
        rows.append(
            EvalRow(
                label,
                len(tasks),
                float(np.mean([t.goal_distance for t in tasks])),
                p,
                a,
                float(np.mean(horizons)) if horizons else None,
                int(min(horizons)) if horizons else None,
                float(np.mean(step_acc)) if sudoku and step_acc else None,
            )
        )
    return EvalReport(rows, K, temperature, seed, checkpoint_hash(policy), str(macro_mode))


@dataclass
class SweepRow:
    band: str
    goal_distance: float
    success: float
    pass_at_k: float
    reference_success: float | None = None
    gap: float | None = None


def horizon_sweep(
    policy: SoftmaxSequencePolicy,
    source: TaskSource,
    bands: Sequence[str] | None = None,
    *,
    reference: tuple[SoftmaxSequencePolicy, MacroMode] | None = None,
    **eval_kwargs,
) -> tuple[list[SweepRow], EvalReport, EvalReport | None]:
    """Success against goal distance per band, optionally against a reference policy.

    ``gap`` is this policy's avg@K minus the reference's.
    """
    main = evaluate(policy, source, bands, **eval_kwargs)
    ref = None
    if reference is not None:
        ref_policy, ref_mode = reference
        ref = evaluate(ref_policy, source, bands, **dict(eval_kwargs, macro_mode=ref_mode))
    rows = []
    for r in main.rows:
        rr = ref.row(r.band).avg_at_k if ref is not None else None
        rows.append(
            SweepRow(r.band, r.goal_distance, r.avg_at_k, r.pass_at_k, rr, None if rr is None else r.avg_at_k - rr)
        )
    return rows, main, ref


# -- curriculum --------------------------------------------------------------------


@dataclass
class Phase:
    name: str
    bands: list[str]
    trainer: TrainerConfig


@dataclass
class CurriculumPlan:
    """Ordered phases; each starts from the previous phase's final checkpoint."""

    phases: list[Phase]
    eval_bands: list[str]
    advantage: AdvantageConfig = AdvantageConfig()
    importance: ISConfig = ISConfig()
    eval_k: int = 4
    eval_temperature: float = 0.8
    eval_split: str | None = "test"
    train_split: str | None = "train"
    env_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.phases:
            raise ValueError("a curriculum needs at least one phase")
        for p in self.phases:
            if not p.bands:
                raise ValueError(f"phase {p.name} selects no bands")


@dataclass
class CurriculumResult:
    logs: dict[str, list[dict]]
    checkpoints: dict[str, str]
    report: EvalReport | None
    best: dict[str, dict]
    aborted: str | None = None


class CurriculumAborted(RuntimeError):
    def __init__(self, message: str, result: CurriculumResult):
        super().__init__(message)
        self.result = result


def run_curriculum(
    plan: CurriculumPlan,
    policy: SoftmaxSequencePolicy,
    source: TaskSource,
    *,
    out_dir: str | Path | None = None,
    eval_seed: int = 0,
) -> CurriculumResult:
    """Train phase by phase, handing weights over via checkpoints, then evaluate.

    ``policy`` is trained in place. With ``out_dir`` each phase's checkpoint
    is written to disk and reloaded by the next phase.

    Raises:
        CurriculumAborted: a phase hit the trainer's non-finite guard. Logs of
            completed phases and the partial log of the failing phase are kept.
    """
    result = CurriculumResult({}, {}, None, {})
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for phase in plan.phases:
        tasks = [t for ts in _bands_of(source, phase.bands, plan.train_split).values() for t in ts]
        opts = dict(plan.env_options)
        factory = None
        if opts:
            cfg = phase.trainer

            def factory(task, cfg=cfg, opts=opts):
                extra = dict(opts)
                if cfg.subgoal_every is not None:
                    extra["subgoal_every"] = cfg.subgoal_every
                return make_env(task, cfg.macro_mode, cfg.dense_rewards, **extra)

        try:
            hist = train(policy, tasks, phase.trainer, plan.advantage, plan.importance, env_factory=factory)
        except TrainingAborted as e:
            result.logs[phase.name] = e.log
            result.aborted = phase.name
            raise CurriculumAborted(f"phase {phase.name} aborted: {e}", result) from e
        result.logs[phase.name] = hist
        best = max(hist, key=lambda r: r["success_rate"])
        result.best[phase.name] = {"iteration": best["iteration"], "success_rate": best["success_rate"]}
        result.checkpoints[phase.name] = checkpoint_hash(policy)
        if out is not None:
            path = out / f"{phase.name}.ckpt.npz"
            save_checkpoint(policy, path)
            loaded = load_checkpoint(path, policy.feature_map)
            policy.weights[:] = loaded.weights
    last = plan.phases[-1].trainer
    result.report = evaluate(
        policy,
        source,
        plan.eval_bands,
        plan.eval_k,
        plan.eval_temperature,
        eval_seed,
        split=plan.eval_split,
        macro_mode=last.macro_mode,
        h_max=last.h_max,
        window=last.window,
        env_options=plan.env_options,
    )
    return result
