"""Command-line entry point: generate, train, evaluate, sweep, curriculum, selftest.

Exit codes: 0 success, 1 runtime failure, 2 validation error, 3 aborted training.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import datasets as ds
from .configio import ConfigError, RunConfig, load_config, stamp_provenance
from .envs import make_env
from .harness import CurriculumAborted, CurriculumPlan, Phase, evaluate, horizon_sweep, run_curriculum
from .policy import SoftmaxSequencePolicy, load_checkpoint, save_checkpoint
from .rl import TrainingAborted, train, write_metrics

log = logging.getLogger("horizonlab")

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_ABORTED = 0, 1, 2, 3


class UsageError(ValueError):
    pass


def pipeline_config(cfg: RunConfig) -> ds.PipelineConfig:
    d = cfg.data
    preset = d.preset or {"sudoku": "table1" if cfg.size == 9 else "small", "rushhour": "table2", "chain": "chain"}[cfg.env]
    if preset == "table1":
        bands = ds.table1_bands()
    elif preset == "small":
        bands = ds.small_sudoku_bands(d.train, d.test)
    elif preset == "table2":
        bands = ds.table2_bands()
    else:
        bands = ds.chain_bands(d.depths, d.train, d.test)
    expected = {"table1": "sudoku", "small": "sudoku", "table2": "rushhour", "chain": "chain"}[preset]
    if expected != cfg.env:
        raise UsageError(f"data.preset {preset} does not fit env {cfg.env}")
    size = 4 if preset == "small" else 9
    return ds.PipelineConfig(bands, size=size, filter_command=d.filter_command)


def load_data(cfg: RunConfig) -> ds.DatasetManifest:
    if cfg.data.manifest:
        m = ds.read_manifest(cfg.data.manifest)
        if m.env_tag != cfg.env:
            raise UsageError(f"manifest holds {m.env_tag} tasks but env.name is {cfg.env}")
        return m
    return ds.run_pipeline(cfg.env, pipeline_config(cfg), cfg.seed)


def new_policy(manifest: ds.DatasetManifest, cfg: RunConfig) -> SoftmaxSequencePolicy:
    sample = manifest.tasks()[:1]
    if not sample:
        raise UsageError("the dataset is empty")
    env = make_env(sample[0], cfg.macro_mode, False, **cfg.env_options)
    return SoftmaxSequencePolicy(len(env.vocab.lexemes), temperature=cfg.trainer.temperature)


def _split(cfg: RunConfig) -> str | None:
    return None if cfg.evaluation.split == "all" else cfg.evaluation.split


def _factory(cfg: RunConfig, trainer):
    if not cfg.env_options:
        return None

    def make(task):
        extra = dict(cfg.env_options)
        if trainer.subgoal_every is not None:
            extra["subgoal_every"] = trainer.subgoal_every
        return make_env(task, trainer.macro_mode, trainer.dense_rewards, **extra)

    return make


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


# -- subcommands -------------------------------------------------------------------


def cmd_generate(cfg: RunConfig, out: Path, args) -> int:
    pc = pipeline_config(cfg)
    path = out / "manifest.jsonl"
    try:
        m = ds.run_pipeline(cfg.env, pc, cfg.seed)
        code = EXIT_OK
    except ds.Underfilled as e:
        log.error("%s", e)
        m, code = e.manifest, EXIT_FAIL
        _write_json(out / "underfilled.json", e.deficits)
    ds.write_manifest(m, path)
    _write_json(out / "provenance.json", stamp_provenance(cfg, {"manifest": path}))
    print(json.dumps(m.counts(), sort_keys=True))
    return code


def cmd_train(cfg: RunConfig, out: Path, args) -> int:
    m = load_data(cfg)
    bands = list(cfg.data.train_bands) or None
    tasks = m.tasks(bands, "train") or m.tasks(bands)
    policy = load_checkpoint(args.checkpoint) if args.checkpoint else new_policy(m, cfg)
    status = EXIT_OK
    try:
        hist = train(
            policy, tasks, cfg.trainer, cfg.advantage, cfg.importance, env_factory=_factory(cfg, cfg.trainer)
        )
    except TrainingAborted as e:
        hist, status = e.log, EXIT_ABORTED
        log.error("%s", e)
    write_metrics(hist, out / "metrics.jsonl", out / "metrics.csv")
    outputs = {"metrics": out / "metrics.jsonl"}
    if status == EXIT_OK:
        save_checkpoint(policy, out / "policy.ckpt.npz")
        outputs["checkpoint"] = out / "policy.ckpt.npz"
    _write_json(out / "provenance.json", stamp_provenance(cfg, outputs))
    if hist:
        print(json.dumps(hist[-1], sort_keys=True))
    return status


def _require_checkpoint(args) -> SoftmaxSequencePolicy:
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    return load_checkpoint(args.checkpoint)


def _eval_kwargs(cfg: RunConfig) -> dict:
    return dict(
        K=cfg.evaluation.k,
        temperature=cfg.evaluation.temperature,
        seed=cfg.seed,
        split=_split(cfg),
        macro_mode=cfg.macro_mode,
        h_max=cfg.trainer.h_max,
        window=cfg.trainer.window,
        env_options=cfg.env_options,
    )


def cmd_evaluate(cfg: RunConfig, out: Path, args) -> int:
    policy = _require_checkpoint(args)
    m = load_data(cfg)
    report = evaluate(policy, m, list(cfg.data.eval_bands) or None, **_eval_kwargs(cfg))
    report.write(out, "eval")
    report.provenance = stamp_provenance(cfg, {"eval": out / "eval.csv"})
    report.write(out, "eval")
    print(report.to_csv(), end="")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: Path, args) -> int:
    from .grammar import MacroMode

    policy = _require_checkpoint(args)
    m = load_data(cfg)
    ref = None
    if args.reference:
        ref = (load_checkpoint(args.reference), MacroMode.parse(args.reference_mode))
    rows, main, _ = horizon_sweep(policy, m, list(cfg.data.eval_bands) or None, reference=ref, **_eval_kwargs(cfg))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(asdict(rows[0])) if rows else ["band"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))
    main.write(out, "sweep_eval")
    print((out / "sweep.csv").read_text(), end="")
    return EXIT_OK


def cmd_curriculum(cfg: RunConfig, out: Path, args) -> int:
    if not cfg.phases:
        raise UsageError("curriculum needs at least one [phase:NAME] section")
    m = load_data(cfg)
    plan = CurriculumPlan(
        [Phase(p.name, list(p.bands), p.trainer) for p in cfg.phases],
        list(cfg.data.eval_bands) or [b.label for b in m.bands],
        cfg.advantage,
        cfg.importance,
        cfg.evaluation.k,
        cfg.evaluation.temperature,
        _split(cfg),
        env_options=cfg.env_options,
    )
    policy = load_checkpoint(args.checkpoint) if args.checkpoint else new_policy(m, cfg)
    status = EXIT_OK
    try:
        res = run_curriculum(plan, policy, m, out_dir=out, eval_seed=cfg.seed)
    except CurriculumAborted as e:
        res, status = e.result, EXIT_ABORTED
        log.error("%s", e)
    for name, hist in res.logs.items():
        write_metrics(hist, out / f"{name}.metrics.jsonl", out / f"{name}.metrics.csv")
    _write_json(out / "curriculum.json", {"checkpoints": res.checkpoints, "best": res.best, "aborted": res.aborted})
    if res.report is not None:
        res.report.write(out, "eval")
        print(res.report.to_csv(), end="")
    return status


def cmd_selftest(cfg: RunConfig, out: Path, args) -> int:
    import pytest

    tests = Path(__file__).resolve().parents[2] / "tests"
    if not tests.is_dir():
        print(f"test directory not found: {tests}", file=sys.stderr)
        return EXIT_FAIL
    argv = [str(tests), "-q", "--ignore", str(tests / "test_acceptance.py")]
    if args.full:
        argv = [str(tests), "-q"]
    return EXIT_OK if pytest.main(argv) == 0 else EXIT_FAIL


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "curriculum": cmd_curriculum,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="horizonlab", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="sectioned key=value config file")
    p.add_argument("--seed", type=int, help="overrides the config seed and HORIZONLAB_SEED")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", help="run the dataset pipeline")
    for name in ("train", "evaluate", "curriculum"):
        sp = sub.add_parser(name)
        sp.add_argument("--checkpoint", help="policy checkpoint to start from or evaluate")
    sp = sub.add_parser("sweep", help="success against goal distance per band")
    sp.add_argument("--checkpoint")
    sp.add_argument("--reference", help="checkpoint of a reference policy")
    sp.add_argument("--reference-mode", default="atomic", help="macro mode of the reference policy")
    sp = sub.add_parser("selftest", help="run the property suites")
    sp.add_argument("--full", action="store_true", help="include the acceptance suite")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(
                cfg,
                seed=args.seed,
                trainer=replace(cfg.trainer, seed=args.seed),
                phases=tuple(replace(p, trainer=replace(p.trainer, seed=args.seed)) for p in cfg.phases),
            )
        if args.out:
            cfg = replace(cfg, out=args.out)
        out = Path(cfg.out)
        if args.command != "selftest":
            out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as e:
        print(f"invalid configuration:\n{e}", file=sys.stderr)
        return EXIT_INVALID
    except (UsageError, ds.ManifestError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ds.FilterError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
