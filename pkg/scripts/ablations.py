"""Chain ablations: importance-weight mode, advantage normalization and step-reward mix.

Each arm trains on depth-6 chains with several minibatch updates per rollout
batch, so later minibatches are off-policy and the IS correction matters.

Usage: python3 scripts/ablations.py [--seeds 5] [--out results/ablations.json]
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from horizonlab.experiments import ChainProtocol, budget, chain_tasks, fresh_policy, final_success
from horizonlab.grammar import ATOMIC
from horizonlab.rl import AdvantageConfig, ISConfig, TrainerConfig, train

ARMS = {
    "default": (AdvantageConfig(), ISConfig()),
    "is=tis": (AdvantageConfig(), ISConfig(mode="tis")),
    "is=mis": (AdvantageConfig(), ISConfig(mode="mis")),
    "is=none": (AdvantageConfig(), ISConfig(mode="none")),
    "norm=none": (AdvantageConfig(normalization="none"), ISConfig()),
    "alpha=0": (AdvantageConfig(alpha=0.0), ISConfig()),
}


def run_arm(seed: int, adv: AdvantageConfig, isc: ISConfig, depth: int, iterations: int) -> dict:
    proto = ChainProtocol()
    policy = fresh_policy(proto)
    cfg = TrainerConfig(
        iterations=iterations,
        tasks_per_batch=proto.tasks_per_batch,
        learning_rate=proto.learning_rate,
        h_max=budget(depth, ATOMIC, proto.budget_factor),
        minibatches=4,
        seed=seed,
    )
    hist = train(policy, chain_tasks([depth], proto.n_tasks, seed), cfg, adv, isc)
    return {
        "success": final_success(hist, proto.tail),
        "masked_fraction": float(np.mean([r["masked_fraction"] for r in hist])),
        "truncated_fraction": float(np.mean([r["truncated_fraction"] for r in hist])),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--depth", type=int, default=6)
    ap.add_argument("--iterations", type=int, default=100)
    ap.add_argument("--out", default="results/ablations.json")
    args = ap.parse_args()
    t0 = time.time()
    out = {}
    for name, (adv, isc) in ARMS.items():
        runs = [run_arm(s, adv, isc, args.depth, args.iterations) for s in range(args.seeds)]
        out[name] = {k: float(np.mean([r[k] for r in runs])) for k in runs[0]}
        out[name]["per_seed_success"] = [r["success"] for r in runs]
        row = out[name]
        print(
            f"{name:10s} success={row['success']:.3f} masked={row['masked_fraction']:.3f} "
            f"truncated={row['truncated_fraction']:.3f}",
            flush=True,
        )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.out} in {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
