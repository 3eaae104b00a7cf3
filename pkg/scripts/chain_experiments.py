"""Seeded chain experiments: horizon length, macro actions, subgoals, sweeps, curriculum.

Usage: python3 scripts/chain_experiments.py [--seeds 20] [--out results/chain.json]
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from horizonlab.experiments import (
    ChainProtocol,
    curriculum_vs_long,
    depth_sweep,
    horizon_arms,
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--out", default="results/chain.json")
    ap.add_argument("--only", nargs="*", default=None, help="subset of: training sweep curriculum")
    args = ap.parse_args()
    proto = ChainProtocol()
    seeds = range(args.seeds)
    only = set(args.only or ["training", "sweep", "curriculum"])
    res: dict = {"protocol": proto.__dict__, "seeds": args.seeds}
    t0 = time.time()
    if "training" in only:
        per_seed = []
        for s in seeds:
            per_seed.append(horizon_arms(s, proto))
            print(f"seed {s}: " + " ".join(f"{k}={v:.3f}" for k, v in per_seed[-1].items()), flush=True)
        for name in per_seed[0]:
            vals = [r[name] for r in per_seed]
            res[name] = vals
            print(f"{name:12s} mean={np.mean(vals):.3f} min={np.min(vals):.3f}", flush=True)
        print(f"training arms done ({time.time() - t0:.0f}s)", flush=True)
    if "sweep" in only:
        sweeps = [depth_sweep(s, proto) for s in seeds]
        for name in ("atomic", "macro"):
            depths = list(sweeps[0][name])
            means = {d: float(np.mean([r[name][d] for r in sweeps])) for d in depths}
            res[f"sweep_{name}"] = means
            res[f"sweep_{name}_per_seed"] = [r[name] for r in sweeps]
            print(f"sweep {name:6s} " + " ".join(f"d{d}={v:.3f}" for d, v in means.items()), flush=True)
    if "curriculum" in only:
        pairs = [curriculum_vs_long(s, protocol=proto) for s in seeds]
        res["curriculum"] = [p[0] for p in pairs]
        res["long_only"] = [p[1] for p in pairs]
        print(f"curriculum={np.mean(res['curriculum']):.3f} long-only={np.mean(res['long_only']):.3f}", flush=True)
    res["seconds"] = time.time() - t0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out} in {res['seconds']:.0f}s")


if __name__ == "__main__":
    main()
