"""Write the Table 1 (Sudoku) and Table 2 (Rush Hour) manifests to a directory.

Usage: python3 scripts/generate_datasets.py [--seed 0] [--out data]
"""

import argparse
import json
import time
from pathlib import Path

from horizonlab import datasets as ds


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="data")
    ap.add_argument("--env", nargs="*", default=["sudoku", "rushhour"])
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for env in args.env:
        t0 = time.time()
        m = ds.run_pipeline(env, ds.default_config(env), args.seed)
        path = out / f"{env}_seed{args.seed}.jsonl"
        ds.write_manifest(m, path)
        print(f"{path}: {json.dumps(m.counts(), sort_keys=True)}")
        print(f"  digest {ds.manifest_digest(m)}  ({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
