"""Three-stage dataset construction: candidates, filtering, goal-distance partitioning.

Manifests are JSONL files. The first line is a header holding the schema
version, the band table and the provenance needed to regenerate the file; each
following line is one instance record.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shlex
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .envs.base import Infeasible
from .envs.chain import ChainTask, generate_chain
from .envs.rushhour import (
    TABLE2_BANDS,
    _Layout,
    CandidateConfig,
    Reject,
    RushTask,
    component_distances,
    generate_candidate,
)
from .envs.sudoku import BASIC, SMALL_BANDS, TABLE1_BANDS, SudokuTask, dig_puzzle, generate_solved_grid

log = logging.getLogger(__name__)

SCHEMA = "horizonlab-manifest"
SCHEMA_VERSION = 1
SPLITS = ("train", "test")


class ManifestError(ValueError):
    """Malformed or invariant-violating manifest content."""


class FilterError(RuntimeError):
    """The external filter process failed or answered with the wrong verdict count."""


class Underfilled(RuntimeError):
    """Some bands could not be filled; ``deficits`` maps band label to missing count."""

    def __init__(self, deficits: dict[str, int], manifest: "DatasetManifest"):
        self.deficits = dict(deficits)
        self.manifest = manifest
        detail = ", ".join(f"{k}: {v} missing" for k, v in deficits.items())
        super().__init__(f"underfilled bands ({detail})")


@dataclass(frozen=True)
class LevelBand:
    label: str
    low: int
    high: int
    train: int = 0
    test: int = 0

    def __post_init__(self):
        if self.low > self.high or self.low < 0:
            raise ValueError(f"band {self.label}: need 0 <= low <= high")
        if self.train < 0 or self.test < 0:
            raise ValueError(f"band {self.label}: split counts must be nonnegative")

    def contains(self, d: int) -> bool:
        return self.low <= d <= self.high

    @property
    def total(self) -> int:
        return self.train + self.test


def check_bands(bands: Sequence[LevelBand]) -> None:
    """Bands must have unique labels and be ordered and disjoint."""
    labels = [b.label for b in bands]
    if len(set(labels)) != len(labels):
        raise ValueError("band labels must be unique")
    for a, b in zip(bands, bands[1:]):
        if a.high >= b.low:
            raise ValueError(f"bands {a.label} and {b.label} overlap or are out of order")


def split_joint(total: int, n: int) -> list[int]:
    """Even split of a joint count; earlier levels take the remainder."""
    q, r = divmod(total, n)
    return [q + (1 if i < r else 0) for i in range(n)]


def table1_bands() -> list[LevelBand]:
    """Sudoku levels with 640 training tasks shared evenly inside L1-L2 and L3-L4."""
    train = dict(zip(("L1", "L2"), split_joint(640, 2))) | dict(zip(("L3", "L4"), split_joint(640, 2)))
    test = {"L1": 100, "L2": 100, "L3": 100, "L4": 100, "L5": 100, "L6": 100, "L7": 50}
    return [LevelBand(k, lo, hi, train.get(k, 0), test[k]) for k, (lo, hi) in TABLE1_BANDS.items()]


def small_sudoku_bands(train: int = 64, test: int = 32) -> list[LevelBand]:
    return [LevelBand(k, lo, hi, train, test) for k, (lo, hi) in SMALL_BANDS.items()]


def table2_bands() -> list[LevelBand]:
    return [LevelBand(k, lo, hi, 0, 100) for k, (lo, hi) in TABLE2_BANDS.items()]


def chain_bands(depths: Iterable[int], train: int = 32, test: int = 32) -> list[LevelBand]:
    return [LevelBand(f"D{d}", d, d, train, test) for d in depths]


@dataclass
class PipelineConfig:
    """Stage settings for ``run_pipeline``; ``filter_command`` enables the external filter."""

    bands: list[LevelBand]
    size: int = 9
    require_basic: bool = True
    candidates_per_slot: int = 20
    rush_candidate: CandidateConfig = field(
        default_factory=lambda: CandidateConfig(min_vehicles=14, max_vehicles=17, p_truck=0.4, attempts=400)
    )
    rush_max_states: int = 20_000
    rush_per_component: int = 10
    rush_max_boards: int = 20_000
    chain_branching: int = 2
    chain_rule_seed: int = 0
    filter_command: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bands"] = [asdict(b) for b in self.bands]
        return d


@dataclass
class DatasetManifest:
    env_tag: str
    bands: list[LevelBand]
    records: list[dict]
    provenance: dict = field(default_factory=dict)

    def band(self, label: str) -> LevelBand:
        for b in self.bands:
            if b.label == label:
                return b
        raise KeyError(label)

    def select(self, bands: Iterable[str] | None = None, split: str | None = None) -> list[dict]:
        want = None if bands is None else set(bands)
        return [
            r
            for r in self.records
            if (want is None or r["band"] in want) and (split is None or r["split"] == split)
        ]

    def counts(self) -> dict[str, dict[str, int]]:
        out = {b.label: {"train": 0, "test": 0} for b in self.bands}
        for r in self.records:
            out[r["band"]][r["split"]] += 1
        return out

    def header(self) -> dict:
        return {
            "schema": SCHEMA,
            "schema_version": SCHEMA_VERSION,
            "env_tag": self.env_tag,
            "bands": [asdict(b) for b in self.bands],
            "provenance": self.provenance,
        }

    def validate(self) -> None:
        validate_records(self.env_tag, self.bands, self.records)

    def tasks(self, bands: Iterable[str] | None = None, split: str | None = None) -> list:
        return [task_from_record(self.env_tag, r) for r in self.select(bands, split)]


def task_from_record(env_tag: str, rec: dict):
    state = dict(rec["state"], id=rec["id"], seed=rec["seed"])
    if env_tag == "sudoku":
        return SudokuTask.from_record(state)
    if env_tag == "rushhour":
        return RushTask.from_record(state)
    if env_tag == "chain":
        return ChainTask.from_record(state)
    raise ManifestError(f"unknown env_tag {env_tag!r}")


def validate_records(env_tag: str, bands: Sequence[LevelBand], records: Sequence[dict]) -> None:
    by_label = {b.label: b for b in bands}
    ids: set = set()
    for r in records:
        _check_record(r, by_label, ids)


def _check_record(r: dict, by_label: dict, ids: set) -> None:
    for key in ("id", "split", "band", "goal_distance", "seed", "state"):
        if key not in r:
            raise ManifestError(f"record missing field {key!r}")
    b = by_label.get(r["band"])
    if b is None:
        raise ManifestError(f"record {r['id']}: unknown band {r['band']!r}")
    if not b.contains(int(r["goal_distance"])):
        raise ManifestError(
            f"record {r['id']}: goal distance {r['goal_distance']} outside band {b.label} [{b.low}, {b.high}]"
        )
    if r["split"] not in SPLITS:
        raise ManifestError(f"record {r['id']}: split must be train or test")
    if r["id"] in ids:
        raise ManifestError(f"duplicate id {r['id']!r}")
    ids.add(r["id"])


# -- serialization -----------------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    manifest.validate()
    lines = [_dumps(manifest.header())] + [_dumps(r) for r in manifest.records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a manifest.

    Raises:
        ManifestError: with the offending line number on malformed JSON, schema
            mismatch or band violations.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}:1: malformed header ({e.msg})") from None
    if head.get("schema") != SCHEMA or head.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(
            f"{path}:1: schema mismatch (found {head.get('schema')!r} v{head.get('schema_version')}, "
            f"expected {SCHEMA!r} v{SCHEMA_VERSION})"
        )
    try:
        bands = [LevelBand(**b) for b in head["bands"]]
        env_tag = head["env_tag"]
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"{path}:1: bad header ({e})") from None
    records = []
    by_label = {b.label: b for b in bands}
    ids: set = set()
    for n, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path}:{n}: malformed record ({e.msg})") from None
        if not isinstance(rec, dict):
            raise ManifestError(f"{path}:{n}: record is not an object")
        try:
            _check_record(rec, by_label, ids)
        except ManifestError as e:
            raise ManifestError(f"{path}:{n}: {e}") from None
        records.append(rec)
    return DatasetManifest(env_tag, bands, records, head.get("provenance", {}))


def manifest_digest(manifest: DatasetManifest) -> str:
    h = hashlib.sha256()
    h.update(_dumps(manifest.header()).encode())
    for r in manifest.records:
        h.update(_dumps(r).encode())
    return h.hexdigest()


# -- stage 2: external filter ------------------------------------------------------


VERDICTS = {"keep": True, "drop": False}


def external_filter(command: str | Sequence[str], instances: Sequence[dict], timeout: float = 600) -> list[dict]:
    """Stream ``instances`` as JSONL to ``command``; keep those it answers ``keep``.

    The process prints one ``keep`` or ``drop`` line per instance, in order.
    Any other output line is ignored.

    Raises:
        FilterError: nonzero exit, timeout, or a verdict count that differs
            from the instance count.
    """
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    payload = "".join(_dumps(x) + "\n" for x in instances)
    try:
        proc = subprocess.run(argv, input=payload, capture_output=True, text=True, timeout=timeout)
    except (OSError, subprocess.TimeoutExpired) as e:
        raise FilterError(f"filter {argv!r} could not run: {e}") from None
    if proc.returncode != 0:
        raise FilterError(f"filter {argv!r} exited with {proc.returncode}: {proc.stderr.strip()[-500:]}")
    verdicts = [VERDICTS[w] for w in (ln.strip().lower() for ln in proc.stdout.splitlines()) if w in VERDICTS]
    if len(verdicts) != len(instances):
        raise FilterError(f"filter {argv!r} returned {len(verdicts)} verdicts for {len(instances)} instances")
    return [x for x, keep in zip(instances, verdicts) if keep]


# -- stage 1 generators ---------------------------------------------------------------


def _slot_seed(seed: int, *parts) -> int:
    blob = _dumps([seed, *parts]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little") >> 1


def _sudoku_candidates(cfg: PipelineConfig, band: LevelBand, seed: int, need: int):
    """Yield candidate records for ``band`` until the attempt budget is spent."""
    for attempt in range(need * cfg.candidates_per_slot):
        s = _slot_seed(seed, "sudoku", band.label, attempt)
        rng = np.random.default_rng(s)
        target = int(rng.integers(band.low, band.high + 1))
        grid = generate_solved_grid(cfg.size, s)
        try:
            task = dig_puzzle(grid, target, s)
        except Infeasible:
            continue
        if cfg.require_basic and task.technique_grade != BASIC:
            continue
        rec = task.to_record()
        state = {k: rec[k] for k in ("puzzle", "solution", "level", "grade")}
        yield {"goal_distance": task.goal_distance, "grade": task.technique_grade, "seed": s, "state": state}


def _chain_candidates(cfg: PipelineConfig, band: LevelBand, seed: int, need: int):
    for attempt in range(need * cfg.candidates_per_slot):
        s = _slot_seed(seed, "chain", band.label, attempt)
        depth = int(np.random.default_rng(s).integers(band.low, band.high + 1))
        t = generate_chain(depth, cfg.chain_branching, s, rule_seed=cfg.chain_rule_seed)
        rec = t.to_record()
        state = {k: rec[k] for k in ("depth", "branching", "rule_seed", "observation_mode")}
        yield {"goal_distance": depth, "grade": None, "seed": s, "state": state}


def _rush_harvest(cfg: PipelineConfig, bands: Sequence[LevelBand], seed: int, need: dict[str, int]):
    """Collect start states per band from the distance maps of random dense layouts.

    Every state in a connected component gets its exact slide distance from one
    reverse search, so a deep component supplies boards for several bands.
    """
    pools: dict[str, list[dict]] = {b.label: [] for b in bands}
    seen: set[str] = set()
    for k in range(cfg.rush_max_boards):
        if all(len(pools[b.label]) >= need[b.label] for b in bands):
            break
        s = _slot_seed(seed, "rushhour", k)
        try:
            board = generate_candidate(cfg.rush_candidate, s)
            dist = component_distances(board, cfg.rush_max_states)
        except (Reject, Infeasible):
            continue
        lay = _Layout(board)  # decodes component states back into boards
        unit = None
        by_d: dict[int, list] = {}
        for st, d in dist.items():
            by_d.setdefault(d, []).append(st)
        rng = np.random.default_rng(s)
        for b in bands:
            if len(pools[b.label]) >= need[b.label]:
                continue
            states = sorted(st for d in range(b.low, b.high + 1) for st in by_d.get(d, ()))
            if not states:
                continue
            take = rng.permutation(len(states))[: cfg.rush_per_component]
            for j in sorted(take.tolist()):
                st = states[j]
                bd = lay.board(st)
                key = bd.to_string()
                if key in seen or len(pools[b.label]) >= need[b.label]:
                    continue
                if unit is None:
                    unit = component_distances(board, cfg.rush_max_states, unit=True)
                seen.add(key)
                pools[b.label].append(
                    {
                        "goal_distance": dist[st],
                        "grade": None,
                        "seed": s,
                        "state": {"board": key, "min_moves": dist[st], "min_cell_moves": unit[st], "band": b.label},
                    }
                )
    return pools


# -- pipeline -----------------------------------------------------------------------


def _apply_filter(cfg: PipelineConfig, env_tag: str, cands: list[dict]) -> list[dict]:
    if not cfg.filter_command or not cands:
        return cands
    view = [dict(c["state"], env_tag=env_tag, goal_distance=c["goal_distance"]) for c in cands]
    kept = external_filter(cfg.filter_command, view)
    keep_ids = {id(v) for v in kept}
    return [c for c, v in zip(cands, view) if id(v) in keep_ids]


def run_pipeline(env_tag: str, config: PipelineConfig, seed: int) -> DatasetManifest:
    """Generate, filter and partition a dataset; a pure function of its arguments.

    Raises:
        Underfilled: when some band cannot reach its train+test count. The
            partial manifest is attached to the exception.
        FilterError: when the external filter misbehaves.
    """
    check_bands(config.bands)
    if env_tag not in ("sudoku", "rushhour", "chain"):
        raise ValueError(f"unknown env_tag {env_tag!r}")
    need = {b.label: b.total for b in config.bands}
    pools: dict[str, list[dict]] = {}
    if env_tag == "rushhour":
        pools = _rush_harvest(config, config.bands, seed, need)
        for b in config.bands:
            pools[b.label] = _apply_filter(config, env_tag, pools[b.label])
    else:
        gen = _sudoku_candidates if env_tag == "sudoku" else _chain_candidates
        for b in config.bands:
            kept: list[dict] = []
            seen: set[str] = set()
            stream = gen(config, b, seed, max(need[b.label], 1))
            # pull candidates in chunks so the external filter sees whole batches
            while len(kept) < need[b.label]:
                chunk = []
                for c in stream:
                    key = _dumps(c["state"]) if env_tag == "sudoku" else str(c["seed"])
                    if key in seen:
                        continue
                    seen.add(key)
                    chunk.append(c)
                    if len(chunk) >= need[b.label] - len(kept):
                        break
                if not chunk:
                    break
                kept += _apply_filter(config, env_tag, chunk)
            pools[b.label] = kept[: need[b.label]]

    # stage 3: partition by goal distance, then split train/test disjointly
    records: list[dict] = []
    deficits = {}
    for b in config.bands:
        pool = [c for c in pools[b.label] if b.contains(c["goal_distance"])]
        if len(pool) < b.total:
            deficits[b.label] = b.total - len(pool)
        order = np.random.default_rng(_slot_seed(seed, "split", b.label)).permutation(len(pool))
        n_train = min(b.train, len(pool))
        for rank, j in enumerate(order.tolist()):
            split = "train" if rank < n_train else "test"
            c = pool[j]
            records.append(
                {
                    "id": f"{env_tag}-{b.label}-{rank:04d}",
                    "split": split,
                    "band": b.label,
                    "goal_distance": c["goal_distance"],
                    "grade": c["grade"],
                    "seed": c["seed"],
                    "state": c["state"],
                }
            )
    provenance = {
        "pipeline": "candidates/filter/partition",
        "seed": seed,
        "code_version": __version__,
        "stage_config": config.to_dict(),
        "filter": config.filter_command or _oracle_filter_name(env_tag, config),
        "joint_train_split": "even across the levels of a joint pair",
    }
    manifest = DatasetManifest(env_tag, list(config.bands), records, provenance)
    manifest.validate()
    if deficits:
        raise Underfilled(deficits, manifest)
    return manifest


def _oracle_filter_name(env_tag: str, config: PipelineConfig) -> str:
    if env_tag == "sudoku":
        return "oracle:basic-grade" if config.require_basic else "oracle:unique-solution"
    if env_tag == "rushhour":
        return "oracle:bfs-solvable"
    return "none"


def default_config(env_tag: str, size: int = 9) -> PipelineConfig:
    if env_tag == "sudoku":
        return PipelineConfig(table1_bands() if size == 9 else small_sudoku_bands(), size=size)
    if env_tag == "rushhour":
        return PipelineConfig(table2_bands())
    if env_tag == "chain":
        return PipelineConfig(chain_bands(range(2, 13, 2)))
    raise ValueError(f"unknown env_tag {env_tag!r}")
