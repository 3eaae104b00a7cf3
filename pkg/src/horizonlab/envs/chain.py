"""Synthetic branching chain with exactly known goal distance.

Each node shows a cue symbol; the correct branch is a fixed permutation of the
cue, shared by every task built with the same ``rule_seed``. A policy that
learns the cue->branch rule therefore generalizes to any depth, and success
at depth ``d`` is the product of per-decision accuracies.

A wrong branch drops the walker into an absorbing region that keeps showing
plausible cues, so the episode runs on until the budget is spent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..grammar import ATOMIC, ActionSpace, Branch, MacroAction, MacroMode, TokenGrammar, build_vocabulary
from .base import Environment, Observation, Transition

END = -1
_MASK64 = (1 << 64) - 1


def rule_table(branching: int, rule_seed: int = 0) -> tuple[int, ...]:
    """Correct branch for each cue symbol."""
    rng = np.random.default_rng(10_000 + rule_seed)
    return tuple(int(x) for x in rng.permutation(branching))


@dataclass(frozen=True)
class ChainTask:
    depth: int
    branching: int
    correct_path: tuple[int, ...]
    cues: tuple[int, ...]
    observation_mode: str = "windowed"
    seed: int = 0
    rule_seed: int = 0
    task_id: str = ""

    def __post_init__(self):
        if self.depth < 1 or self.branching < 2:
            raise ValueError("need depth >= 1 and branching >= 2")
        if len(self.correct_path) != self.depth or len(self.cues) != self.depth:
            raise ValueError("correct_path and cues must have length depth")
        if any(not 0 <= b < self.branching for b in self.correct_path):
            raise ValueError("correct_path entries must lie in [0, branching)")
        if self.observation_mode not in ("positional", "windowed"):
            raise ValueError("observation_mode is positional or windowed")

    @property
    def goal_distance(self) -> int:
        return self.depth

    def to_record(self) -> dict:
        return {
            "id": self.task_id,
            "depth": self.depth,
            "branching": self.branching,
            "seed": self.seed,
            "rule_seed": self.rule_seed,
            "observation_mode": self.observation_mode,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ChainTask":
        return generate_chain(
            int(rec["depth"]),
            int(rec["branching"]),
            int(rec["seed"]),
            observation_mode=rec.get("observation_mode", "windowed"),
            rule_seed=int(rec.get("rule_seed", 0)),
            task_id=str(rec.get("id", "")),
        )


def generate_chain(
    depth: int,
    branching: int,
    seed: int,
    *,
    observation_mode: str = "windowed",
    rule_seed: int = 0,
    task_id: str = "",
) -> ChainTask:
    if depth < 1 or branching < 2:
        raise ValueError("need depth >= 1 and branching >= 2")
    rng = np.random.default_rng(seed)
    cues = tuple(int(c) for c in rng.integers(0, branching, size=depth))
    rule = rule_table(branching, rule_seed)
    path = tuple(rule[c] for c in cues)
    return ChainTask(
        depth,
        branching,
        path,
        cues,
        observation_mode,
        seed,
        rule_seed,
        task_id or f"chain-d{depth}-b{branching}-s{seed}",
    )


@dataclass(frozen=True)
class ChainState:
    position: int
    lost: bool = False
    lost_steps: int = 0


def _lost_cue(task: ChainTask, k: int) -> int:
    # deterministic decoy cues for the absorbing region (splitmix64 finalizer)
    z = (task.seed * 0x9E3779B97F4A7C15 + (k + 1) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) % task.branching


def apply(
    task: ChainTask, state: ChainState, macro: MacroAction, subgoal_every: int | None = None
) -> Transition:
    """Follow branch choices in order; atoms after reaching the goal are not executed."""
    pos, lost, lost_steps = state.position, state.lost, state.lost_steps
    valid = []
    correct = []
    events = []
    for atom in macro.atoms:
        if not isinstance(atom, Branch) or not 0 <= atom.index < task.branching:
            valid.append(False)
            correct.append(False)
            continue
        if not lost and pos == task.depth:
            valid.append(False)
            correct.append(False)
            continue
        valid.append(True)
        if lost:
            lost_steps += 1
            correct.append(False)
            continue
        if atom.index == task.correct_path[pos]:
            pos += 1
            correct.append(True)
            if subgoal_every and pos % subgoal_every == 0:
                events.append(pos // subgoal_every - 1)
            elif subgoal_every and pos == task.depth:
                events.append((pos - 1) // subgoal_every)
        else:
            lost = True
            correct.append(False)
    nxt = ChainState(pos, lost, lost_steps)
    done = not lost and pos == task.depth
    return Transition(nxt, tuple(valid), tuple(events), done, done, tuple(correct))


class ChainEnv(Environment):
    env_tag = "chain"

    def __init__(
        self,
        task: ChainTask,
        mode: MacroMode = ATOMIC,
        dense: bool = False,
        *,
        lookahead: int | None = None,
        subgoal_every: int | None = None,
    ):
        super().__init__(task, mode, dense)
        self.space = ActionSpace("chain", branching=task.branching)
        self.vocab = build_vocabulary(self.space)
        self.grammar = TokenGrammar(self.vocab, mode, max_atoms=max(task.depth, 1))
        self.lookahead = lookahead or (mode.max_atoms or task.depth)
        self.subgoal_every = subgoal_every
        self._b0 = self.vocab.index("B0")

    @property
    def goal_distance(self) -> int:
        return self.task.depth

    @property
    def goal_text(self) -> str:
        return f"walk {self.task.depth} nodes choosing branches in [0, {self.task.branching})"

    def reset(self) -> Observation:
        self.state = ChainState(0)
        return self.observe()

    def _cue_at(self, k: int) -> int:
        s = self.state
        if s.lost:
            return _lost_cue(self.task, s.lost_steps + k)
        p = s.position + k
        return self.task.cues[p] if p < self.task.depth else END

    def observe(self) -> Observation:
        s = self.state
        if self.task.observation_mode == "positional":
            base = s.position + s.lost_steps if not s.lost else s.position + s.lost_steps + 1
            pos = tuple(base + k for k in range(self.lookahead))
            pos = tuple(p if p < self.task.depth else END for p in pos)
            return Observation(f"at node {pos[0]}", ("pos",) + pos, ("pos", pos))
        cues = tuple(self._cue_at(k) for k in range(self.lookahead))
        text = "cues " + " ".join("end" if c == END else str(c) for c in cues)
        return Observation(text, ("cue",) + cues, ("cue", cues))

    def step(self, action: MacroAction) -> Transition:
        tr = apply(self.task, self.state, action, self.subgoal_every)
        self.state = tr.state
        return tr

    def features(self, obs: Observation, prefix: Sequence[int]):
        kind, seq = obs.data
        g = self.grammar
        atoms = len(prefix) // g.atom_len
        pos = len(prefix) % g.atom_len
        ahead = seq[atoms] if atoms < len(seq) else END
        if pos == 0:
            # head-or-stop decision
            return ((kind + "-next", ahead),)
        return ((kind, ahead),)
