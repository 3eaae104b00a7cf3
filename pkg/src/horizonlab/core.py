"""Environment-agnostic episode records, horizon metrics and sliding-window memory."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class HorizonProfile:
    """Goal distance, interaction budget and (optionally) the turns a policy used."""

    goal_distance: int
    interaction_budget: int
    effective_horizon: int | None = None

    def __post_init__(self):
        if self.goal_distance < 0:
            raise ValueError("goal_distance must be nonnegative")
        if self.interaction_budget < 1:
            raise ValueError("interaction_budget must be positive")
        if self.effective_horizon is not None and not (
            0 <= self.effective_horizon <= self.interaction_budget
        ):
            raise ValueError("effective_horizon must lie in [0, interaction_budget]")

    def reduced(self, macro_bound: int) -> int:
        """Fewest turns needed when each turn may carry up to ``macro_bound`` atoms."""
        return -(-self.goal_distance // macro_bound)


@dataclass(frozen=True)
class Step:
    context: str
    action_tokens: tuple[int, ...]
    behavior_logprobs: tuple[float, ...]
    env_reward: float = 0.0
    format_penalty: float = 0.0
    validity_penalty: float = 0.0
    subgoal_events: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.action_tokens) == 0:
            raise ValueError("action_tokens must be non-empty")
        if len(self.behavior_logprobs) != len(self.action_tokens):
            raise ValueError("behavior_logprobs needs exactly one entry per token")

    @property
    def step_reward(self) -> float:
        return self.format_penalty + self.validity_penalty

    def to_dict(self) -> dict:
        return {
            "context": self.context,
            "action_tokens": [int(t) for t in self.action_tokens],
            "behavior_logprobs": [float(x) for x in self.behavior_logprobs],
            "env_reward": float(self.env_reward),
            "format_penalty": float(self.format_penalty),
            "validity_penalty": float(self.validity_penalty),
            "subgoal_events": [int(e) for e in self.subgoal_events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Step":
        return cls(
            context=d["context"],
            action_tokens=tuple(int(t) for t in d["action_tokens"]),
            behavior_logprobs=tuple(float(x) for x in d["behavior_logprobs"]),
            env_reward=float(d["env_reward"]),
            format_penalty=float(d["format_penalty"]),
            validity_penalty=float(d["validity_penalty"]),
            subgoal_events=tuple(int(e) for e in d["subgoal_events"]),
        )


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    steps: tuple[Step, ...]
    outcome: Outcome
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "outcome", Outcome(self.outcome))
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def success(self) -> bool:
        return self.outcome is Outcome.SUCCESS

    def env_rewards(self) -> np.ndarray:
        return np.array([s.env_reward for s in self.steps], dtype=float)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "steps": [s.to_dict() for s in self.steps],
            "outcome": self.outcome.value,
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            task_id=str(d["task_id"]),
            steps=tuple(Step.from_dict(s) for s in d["steps"]),
            outcome=Outcome(d["outcome"]),
            seed=int(d["seed"]),
        )


def write_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w") as fh:
        for traj in trajectories:
            fh.write(json.dumps(traj.to_dict(), sort_keys=True) + "\n")


def read_trajectories(path: str | Path) -> Iterator[Trajectory]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield Trajectory.from_dict(json.loads(line))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed trajectory record ({exc})") from exc


def discounted_return(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Per-step discounted return ``G_t = r_t + gamma * G_{t+1}``.

    Raises:
        ValueError: if ``rewards`` is empty or ``gamma`` is outside (0, 1].
    """
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("rewards must be a non-empty 1-d sequence")
    if not (0.0 < gamma <= 1.0):
        raise ValueError("gamma must lie in (0, 1]")
    out = np.empty_like(r)
    acc = 0.0
    for t in range(r.size - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def effective_horizon(trajectory: Trajectory) -> int | None:
    """Turns used by a successful trajectory; ``None`` for any other outcome."""
    if trajectory.success:
        return len(trajectory.steps)
    return None


@dataclass(frozen=True)
class Turn:
    """One full interaction turn as logged by the agent loop.

    ``think`` holds free-form deliberation and never reaches the memory window.
    """

    observation: str
    action: str
    reason: str = ""
    think: str = ""


@dataclass(frozen=True)
class WindowEntry:
    observation: str
    reason: str
    action: str


@dataclass
class InteractionLog:
    goal_text: str
    turns: list[Turn] = field(default_factory=list)

    def append(self, turn: Turn) -> None:
        self.turns.append(turn)


@dataclass(frozen=True)
class ObservationWindow:
    window_size: int
    entries: tuple[WindowEntry, ...]
    goal_text: str

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be positive")
        if len(self.entries) > self.window_size:
            raise ValueError("window holds more entries than window_size")

    def render(self) -> str:
        lines = [f"GOAL: {self.goal_text}"]
        for e in self.entries:
            lines.append(f"OBS: {e.observation}")
            lines.append(f"REASON: {e.reason}, ACTION: {e.action}")
        return "\n".join(lines)


def build_window(history: InteractionLog, K: int) -> ObservationWindow:
    """Keep the goal plus the ``K`` most recent turns, dropping deliberation text."""
    if K < 1:
        raise ValueError("K must be >= 1")
    recent = history.turns[-K:]
    entries = tuple(WindowEntry(t.observation, t.reason, t.action) for t in recent)
    return ObservationWindow(window_size=K, entries=entries, goal_text=history.goal_text)
