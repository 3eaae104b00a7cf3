"""Shared environment plumbing: transitions, observations and the env protocol."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence

from ..grammar import ATOMIC, MacroAction, MacroMode, TokenGrammar, Vocabulary


class Infeasible(RuntimeError):
    """A generator could not satisfy its constraints within its retry budget."""


class Unsolvable(RuntimeError):
    """The goal is unreachable from the given state."""


@dataclass(frozen=True)
class Transition:
    state: object
    valid: tuple[bool, ...]
    subgoal_events: tuple[int, ...] = ()
    terminal: bool = False
    success: bool = False
    correct: tuple[bool, ...] | None = None


@dataclass(frozen=True)
class Observation:
    """What the policy sees on one turn.

    ``key`` is a hashable digest of everything feature extraction depends on,
    so featurization can be memoized.
    """

    text: str
    key: Hashable
    data: object = field(default=None, compare=False)


class Environment:
    """One episode on one task. Instances are single-owner and mutable."""

    env_tag: str = ""

    def __init__(self, task, mode: MacroMode = ATOMIC, dense: bool = False):
        self.task = task
        self.mode = mode
        self.dense = dense
        self.state = None

    # subclasses provide these
    vocab: Vocabulary
    grammar: TokenGrammar

    @property
    def goal_distance(self) -> int:
        raise NotImplementedError

    @property
    def goal_text(self) -> str:
        raise NotImplementedError

    def reset(self) -> Observation:
        raise NotImplementedError

    def observe(self) -> Observation:
        raise NotImplementedError

    def step(self, action: MacroAction) -> Transition:
        raise NotImplementedError

    def features(self, obs: Observation, prefix: Sequence[int]) -> tuple[Hashable, ...]:
        """Context features for the next token given the partial action ``prefix``."""
        raise NotImplementedError
