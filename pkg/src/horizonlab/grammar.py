"""Action surface syntax: parsing, canonical rendering, tokenization and macro modes.

Canonical forms::

    sudoku    value(5, r3c4); value(2, r1c1)
    rushhour  move(A, right)  |  move(A, right, 2)
    chain     go(0); go(1)

Parsing is a small hand-written recursive descent over a regex lexer. Every
failure surfaces as :class:`FormatError`; nothing else escapes ``parse_action``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

ENV_TAGS = ("sudoku", "rushhour", "chain")
DIRECTIONS = ("up", "down", "left", "right")
TARGET_ID = "X"
VEHICLE_IDS = "ABCDEFGHIJKLMNOPQRSTUVWX"


class FormatReason(str, Enum):
    UNPARSEABLE = "unparseable"
    WRONG_ARITY = "wrong_arity"
    OUT_OF_BOUNDS = "out_of_bounds_syntax"


class FormatError(ValueError):
    def __init__(self, reason: FormatReason, detail: str = ""):
        self.reason = FormatReason(reason)
        self.detail = detail
        super().__init__(f"{self.reason.value}: {detail}" if detail else self.reason.value)


# -- atoms -------------------------------------------------------------------


@dataclass(frozen=True)
class Assign:
    """Write ``value`` into (row, col); coordinates are 1-based as in the syntax."""

    value: int
    row: int
    col: int


@dataclass(frozen=True)
class Slide:
    vehicle: str
    direction: str


@dataclass(frozen=True)
class Branch:
    index: int


AtomicAction = Union[Assign, Slide, Branch]


def env_of(atom: AtomicAction) -> str:
    if isinstance(atom, Assign):
        return "sudoku"
    if isinstance(atom, Slide):
        return "rushhour"
    return "chain"


@dataclass(frozen=True)
class MacroAction:
    atoms: tuple[AtomicAction, ...]
    bound: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if not self.atoms:
            raise ValueError("a macro action needs at least one atom")
        if self.bound is not None and len(self.atoms) > self.bound:
            raise ValueError("macro exceeds its atom bound")

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def env_tag(self) -> str:
        return env_of(self.atoms[0])


@dataclass(frozen=True)
class MacroMode:
    kind: str = "atomic"
    n: int | None = None

    def __post_init__(self):
        if self.kind not in ("atomic", "fixed", "flexible", "unbounded"):
            raise ValueError(f"unknown macro mode {self.kind!r}")
        if self.kind in ("fixed", "flexible") and (self.n is None or self.n < 1):
            raise ValueError(f"{self.kind} mode needs a positive atom count")

    @property
    def max_atoms(self) -> int | None:
        if self.kind == "atomic":
            return 1
        if self.kind in ("fixed", "flexible"):
            return self.n
        return None

    def admits(self, count: int) -> bool:
        if self.kind == "atomic":
            return count == 1
        if self.kind == "fixed":
            return count == self.n
        if self.kind == "flexible":
            return 1 <= count <= self.n
        return count >= 1

    def __str__(self) -> str:
        return self.kind if self.n is None else f"{self.kind}({self.n})"

    @classmethod
    def parse(cls, text: str) -> "MacroMode":
        m = re.fullmatch(r"\s*(atomic|unbounded|fixed|flexible)\s*(?:\(\s*(\d+)\s*\))?\s*", text)
        if not m:
            raise ValueError(f"cannot read macro mode {text!r}")
        n = int(m.group(2)) if m.group(2) else None
        return cls(m.group(1), n)


ATOMIC = MacroMode("atomic")
UNBOUNDED = MacroMode("unbounded")


def fixed(n: int) -> MacroMode:
    return MacroMode("fixed", n)


def flexible(n: int) -> MacroMode:
    return MacroMode("flexible", n)


@dataclass(frozen=True)
class ActionSpace:
    """Syntactic bounds for one environment family."""

    env_tag: str
    size: int = 9
    branching: int = 2
    vehicles: str = VEHICLE_IDS
    max_distance: int = 5

    def __post_init__(self):
        if self.env_tag not in ENV_TAGS:
            raise ValueError(f"unknown env tag {self.env_tag!r}")


def as_space(env: str | ActionSpace) -> ActionSpace:
    return env if isinstance(env, ActionSpace) else ActionSpace(env)


# -- structured output -------------------------------------------------------

_THINK = re.compile(r"<think>.*?</think>", re.S)
_STRUCTURED = re.compile(r"\s*REASON:(?P<reason>.*?),\s*ACTION:(?P<action>.*)\Z", re.S)


@dataclass(frozen=True)
class ActionText:
    raw: str
    structured_output: tuple[str, str] | None = field(default=None, compare=False)

    @classmethod
    def read(cls, raw: str) -> "ActionText":
        body = _THINK.sub("", raw)
        m = _STRUCTURED.match(body)
        if m is None:
            return cls(raw, None)
        return cls(raw, (m.group("reason").strip(), m.group("action").strip()))

    @property
    def action_field(self) -> str:
        return self.structured_output[1] if self.structured_output else self.raw

    @property
    def reason(self) -> str:
        return self.structured_output[0] if self.structured_output else ""


# -- lexer / parser ----------------------------------------------------------

_LEX = re.compile(r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<num>-?\d+)|(?P<punct>[(),;]))")


def _lex(text: str) -> list[tuple[str, str]]:
    out = []
    pos = 0
    n = len(text)
    while pos < n:
        m = _LEX.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise FormatError(FormatReason.UNPARSEABLE, f"unexpected character at {pos}")
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, lexemes):
        self.lx = lexemes
        self.i = 0

    def peek(self):
        return self.lx[self.i] if self.i < len(self.lx) else (None, None)

    def take(self, kind=None, value=None):
        k, v = self.peek()
        if k is None or (kind and k != kind) or (value and v != value):
            want = value or kind or "token"
            raise FormatError(FormatReason.UNPARSEABLE, f"expected {want} at lexeme {self.i}")
        self.i += 1
        return v

    def statements(self):
        stmts = [self.call()]
        while self.peek() == ("punct", ";"):
            self.i += 1
            stmts.append(self.call())
        if self.i != len(self.lx):
            raise FormatError(FormatReason.UNPARSEABLE, f"trailing input at lexeme {self.i}")
        return stmts

    def call(self):
        name = self.take("name")
        self.take("punct", "(")
        args = [self.arg()]
        while self.peek() == ("punct", ","):
            self.i += 1
            args.append(self.arg())
        self.take("punct", ")")
        return name, args

    def arg(self):
        k, v = self.peek()
        if k not in ("name", "num"):
            raise FormatError(FormatReason.UNPARSEABLE, f"expected argument at lexeme {self.i}")
        self.i += 1
        return v


_CELL = re.compile(r"[rR](\d+)[cC](\d+)")


def _int(v: str) -> int:
    if not re.fullmatch(r"-?\d+", v):
        raise FormatError(FormatReason.UNPARSEABLE, f"expected integer, got {v!r}")
    return int(v)


def _sudoku_atom(name, args, space):
    if name != "value" or len(args) != 2:
        raise FormatError(FormatReason.UNPARSEABLE, "expected value(n, rXcY)")
    value = _int(args[0])
    m = _CELL.fullmatch(args[1])
    if m is None:
        raise FormatError(FormatReason.UNPARSEABLE, f"bad cell {args[1]!r}")
    row, col = int(m.group(1)), int(m.group(2))
    n = space.size
    if not (1 <= value <= n and 1 <= row <= n and 1 <= col <= n):
        raise FormatError(FormatReason.OUT_OF_BOUNDS, f"value({value}, r{row}c{col})")
    return [Assign(value, row, col)]


def _rush_atoms(name, args, space):
    if name != "move" or len(args) not in (2, 3):
        raise FormatError(FormatReason.UNPARSEABLE, "expected move(id, direction[, N])")
    vid, direction = args[0], args[1]
    if direction not in DIRECTIONS:
        raise FormatError(FormatReason.UNPARSEABLE, f"unknown direction {direction!r}")
    if not re.fullmatch(r"[A-Za-z]", vid):
        raise FormatError(FormatReason.UNPARSEABLE, f"bad vehicle id {vid!r}")
    if vid not in space.vehicles:
        raise FormatError(FormatReason.OUT_OF_BOUNDS, f"no vehicle {vid!r}")
    dist = _int(args[2]) if len(args) == 3 else 1
    if not (1 <= dist <= space.max_distance):
        raise FormatError(FormatReason.OUT_OF_BOUNDS, f"distance {dist}")
    return [Slide(vid, direction)] * dist


def _chain_atom(name, args, space):
    if name != "go" or len(args) != 1:
        raise FormatError(FormatReason.UNPARSEABLE, "expected go(k)")
    k = _int(args[0])
    if not (0 <= k < space.branching):
        raise FormatError(FormatReason.OUT_OF_BOUNDS, f"branch {k}")
    return [Branch(k)]


def parse_action(
    text: str | ActionText,
    env: str | ActionSpace,
    macro_mode: MacroMode = ATOMIC,
) -> MacroAction:
    """Parse one turn's action text into a :class:`MacroAction`.

    Raises:
        FormatError: with reason ``unparseable``, ``wrong_arity`` or
            ``out_of_bounds_syntax``.
    """
    space = as_space(env)
    if isinstance(text, ActionText):
        body = text.action_field
    else:
        try:
            body = ActionText.read(text).action_field
        except Exception as exc:  # pragma: no cover - regex on str never raises
            raise FormatError(FormatReason.UNPARSEABLE, str(exc)) from exc
    stmts = _Parser(_lex(body)).statements()
    atoms: list[AtomicAction] = []
    if space.env_tag == "sudoku":
        for name, args in stmts:
            atoms += _sudoku_atom(name, args, space)
    elif space.env_tag == "rushhour":
        if len(stmts) != 1:
            raise FormatError(FormatReason.WRONG_ARITY, "one move statement per turn")
        atoms += _rush_atoms(*stmts[0], space)
    else:
        for name, args in stmts:
            atoms += _chain_atom(name, args, space)
    if not macro_mode.admits(len(atoms)):
        raise FormatError(
            FormatReason.WRONG_ARITY, f"{len(atoms)} atoms not allowed in {macro_mode} mode"
        )
    return MacroAction(tuple(atoms), macro_mode.max_atoms)


def _render_atom(atom: AtomicAction) -> str:
    if isinstance(atom, Assign):
        return f"value({atom.value}, r{atom.row}c{atom.col})"
    if isinstance(atom, Branch):
        return f"go({atom.index})"
    return f"move({atom.vehicle}, {atom.direction})"


def render_action(action: MacroAction) -> str:
    atoms = action.atoms
    if isinstance(atoms[0], Slide):
        if any(a != atoms[0] for a in atoms):
            raise ValueError("a rush hour macro slides one vehicle in one direction")
        a = atoms[0]
        if len(atoms) == 1:
            return f"move({a.vehicle}, {a.direction})"
        return f"move({a.vehicle}, {a.direction}, {len(atoms)})"
    return "; ".join(_render_atom(a) for a in atoms)


# -- vocabulary ----------------------------------------------------------------

EOS = "EOS"


@dataclass(frozen=True)
class Vocabulary:
    space: ActionSpace
    lexemes: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_index", {lx: i for i, lx in enumerate(self.lexemes)})

    def __len__(self) -> int:
        return len(self.lexemes)

    def index(self, lexeme: str) -> int:
        try:
            return self._index[lexeme]
        except KeyError:
            raise ValueError(f"lexeme {lexeme!r} is not in the action vocabulary") from None

    def __contains__(self, lexeme: str) -> bool:
        return lexeme in self._index

    @property
    def eos(self) -> int:
        return self._index[EOS]


def build_vocabulary(env: str | ActionSpace) -> Vocabulary:
    space = as_space(env)
    if space.env_tag == "sudoku":
        n = space.size
        lex = ["VAL"] + [f"D{i}" for i in range(1, n + 1)]
        lex += [f"R{i}" for i in range(1, n + 1)] + [f"C{i}" for i in range(1, n + 1)]
    elif space.env_tag == "rushhour":
        lex = ["MOVE"] + [f"V{v}" for v in space.vehicles]
        lex += [d.upper() for d in DIRECTIONS]
        lex += [f"N{i}" for i in range(1, space.max_distance + 1)]
    else:
        lex = ["GO"] + [f"B{i}" for i in range(space.branching)]
    return Vocabulary(space, tuple(lex + [EOS]))


_WORD_LEX = re.compile(r"[rR]\d+[cC]\d+|[A-Za-z_]+|\d+|[(),;]|\S")


def tokenize_action(text: str, vocab: Vocabulary) -> list[int]:
    """Map canonical action text to vocabulary indices, lexeme by lexeme.

    Raises:
        ValueError: on any lexeme outside the closed vocabulary.
    """
    env = vocab.space.env_tag
    out: list[int] = []
    for lx in _WORD_LEX.findall(text):
        if lx in "(),;":
            continue
        if env == "sudoku":
            m = _CELL.fullmatch(lx)
            if m:
                out += [vocab.index(f"R{int(m.group(1))}"), vocab.index(f"C{int(m.group(2))}")]
            elif lx == "value":
                out.append(vocab.index("VAL"))
            elif lx.isdigit():
                out.append(vocab.index(f"D{int(lx)}"))
            else:
                vocab.index(lx)
        elif env == "rushhour":
            if lx == "move":
                out.append(vocab.index("MOVE"))
            elif lx in DIRECTIONS:
                out.append(vocab.index(lx.upper()))
            elif lx.isdigit():
                out.append(vocab.index(f"N{int(lx)}"))
            elif len(lx) == 1 and lx.isalpha():
                out.append(vocab.index(f"V{lx}"))
            else:
                vocab.index(lx)
        else:
            if lx == "go":
                out.append(vocab.index("GO"))
            elif lx.isdigit():
                out.append(vocab.index(f"B{int(lx)}"))
            else:
                vocab.index(lx)
    return out


_KEYWORDS = {"VAL": "value", "MOVE": "move", "GO": "go"}


def detokenize(tokens: Sequence[int], vocab: Vocabulary) -> str:
    """Inverse of :func:`tokenize_action` on well-formed sequences.

    Ill-formed sequences still produce text; the parser then rejects it.
    """
    lex = [vocab.lexemes[t] for t in tokens]
    if lex and lex[-1] == EOS:
        lex = lex[:-1]
    stmts: list[list[str]] = []
    for lx in lex:
        if lx in _KEYWORDS:
            stmts.append([lx])
        elif stmts:
            stmts[-1].append(lx)
        else:
            return " ".join(lex)
    parts = []
    for st in stmts:
        head, rest = st[0], st[1:]
        if head == "VAL" and len(rest) == 3:
            d, r, c = rest
            if d[0] == "D" and r[0] == "R" and c[0] == "C":
                parts.append(f"value({d[1:]}, r{r[1:]}c{c[1:]})")
                continue
        elif head == "MOVE" and len(rest) in (2, 3):
            v, d = rest[0], rest[1]
            if v[0] == "V" and len(v) == 2 and d.lower() in DIRECTIONS:
                tail = ""
                if len(rest) == 3:
                    if rest[2][0] != "N":
                        return " ".join(lex)
                    tail = f", {rest[2][1:]}"
                parts.append(f"move({v[1:]}, {d.lower()}{tail})")
                continue
        elif head == "GO" and len(rest) == 1 and rest[0][0] == "B":
            parts.append(f"go({rest[0][1:]})")
            continue
        return " ".join(lex)
    return "; ".join(parts)


# -- token automaton for grammar-constrained decoding -----------------------------


class TokenGrammar:
    """Which tokens may follow a prefix, for one environment and macro mode.

    ``vehicles`` narrows the vehicle tokens offered (rush hour only); it never
    widens the vocabulary.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        mode: MacroMode = ATOMIC,
        *,
        vehicles: str | None = None,
        max_atoms: int | None = None,
    ):
        self.vocab = vocab
        self.mode = mode
        sp = vocab.space
        self.env = sp.env_tag
        ix = vocab.index
        self.eos = vocab.eos
        if self.env == "sudoku":
            self.head = ix("VAL")
            self.slots = [
                tuple(ix(f"D{i}") for i in range(1, sp.size + 1)),
                tuple(ix(f"R{i}") for i in range(1, sp.size + 1)),
                tuple(ix(f"C{i}") for i in range(1, sp.size + 1)),
            ]
            cap = sp.size * sp.size
        elif self.env == "chain":
            self.head = ix("GO")
            self.slots = [tuple(ix(f"B{i}") for i in range(sp.branching))]
            cap = 64
        else:
            self.head = ix("MOVE")
            vs = vehicles if vehicles is not None else sp.vehicles
            self.slots = [
                tuple(ix(f"V{v}") for v in vs),
                tuple(ix(d.upper()) for d in DIRECTIONS),
            ]
            cap = sp.max_distance
            self.distances = tuple(ix(f"N{i}") for i in range(1, sp.max_distance + 1))
        self.max_atoms = mode.max_atoms or max_atoms or cap
        self.atom_len = 1 + len(self.slots)

    def atoms_in(self, prefix: Sequence[int]) -> int:
        return len(prefix) // self.atom_len

    def allowed(self, prefix: Sequence[int]) -> tuple[int, ...]:
        """Tokens admissible after ``prefix``; empty when the action is complete."""
        n = len(prefix)
        if self.env == "rushhour":
            if n == 0:
                return (self.head,)
            if n <= len(self.slots):
                return self.slots[n - 1]
            if n == 3 and self.mode.kind != "atomic":
                if self.mode.kind == "fixed":
                    return (self.distances[self.mode.n - 1],) if self.mode.n <= len(
                        self.distances
                    ) else ()
                return self.distances[: self.max_atoms]
            return ()
        if n and prefix[-1] == self.eos:
            return ()
        pos = n % self.atom_len
        if pos:
            return self.slots[pos - 1]
        done = n // self.atom_len
        if done == 0:
            return (self.head,)
        if done >= self.max_atoms:
            return ()
        if self.mode.kind == "fixed":
            return (self.head,)
        return (self.head, self.eos)

    def complete(self, prefix: Sequence[int]) -> bool:
        return len(prefix) > 0 and not self.allowed(prefix)

    def max_length(self) -> int:
        if self.env == "rushhour":
            return 4
        return self.max_atoms * self.atom_len + 1
