import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from horizonlab.grammar import (
    ATOMIC,
    DIRECTIONS,
    UNBOUNDED,
    ActionSpace,
    ActionText,
    Assign,
    Branch,
    FormatError,
    FormatReason,
    MacroAction,
    MacroMode,
    Slide,
    TokenGrammar,
    build_vocabulary,
    detokenize,
    fixed,
    flexible,
    parse_action,
    render_action,
    tokenize_action,
)


def test_parse_examples():
    a = parse_action("value(5, r3c4)", "sudoku")
    assert a.atoms == (Assign(5, 3, 4),)
    m = parse_action("move(A, right, 2)", "rushhour", flexible(5))
    assert m.atoms == (Slide("A", "right"),) * 2
    with pytest.raises(FormatError) as e:
        parse_action("value(5 r3c4", "sudoku")
    assert e.value.reason is FormatReason.UNPARSEABLE


def test_structured_layout_and_think_stripping():
    raw = "<think>value(1, r1c1)</think>REASON: only spot left, ACTION: value(7, r2c9)"
    t = ActionText.read(raw)
    assert t.raw == raw and t.reason == "only spot left"
    assert parse_action(t, "sudoku").atoms == (Assign(7, 2, 9),)


@pytest.mark.parametrize(
    "text, env, mode, reason",
    [
        ("value(0, r1c1)", "sudoku", ATOMIC, FormatReason.OUT_OF_BOUNDS),
        ("value(1, r10c1)", "sudoku", ATOMIC, FormatReason.OUT_OF_BOUNDS),
        ("value(1, r1c1); value(2, r1c2)", "sudoku", ATOMIC, FormatReason.WRONG_ARITY),
        ("move(A, sideways)", "rushhour", ATOMIC, FormatReason.UNPARSEABLE),
        ("move(A, up, 9)", "rushhour", flexible(5), FormatReason.OUT_OF_BOUNDS),
        ("move(A, up, 2)", "rushhour", ATOMIC, FormatReason.WRONG_ARITY),
        ("move(A, up); move(B, up)", "rushhour", UNBOUNDED, FormatReason.WRONG_ARITY),
        ("go(2)", "chain", ATOMIC, FormatReason.OUT_OF_BOUNDS),
        ("go(1); go(0)", "chain", fixed(3), FormatReason.WRONG_ARITY),
        ("", "chain", ATOMIC, FormatReason.UNPARSEABLE),
    ],
)
def test_format_error_reasons(text, env, mode, reason):
    with pytest.raises(FormatError) as e:
        parse_action(text, env, mode)
    assert e.value.reason is reason


def test_small_board_bounds():
    space = ActionSpace("sudoku", size=4)
    assert parse_action("value(4, r4c4)", space).atoms == (Assign(4, 4, 4),)
    with pytest.raises(FormatError):
        parse_action("value(5, r1c1)", space)


def test_render_examples():
    assert render_action(MacroAction((Assign(5, 3, 4),))) == "value(5, r3c4)"
    assert render_action(MacroAction((Slide("A", "right"),) * 2)) == "move(A, right, 2)"
    assert render_action(MacroAction((Branch(0),))) == "go(0)"
    with pytest.raises(ValueError):
        render_action(MacroAction((Slide("A", "right"), Slide("B", "up"))))


def test_macro_bound_invariant():
    with pytest.raises(ValueError):
        MacroAction((Branch(0),) * 3, bound=2)
    with pytest.raises(ValueError):
        MacroAction(())


def test_mode_parse_and_str():
    for m in (ATOMIC, UNBOUNDED, fixed(3), flexible(4)):
        assert MacroMode.parse(str(m)) == m
    with pytest.raises(ValueError):
        MacroMode.parse("flexible")
    with pytest.raises(ValueError):
        MacroMode.parse("greedy(2)")


@given(st.integers(1, 8), st.integers(1, 8))
def test_mode_soundness(n, count):
    text = "; ".join(["go(0)"] * count)
    ok_fixed = count == n
    ok_flex = 1 <= count <= n
    for mode, ok in ((fixed(n), ok_fixed), (flexible(n), ok_flex)):
        try:
            parse_action(text, "chain", mode)
            assert ok
        except FormatError as e:
            assert not ok and e.reason is FormatReason.WRONG_ARITY


def test_corpus_roundtrip(corpus):
    assert len(corpus) >= 100
    for env, mode, text in corpus:
        action = parse_action(text, env, mode)
        assert render_action(action) == text
        vocab = build_vocabulary(env)
        assert detokenize(tokenize_action(text, vocab), vocab) == text


def test_tokenize_example():
    v = build_vocabulary("sudoku")
    toks = tokenize_action("value(5, r3c4)", v)
    assert [v.lexemes[t] for t in toks] == ["VAL", "D5", "R3", "C4"]


def test_vocabulary_size_from_terminals():
    # independent oracle: enumerate terminals of the 9x9 atomic grammar
    terminals = {"value"} | {f"digit{i}" for i in range(1, 10)}
    terminals |= {f"row{i}" for i in range(1, 10)} | {f"col{i}" for i in range(1, 10)}
    v = build_vocabulary("sudoku")
    assert len(v) == len(terminals) + 1  # plus end-of-action
    assert len(build_vocabulary("chain")) == 1 + 2 + 1
    assert len(build_vocabulary(ActionSpace("chain", branching=5))) == 1 + 5 + 1


def test_tokenize_rejects_unknown_lexeme():
    v = build_vocabulary("chain")
    with pytest.raises(ValueError):
        tokenize_action("go(7)", v)
    with pytest.raises(ValueError):
        tokenize_action("jump(1)", v)


def _walk(grammar, rng, limit=40):
    prefix = []
    while True:
        allowed = grammar.allowed(prefix)
        if not allowed:
            return prefix
        prefix.append(rng.choice(allowed))
        assert len(prefix) <= limit


@pytest.mark.parametrize(
    "env, mode",
    [("sudoku", ATOMIC), ("sudoku", flexible(3)), ("rushhour", ATOMIC), ("rushhour", flexible(5)),
     ("chain", ATOMIC), ("chain", flexible(4)), ("chain", fixed(2))],
)
def test_token_grammar_emits_parseable_actions(env, mode):
    vocab = build_vocabulary(env)
    g = TokenGrammar(vocab, mode)
    rng = random.Random(3)
    for _ in range(200):
        toks = _walk(g, rng)
        assert len(toks) <= g.max_length()
        action = parse_action(detokenize(toks, vocab), env, mode)
        assert mode.admits(len(action))


def test_token_grammar_vehicle_restriction():
    vocab = build_vocabulary("rushhour")
    g = TokenGrammar(vocab, ATOMIC, vehicles="XAB")
    offered = {vocab.lexemes[t] for t in g.allowed([vocab.index("MOVE")])}
    assert offered == {"VX", "VA", "VB"}


_alphabet = "value()move,go; rc0123456789ABXupdownleftright<>:REASONACTION\n\t\x00é"


@given(st.text(alphabet=_alphabet, max_size=40), st.sampled_from(["sudoku", "rushhour", "chain"]))
def test_fuzz_never_crashes(text, env):
    for mode in (ATOMIC, flexible(4), UNBOUNDED):
        try:
            a = parse_action(text, env, mode)
        except FormatError:
            continue
        assert mode.admits(len(a))
        assert parse_action(render_action(a), env, mode) == a


@given(st.binary(max_size=30))
def test_fuzz_bytes(blob):
    text = blob.decode("latin-1")
    try:
        parse_action(text, "sudoku", UNBOUNDED)
    except FormatError:
        pass


def test_direction_set():
    assert set(DIRECTIONS) == {"up", "down", "left", "right"}
