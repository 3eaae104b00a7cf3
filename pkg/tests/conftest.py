from pathlib import Path

import pytest

from horizonlab.grammar import MacroMode

DATA = Path(__file__).parent / "data"


def load_corpus():
    rows = []
    for line in (DATA / "grammar_corpus.txt").read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        env, mode, text = line.split("\t")
        rows.append((env, MacroMode.parse(mode), text))
    return rows


@pytest.fixture(scope="session")
def corpus():
    return load_corpus()


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import summary_lines

    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
