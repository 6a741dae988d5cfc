"""Exporter test plumbing: toy-tree fixture and the exporter acceptance summary."""

import pytest

from _toytree import build_toy_tree

_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _LINES


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("exporter acceptance")
        for line in _LINES:
            terminalreporter.write_line(line)


@pytest.fixture()
def toy_tree(tmp_path):
    return build_toy_tree(tmp_path / "images"), tmp_path
