import os
import shutil
import stat
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
CVC5_SCRIPT = ROOT / "tools" / "cvc5_smt2.py"


def have_z3():
    return shutil.which("z3") is not None


def cvc5_command():
    try:
        import cvc5  # noqa: F401
    except ImportError:
        return None
    return f"{sys.executable} {CVC5_SCRIPT}"


requires_z3 = pytest.mark.skipif(not have_z3(), reason="z3 executable not on PATH")


@pytest.fixture
def fake_solver(tmp_path):
    """Factory for throwaway solver executables running a shell body."""
    def make(body, name="fake-solver"):
        path = tmp_path / name
        path.write_text("#!/bin/sh\n" + body + "\n")
        path.chmod(path.stat().st_mode | stat.S_IXUSR)
        return str(path)
    return make


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """MNIST IDX files: $SATINIT_MNIST_DIR if set, else the mlxtend 5k sample."""
    env = os.environ.get("SATINIT_MNIST_DIR")
    if env:
        return env
    pytest.importorskip("mlxtend")
    sys.path.insert(0, str(ROOT / "tools"))
    try:
        from mnist_from_mlxtend import build
    finally:
        sys.path.pop(0)
    return build(str(tmp_path_factory.mktemp("mnist")))


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL for an acceptance criterion, then assert it."""
    def record(number, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}" + (f" ({detail})" if detail else "")
        _VERDICTS.append((number, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
