from __future__ import annotations

import numpy as np
import pytest
from scipy.linalg import null_space

from aevqe.circuit import Circuit
from aevqe.qsim import Gate


def prep_circuit(amplitudes: np.ndarray) -> Circuit:
    """A one-gate circuit preparing ``amplitudes`` from ``|0...0>``."""
    v = np.asarray(amplitudes, dtype=complex)
    v = v / np.linalg.norm(v)
    n = int(np.log2(v.size))
    unitary = np.column_stack([v, null_space(v.conj()[None, :])])
    return Circuit(0, n, (Gate("UNITARY", tuple(range(n)), matrix=unitary),))


def random_state(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return v / np.linalg.norm(v)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


_REPORT = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Records one PASS/FAIL line for the terminal summary and returns the verdict."""
    lines = request.config.stash.setdefault(_REPORT, [])

    def _report(label: str, ok: bool, detail: str) -> bool:
        lines.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
