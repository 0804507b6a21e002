import numpy as np
import pytest
from hypothesis import settings

from branchnet.data import SynthConfig, generate_synthetic, split
from branchnet.network import NetworkSpec

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the summary."""

    def record(criterion: str, ok: bool | None, detail: str) -> None:
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        _ACCEPTANCE_LINES.append(f"[{status}] {criterion}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_synth():
    """Quick 20/5-class mixture: 40-dim, 600 rows, split 80/20."""
    ds = generate_synthetic(SynthConfig(dim=40, n=600), seed=3)
    return split(ds, 0.8, seed=3)


@pytest.fixture
def small_spec():
    return NetworkSpec(40, (10, 12, 8), 1, 20, 5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
