import numpy as np
import pytest

from cwsim.core import ComplexField, LatticeSpec

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion; printed now and in the terminal summary."""

    def _report(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {name:<28} {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_field(spec: LatticeSpec, seed: int = 0) -> ComplexField:
    rng = np.random.default_rng(seed)
    return ComplexField(spec, rng.normal(size=spec.shape) + 1j * rng.normal(size=spec.shape))


def rel_l2(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(np.asarray(b)))
