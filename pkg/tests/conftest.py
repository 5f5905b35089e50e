import numpy as np
import pytest

from spinpump.model import paul_trap_config
from spinpump.protocol import default_sequence, optimize_pulse_durations

CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        )


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = rank or dim
    x = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = x @ x.conj().T
    return rho / np.trace(rho)


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (x + x.conj().T) / 2


@pytest.fixture(scope="session")
def n2_config():
    return paul_trap_config(2)


@pytest.fixture(scope="session")
def n4_config():
    return paul_trap_config(4)


@pytest.fixture(scope="session")
def n2_fit(n2_config):
    return optimize_pulse_durations(default_sequence(n2_config), n2_config)


@pytest.fixture(scope="session")
def n4_fit(n4_config):
    return optimize_pulse_durations(default_sequence(n4_config), n4_config)
