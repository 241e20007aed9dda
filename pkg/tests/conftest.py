import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fnn.greens import LayeredSystem

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_hermitian(rng, m, scale=1.0):
    a = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return scale * (a + a.conj().T) / 2


def random_system(rng, sizes, scale=1.0, diagonal_input=False):
    intra = [random_hermitian(rng, m, scale) for m in sizes]
    if diagonal_input:
        intra[0] = rng.standard_normal(sizes[0])
    inter = [scale * (rng.standard_normal((a, b)) + 1j * rng.standard_normal((a, b)))
             for a, b in zip(sizes[:-1], sizes[1:])]
    return LayeredSystem(intra, inter)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed once at the end of the run
CRITERIA: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA):
            terminalreporter.write_line(line)
