import numpy as np
import pytest
from mpmath import mp

from neutralstab import precision as prec
from neutralstab.system import NeutralSystem, example2_matrices, scalar_system

EX2 = dict(a=0.4, b=50.0, h=0.2, d=0.8, sigma=0.3)


@pytest.fixture(autouse=True)
def _restore_precision():
    old = mp.dps
    yield
    mp.dps = old


@pytest.fixture
def digits32():
    with prec.precision(32):
        yield 32


@pytest.fixture
def example1():
    return scalar_system(0.8, -1.2, -0.3, 1.0)


@pytest.fixture
def example2_stable():
    return example2_matrices(kp=1.0, ki=1.0, **EX2)


@pytest.fixture
def example2_unstable():
    return example2_matrices(kp=1.0, ki=-1.0, **EX2)


@pytest.fixture
def delay_free():
    return NeutralSystem([[-1.0]], [[0.0]], [[0.0]], 1.0)


@pytest.fixture
def matrix_system():
    return NeutralSystem([[-2.0, 0.5], [0.3, -1.5]], [[0.2, -0.1], [0.4, 0.3]],
                         [[0.2, 0.1], [-0.1, 0.3]], 0.7)


def random_system(rng, n=None, h=None, dmax=0.8):
    n = int(rng.integers(1, 3)) if n is None else n
    h = float(rng.uniform(0.1, 2.0)) if h is None else h
    A0 = rng.normal(size=(n, n))
    A1 = rng.normal(size=(n, n))
    D = rng.normal(size=(n, n))
    D *= rng.uniform(0.0, dmax) / np.linalg.norm(D, 2)
    return NeutralSystem(A0, A1, D, h)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def record(criterion, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
