import numpy as np
import pytest

from nlperim.kernels import make_kernel, build_weights


@pytest.fixture(scope="session")
def frac05():
    return make_kernel("fractional", 2, s=0.5)


@pytest.fixture(scope="session")
def w8(frac05):
    """Full stencil for an 8x8 world with h = 1."""
    return build_weights(frac05, (8, 8), 1.0)


def random_set(rng, shape, p=0.5):
    return rng.random(shape) < p


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, ok, detail):
        line = "criterion %2d: %s  %s" % (number, "PASS" if ok else "FAIL", detail)
        ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
