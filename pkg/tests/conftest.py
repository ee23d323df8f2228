import numpy as np
import pytest

from gentron.checks import desk_config, perturb
from gentron.model import ADALN_ZERO, CROSS_ATTENTION, GenTron
from gentron.numerics.rng import Rng


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture(params=[ADALN_ZERO, CROSS_ATTENTION])
def variant(request):
    return request.param


@pytest.fixture
def desk_model(variant):
    return GenTron(desk_config(variant), seed=0)


@pytest.fixture
def trained_like(variant):
    """A desk model with every parameter moved off its initial value."""
    return perturb(GenTron(desk_config(variant), seed=0), Rng(99))


def f64(rng, *shape):
    return rng.normal(shape)


def assert_bitwise(a, b):
    a, b = np.asarray(a), np.asarray(b)
    assert a.shape == b.shape and a.dtype == b.dtype
    assert a.tobytes() == b.tobytes()


_ACCEPTANCE = pytest.StashKey()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: criterion(n, passed, detail)."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash.setdefault(_ACCEPTANCE, []).append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
