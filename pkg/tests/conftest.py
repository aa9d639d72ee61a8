import numpy as np
import pytest

from hfqformer.rng import Rng
from hfqformer.tensor import Tensor, grad_check


def param(shape, seed=0, std=1.0):
    return Tensor(Rng(seed).normal(shape, std=std, dtype=np.float64), requires_grad=True)


def weighted_check(fn, params, seed=99, step=1e-3, order=4):
    """grad_check of sum(fn(*params) * W) for a fixed random W.

    The random weighting keeps gradients away from exact zeros (a plain sum
    of a softmax, say, has zero gradient everywhere). The four-point
    stencil keeps the oracle accurate near stationary points where the true
    gradient is small.
    """
    probe = fn(*params)
    w = Tensor(Rng(seed).normal(probe.shape, dtype=np.float64))
    return grad_check(lambda: (fn(*params) * w).sum(), params, step=step, order=order)


@pytest.fixture
def rng():
    return Rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
