import math

import numpy as np
import pytest

from voxrelax.expr import parse_model

# maximize exp(x - y) * x * y on the unit square; optimum 1 at (1, 1)
EXP_BILINEAR = "var x in [0,1]; var y in [0,1]; max exp(x-y)*x*y;"

# bilinear objective over the region between two log curves; optimum 1 at (1, 1)
LOG_TENT = f"""var x1 in [{math.exp(-1)!r}, {math.e!r}]; var x2 in [0, 1];
max x1 * x2;
s.t. x2 - log(x1) <= 1;
     x2 + log(x1) <= 1;"""


@pytest.fixture
def exp_bilinear():
    return parse_model(EXP_BILINEAR)


@pytest.fixture
def log_tent():
    return parse_model(LOG_TENT)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid_max(f, lo, hi, n=401):
    """Dense-grid maximum of ``f(x, y)`` over a box."""
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(xs, ys)
    return float(np.max(f(X, Y)))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
