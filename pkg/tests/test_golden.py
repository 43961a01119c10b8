import numpy as np
import pytest

from voxrelax.golden import (
    CHECKS,
    GOLDEN,
    perturbed,
    projected_underestimator,
    r_closed,
    r_limit,
    r_one,
    run_all,
)


def test_all_checks_pass():
    checks = run_all()
    assert len(checks) == len(CHECKS)
    for c in checks:
        assert c.passed, c.line()
        assert c.line().startswith("PASS")


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_every_perturbed_constant_fails(name):
    checks = run_all(perturbed(name))
    assert not all(c.passed for c in checks)


def test_perturb_unknown_name():
    with pytest.raises(KeyError):
        perturbed("nope")


def test_example_point_values():
    assert r_one(1.5, 1.5) == pytest.approx(3.0)
    assert r_closed(1.5, 1.5) == pytest.approx(4.0)
    assert r_limit(1.5, 1.5) == pytest.approx(3.274653, abs=1e-6)
    assert (1.5 * 1.5) ** 2 == 81 / 16


@pytest.mark.parametrize("x1", np.linspace(0, 2, 5))
@pytest.mark.parametrize("x2", np.linspace(0, 2, 5))
def test_engine_matches_closed_form(x1, x2):
    # LP over the pentagon envelope against the closed-form projection
    engine = projected_underestimator(x1, x2)
    assert engine == pytest.approx(r_closed(x1, x2), abs=1e-9)
    assert r_one(x1, x2) <= engine + 1e-9
    assert engine <= (x1 * x2) ** 2 + 1e-9
