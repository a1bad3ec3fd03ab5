import numpy as np
import pytest

from poe import tensor as T
from gradcases import EPS, TOL, build_cases, run_suite

CASE_NAMES = [name for name, *_ in build_cases(np.random.default_rng(0))]


@pytest.mark.parametrize("name", CASE_NAMES)
def test_backward_matches_finite_differences(name):
    for inst in range(3):
        rng = np.random.default_rng(np.random.SeedSequence([17, inst]))
        for cname, x, fn, exclude in build_cases(rng):
            if cname != name:
                continue
            res = T.grad_check(fn, x, eps=EPS, exclude=exclude)
            assert res.max_rel_err < TOL, f"{name}[{inst}]: rel err {res.max_rel_err:.2e}"
            assert res.checked > 0


def test_linear_map_gradient_is_exact():
    a = T.Tensor(np.array([2.0, -3.0, 0.5]), dtype=np.float64)
    res = T.grad_check(lambda t: T.tsum(T.mul(t, a)), np.array([0.3, -0.7, 1.1]), eps=1e-3)
    assert res.max_rel_err < 1e-9


def test_relu_kink_points_are_excluded_not_failed():
    x = np.array([0.0, 0.5, -0.5, 1e-5])
    mask = np.abs(x) <= 10 * EPS
    res = T.grad_check(lambda t: T.tsum(T.relu(t)), x, eps=EPS, exclude=mask)
    assert res.excluded == 2
    assert res.checked == 2
    assert res.max_rel_err < TOL


def test_suite_runner_reports_every_case():
    worst = run_suite(seed=3, instances=1)
    assert set(worst) == set(CASE_NAMES)
    assert all(r.max_rel_err < TOL for r in worst.values())
