import json
import math

import numpy as np
import pytest

from conftest import random_measure
from sinkbary.analysis import (
    KernelSpec,
    Report,
    fit_rate,
    lipschitz_tv_check,
    median_bandwidth,
    mmd,
    mmd_concentration_bound,
    mmd_concentration_experiment,
    mmd_lipschitz_check,
    potential_bounds_check,
    run_suite,
    sample_complexity_experiment,
    sinkhorn_rate_check,
)
from sinkbary.errors import DimensionMismatch
from sinkbary.measure import PointMass, dirac, new_measure


def test_kernel_normalized():
    k = KernelSpec(0.3)
    X = np.random.default_rng(0).random((4, 2))
    np.testing.assert_allclose(np.diag(k(X, X)), 1.0)
    with pytest.raises(ValueError):
        KernelSpec(0.0)


def test_mmd_matches_double_loop(rng):
    k = KernelSpec(0.4)
    a, b = random_measure(rng, 3), random_measure(rng, 3)
    h = lambda x, y: math.exp(-float(((x - y) ** 2).sum()) / (2 * 0.4 ** 2))
    s = 0.0
    for P, w, sign in ((a.points, a.weights, 1), (b.points, b.weights, 1)):
        s += sign * sum(w[i] * w[j] * h(P[i], P[j]) for i in range(3) for j in range(3))
    s -= 2 * sum(a.weights[i] * b.weights[j] * h(a.points[i], b.points[j]) for i in range(3) for j in range(3))
    assert mmd(a, b, k) == pytest.approx(math.sqrt(max(s, 0.0)), rel=1e-12, abs=1e-14)


def test_mmd_simple_cases(rng):
    k = KernelSpec(0.5)
    a = random_measure(rng, 5)
    assert mmd(a, a, k) == pytest.approx(0.0, abs=1e-7)
    x, y = np.array([0.1, 0.2]), np.array([0.6, 0.0])
    hxy = math.exp(-float(((x - y) ** 2).sum()) / (2 * 0.25))
    assert mmd(dirac(x), dirac(y), k) == pytest.approx(math.sqrt(2 - 2 * hxy), rel=1e-12)
    with pytest.raises(DimensionMismatch):
        mmd(dirac((0, 0)), dirac((0, 0, 0)), k)


def test_mmd_metric_properties(rng):
    k = KernelSpec(0.3)
    for _ in range(20):
        a, b, c = (random_measure(rng, int(rng.integers(1, 6))) for _ in range(3))
        assert mmd(a, b, k) == pytest.approx(mmd(b, a, k), abs=1e-12)
        assert mmd(a, b, k) <= mmd(a, c, k) + mmd(c, b, k) + 1e-12
        assert mmd(a, b, k) > 0


def test_median_bandwidth():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    assert median_bandwidth(X) == pytest.approx(2.0)


def test_concentration_bound_arithmetic():
    assert mmd_concentration_bound(100, 0.05) == pytest.approx(4 * math.log(60) / 10)
    assert mmd_concentration_bound(100, 0.05) == pytest.approx(1.637, abs=1e-3)


def test_fit_rate_recovers_exponent():
    n = np.array([16, 64, 256, 1024])
    fit = fit_rate(n, 3.0 * n ** -0.5)
    assert fit.fitted_slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.fitted_intercept == pytest.approx(math.log(3.0), abs=1e-12)
    with pytest.raises(ValueError):
        fit_rate([1, 2], [1.0])


def test_report_write(tmp_path):
    rep = Report("demo", True, {"x": np.float64(1.5), "flag": np.bool_(True), "bad": float("nan")},
                 [{"a": 1, "b": 0.25}, {"a": 2, "b": 0.5}])
    csv_path, json_path = rep.write(str(tmp_path))
    assert open(csv_path).read() == "a,b\n1,0.25\n2,0.5\n"
    d = json.load(open(json_path))
    assert d == {"name": "demo", "pass": True, "statistics": {"x": 1.5, "flag": True, "bad": "nan"}}


# -- small versions of the suites -------------------------------------------

def test_rate_check_small():
    rep = sinkhorn_rate_check(trials=8, seed=5)
    assert rep.passed
    assert rep.statistics["max_ratio_over_lam2"] <= 1.0


def test_rate_check_ln3_instance():
    # D / eps = ln 3 gives lambda^2 = 1/4
    rep = sinkhorn_rate_check(trials=3, seed=1, ratio_range=(math.log(3), math.log(3)))
    assert rep.passed
    for r in rep.rows:
        assert r["lam"] ** 2 == pytest.approx(0.25, abs=1e-12)


def test_potential_bounds_small():
    rep = potential_bounds_check(trials=10, seed=2)
    assert rep.passed and rep.statistics["violations"] == 0


def test_lipschitz_tv_small():
    rep = lipschitz_tv_check(trials=20, seed=3)
    assert rep.passed
    assert 0.0 < rep.statistics["max_ratio"] <= 1.0
    assert math.exp(3 * rep.statistics["D"] / rep.statistics["eps"]) <= 1e3 * (1 + 1e-12)


def test_mmd_lipschitz_constant_stable():
    r1, r2 = mmd_lipschitz_check(seed=10), mmd_lipschitz_check(seed=11)
    c1, c2 = r1.statistics["fitted_constant"], r2.statistics["fitted_constant"]
    assert r1.passed and np.isfinite(c1) and np.isfinite(c2)
    q1, q2 = r1.statistics["quantile_95"], r2.statistics["quantile_95"]
    assert abs(q1 - q2) <= 0.2 * max(q1, q2)


def test_mmd_lipschitz_identical_pairs_skipped():
    # zero trials means nothing to fit; the check still reports a finite constant
    rep = mmd_lipschitz_check(trials=0)
    assert rep.passed and rep.statistics["fitted_constant"] == 0.0


def test_mmd_degenerate_sampler():
    rep = mmd_concentration_experiment(PointMass([0.3, 0.3]), n_list=(5, 10), trials=20,
                                       kernel=KernelSpec(0.5), n_ref=1000)
    assert rep.passed
    assert max(r["mmd"] for r in rep.rows) <= 1e-6


def test_mmd_doubling_shrinks_median():
    rep = mmd_concentration_experiment(n_list=(50, 100), trials=200, seed=2, n_ref=10_000)
    m50, m100 = (p["median"] for p in rep.statistics["per_n"])
    assert 0.6 <= m100 / m50 <= 0.85


def test_sample_complexity_small():
    fit, rep = sample_complexity_experiment(n_list=(16, 64, 256), trials=30)
    assert rep.passed
    meds = rep.statistics["medians"]
    assert all(b < a for a, b in zip(meds, meds[1:]))


def test_sample_complexity_degenerate():
    fit, rep = sample_complexity_experiment(beta_sampler=PointMass([0.5, 0.5]), n_list=(4, 16), trials=3,
                                            n_ref=50, max_slope=0.0)
    assert max(rep.statistics["medians"]) <= 1e-8


def test_reports_carry_metadata():
    reps = [sinkhorn_rate_check(trials=2), potential_bounds_check(trials=2), lipschitz_tv_check(trials=2),
            mmd_concentration_experiment(n_list=(5,), trials=20, n_ref=500),
            sample_complexity_experiment(n_list=(4, 8), trials=2, n_ref=100)[1]]
    for rep in reps:
        assert {"eps", "D", "lam"} <= set(rep.summary()["statistics"]), rep.name


def test_unknown_suite():
    with pytest.raises(ValueError):
        run_suite("nope")
