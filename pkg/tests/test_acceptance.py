"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` or as a script.  The lines
are also collected into a terminal summary section by ``conftest.py``.
"""
import filecmp
import json
import math
import os
import time

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from sinkbary import analysis, cli
from sinkbary.frank_wolfe import (
    BarycenterProblem,
    FWConfig,
    GridMinimize,
    PotentialCombination,
    barycenter,
    minimize_phi,
    objective,
    rate_bound,
    self_terms,
)
from sinkbary.io import write_measure, write_pgm
from sinkbary.measure import Domain, Gaussian, dirac, image_to_measure, new_measure, sample_empirical
from sinkbary.sinkhorn import SinkhornConfig, potential_extend, sinkhorn_knopp
from sinkbary.tasks import compress

# frozen oracles (generated independently of the package, see test_sinkhorn.py for the 2x2 case)
ORACLE_U = np.array([0.0, 0.34532883438428147])
ORACLE_V = np.array([0.2958338961111089, -0.07415829019827191])

GAUSS_MEANS = np.array([[0.5118216247002567, 0.9504636963259353],
                        [0.14415961271963373, 0.9486494471372439],
                        [0.31183145201048545, 0.42332644897257565]])
# W2 barycenter covariance of the three Gaussians, fixed-point iteration
# S <- S^-1/2 (mean_i (S^1/2 C_i S^1/2)^1/2)^2 S^-1/2, 200 iterations
GAUSS_W2_COV = np.array([[0.033577587508446874, -0.002392283660264796],
                         [-0.002392283660264793, 0.025907449221039994]])

pytestmark = pytest.mark.acceptance


def test_01_sinkhorn_contraction(acceptance_line):
    t = time.perf_counter()
    rep = analysis.sinkhorn_rate_check(trials=100, seed=0)
    dt = time.perf_counter() - t
    s = rep.statistics
    ok = rep.passed and dt < 30
    acceptance_line(1, "Sinkhorn contraction ratio <= lam^2 and error <= lam^(2l) D/eps", ok,
                    f"{s['recorded_sweeps']} sweeps, max ratio/lam^2 {s['max_ratio_over_lam2']:.3f}, "
                    f"max err/bound {s['max_err_over_bound']:.3f}, {dt:.1f}s")
    assert ok


def test_02_potential_bounds(acceptance_line):
    rep = analysis.potential_bounds_check(trials=100, seed=0)
    s = rep.statistics
    acceptance_line(2, "anchored potentials |u| <= D + tol, |v| <= 2D + tol", rep.passed,
                    f"violations {s['violations']}, max |u|/D {s['max_u_over_D']:.3f}, "
                    f"max |v|/2D {s['max_v_over_2D']:.3f}")
    assert rep.passed


def test_03_tv_lipschitz(acceptance_line):
    t = time.perf_counter()
    rep = analysis.lipschitz_tv_check(trials=200, seed=0)
    dt = time.perf_counter() - t
    s = rep.statistics
    ok = rep.passed and dt < 60 and math.exp(3 * s["D"] / s["eps"]) <= 1e3 * (1 + 1e-12)
    acceptance_line(3, "TV-Lipschitz bound on potentials", ok,
                    f"violations {s['violations']}, max ratio {s['max_ratio']:.2e}, {dt:.1f}s")
    assert ok


def _grid_optimum(problem, scfg, grid):
    """Best B over one-atom and two-atom measures supported on ``grid``."""
    cached = self_terms(problem, scfg)
    best = min(objective(dirac(x), problem, scfg, cached) for x in grid)
    for i in range(len(grid)):
        for j in range(i + 1, len(grid)):
            f = lambda s: objective(new_measure(grid[[i, j]], [s, 1 - s]), problem, scfg, cached)
            r = minimize_scalar(f, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-6})
            best = min(best, r.fun)
    return best


def test_04_fw_finite_rate(acceptance_line):
    t = time.perf_counter()
    g = np.linspace(0.0, 0.2, 5)
    grid = np.array([(x, y) for y in g for x in g])
    D = float(((grid[:, None] - grid[None]) ** 2).sum(-1).max())
    eps = 0.1
    const = 48 * eps * math.exp(3 * D / eps)
    b1 = new_measure(grid[[0, 6, 12]], [0.5, 0.3, 0.2])
    b2 = new_measure(grid[[4, 18, 22, 24]], [0.1, 0.4, 0.3, 0.2])
    problem = BarycenterProblem([b1, b2], [0.4, 0.6])
    scfg = SinkhornConfig(eps, tolerance=1e-11)
    fcfg = FWConfig(iterations=100, minimize=GridMinimize(candidates=grid), objective_every=1)
    st = barycenter(problem, scfg, fcfg)
    b_star = _grid_optimum(problem, scfg, grid)
    excess = np.asarray(st.objective_trace) - b_star
    bounds = np.array([rate_bound(eps, D, k) for k in range(len(excess))])
    dt = time.perf_counter() - t
    ok = bool(np.all(excess <= bounds)) and const <= 100 and dt < 120
    acceptance_line(4, "FW excess B(a_k) - B* <= 48 eps e^(3D/eps)/(k+2), k <= 100", ok,
                    f"constant {const:.1f}, max excess/bound {np.max(excess / bounds):.2e}, "
                    f"final excess {excess[-1]:.2e}, {dt:.1f}s")
    assert ok


def test_05_two_dirac_barycenter(acceptance_line):
    problem = BarycenterProblem([dirac((0, 0)), dirac((1, 0))], [0.5, 0.5])
    st = barycenter(problem, SinkhornConfig(0.1), FWConfig(iterations=200))
    err = float(np.linalg.norm(st.barycenter.mean() - [0.5, 0.0]))
    ok = err <= 0.05
    acceptance_line(5, "two-Dirac barycenter mean near (0.5, 0)", ok, f"distance {err:.2e}")
    assert ok


def _gaussian_inputs():
    rng = np.random.default_rng(1)
    means = rng.random((3, 2))
    covs = []
    for _ in range(3):
        ev = rng.uniform(0.01, 0.05, 2)
        th = rng.uniform(0, np.pi)
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        covs.append(R @ np.diag(ev) @ R.T)
    samples = [sample_empirical(Gaussian(m, c), 200, (7, i)) for i, (m, c) in enumerate(zip(means, covs))]
    return means, covs, samples


@pytest.mark.slow
def test_06_gaussian_barycenter(acceptance_line):
    means, covs, samples = _gaussian_inputs()
    np.testing.assert_array_equal(means, GAUSS_MEANS)
    t = time.perf_counter()
    st = barycenter(BarycenterProblem(samples), SinkhornConfig(0.01), FWConfig(iterations=300))
    dt = time.perf_counter() - t
    b = st.barycenter
    mean_err = float(np.linalg.norm(b.mean() - means.mean(axis=0)))
    cov_err = float(np.linalg.norm(b.covariance() - GAUSS_W2_COV) / np.linalg.norm(GAUSS_W2_COV))
    ok = mean_err <= 0.1 and cov_err <= 0.25 and dt < 300
    acceptance_line(6, "Gaussian barycenter mean and covariance", ok,
                    f"mean err {mean_err:.4f}, cov rel err {cov_err:.3f}, {b.n} atoms, {dt:.1f}s")
    assert ok


@pytest.mark.slow
def test_07_mmd_concentration(acceptance_line):
    rep = analysis.mmd_concentration_experiment(n_list=(25, 100, 400), trials=50, tau=0.05, seed=0)
    per = rep.statistics["per_n"]
    detail = ", ".join(f"n={p['n']}: q {p['quantile']:.3f} <= {p['bound']:.3f}" for p in per)
    acceptance_line(7, "MMD (1-tau)-quantile <= 4 log(3/tau)/sqrt(n)", rep.passed, detail)
    assert rep.passed


def test_08_sample_complexity(acceptance_line):
    fit, rep = analysis.sample_complexity_experiment(n_list=(16, 64, 256, 1024), trials=30, seed=0)
    ok = fit.fitted_slope <= -0.35
    acceptance_line(8, "log-log slope of median |u - u_n| <= -0.35", ok, f"slope {fit.fitted_slope:.3f}")
    assert ok


def two_blob_image():
    i, j = np.mgrid[0:32, 0:32]
    img = np.exp(-((i - 10) ** 2 + (j - 10) ** 2) / 18) + 0.7 * np.exp(-((i - 22) ** 2 + (j - 20) ** 2) / 30)
    img[img < 0.05] = 0
    return img


@pytest.mark.slow
def test_09_compression(acceptance_line):
    beta = image_to_measure(two_blob_image(), 1 / 32)
    K = 500
    st = compress(beta, K, SinkhornConfig(0.02), FWConfig(objective_every=K // 2))
    s_half, s_full = st.objective_trace[K // 2], st.objective_trace[K]
    ok = s_full < s_half and st.barycenter.n < 500
    acceptance_line(9, "compression: S(a_K, b) < S(a_K/2, b), consolidated support < 500", ok,
                    f"S {s_half:.3e} -> {s_full:.3e}, {st.barycenter.n} atoms from {beta.n} pixels")
    assert ok


def test_10_oracle_equivalences(acceptance_line):
    rng = np.random.default_rng(2024)
    # grid-mode minimize against scalar enumeration
    grid_ok = True
    for _ in range(50):
        terms = []
        for coef in (0.5, 0.5, -1.0):
            Y = rng.random((5, 2))
            terms.append((coef, potential_extend(Y, rng.dirichlet(np.ones(5)), rng.standard_normal(5) * 0.1, 0.1)))
        phi = PotentialCombination(terms)
        cands = rng.random((int(rng.integers(2, 30)), 2))
        vals = [float(phi(c)) for c in cands]
        best = min(range(len(cands)), key=vals.__getitem__)
        got = minimize_phi(phi, GridMinimize(), Domain([0, 0], [1, 1]), candidates=cands)
        grid_ok &= bool(np.array_equal(got, cands[best]))
    # 2x2 potentials against the long-run multiplicative oracle
    a = new_measure([[0.0, 0.0], [1.0, 0.5]], [0.3, 0.7])
    b = new_measure([[0.2, 0.1], [0.9, 0.8]], [0.6, 0.4])
    res = sinkhorn_knopp(a, b, SinkhornConfig(0.5, tolerance=1e-13))
    pot_err = max(np.abs(res.u_values - ORACLE_U).max(), np.abs(res.v_values - ORACLE_V).max())
    # gradients against central differences
    worst = 0.0
    for _ in range(5):
        Y = rng.random((8, 2))
        f = potential_extend(Y, rng.dirichlet(np.ones(8)), rng.standard_normal(8) * 0.1, 0.1)
        for x in rng.random((10, 2)):
            h = 1e-6
            fd = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(2)])
            worst = max(worst, np.linalg.norm(f.gradient(x) - fd) / max(np.linalg.norm(fd), 1e-3))
    ok = grid_ok and pot_err <= 1e-8 and worst <= 1e-5
    acceptance_line(10, "oracle equivalences (grid argmin, 2x2 potentials, gradients)", ok,
                    f"grid {'ok' if grid_ok else 'mismatch'}, potential err {pot_err:.1e}, "
                    f"gradient rel err {worst:.1e}")
    assert ok


def _tree_equal(d1, d2):
    names1, names2 = sorted(os.listdir(d1)), sorted(os.listdir(d2))
    if names1 != names2:
        return False
    _, mismatch, errors = filecmp.cmpfiles(d1, d2, names1, shallow=False)
    return not mismatch and not errors


def test_11_cli_determinism(acceptance_line, tmp_path):
    rng = np.random.default_rng(5)
    inp = tmp_path / "in"
    inp.mkdir()
    paths = []
    for i in range(4):
        p = inp / f"m{i}.json"
        write_measure(str(p), new_measure(rng.random((6, 2)) * 0.3 + (i % 2)))
        paths.append(str(p))
    write_pgm(str(inp / "img.pgm"), two_blob_image()[::2, ::2] * 255)
    (inp / "g.json").write_text(json.dumps({"vertices": 4, "edges": [[0, 2, 1.0], [1, 2, 2.0], [2, 3, 1.0]],
                                            "known": {"0": "m0.json", "1": "m1.json"}, "unknown": [2, 3]}))
    common = ["--epsilon", "0.05", "--seed", "3"]
    commands = {
        "barycenter": ["barycenter", *paths[:3], "--iters", "15", "--objective-every", "5", *common],
        "compress": ["compress", str(inp / "img.pgm"), "--iters", "20", *common],
        "kmeans": ["kmeans", *paths, "--k", "2", "--iters", "10", *common],
        "propagate": ["propagate", str(inp / "g.json"), "--iters", "10", "--sweeps", "2", *common],
        "bench": ["bench", "--suite", "sinkhorn-rate", "--suite", "potential-bounds", "--suite", "lipschitz-tv",
                  "--suite", "sample-complexity", "--seed", "3"],
        "render": ["render", paths[0], "--resolution", "16x16"],
    }
    same = {}
    for name, argv in commands.items():
        dirs = []
        for run in (1, 2):
            out = tmp_path / f"{name}-{run}"
            code = cli.main(argv + ["--out-dir", str(out)])
            assert code == 0, name
            dirs.append(out)
        same[name] = _tree_equal(*dirs) and len(os.listdir(dirs[0])) > 0
    ok = all(same.values())
    acceptance_line(11, "CLI outputs byte-identical across runs", ok,
                    ", ".join(f"{k} {'same' if v else 'DIFF'}" for k, v in same.items()))
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
