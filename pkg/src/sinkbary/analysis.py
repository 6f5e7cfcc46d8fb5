"""Empirical checks of the convergence, stability and sample-complexity bounds.

Every check returns a :class:`Report` that can be written as a CSV table (one
row per trial or per sweep) plus a JSON summary ``{name, pass, statistics}``.
Trials draw from independent generators seeded by ``(seed, trial index)``, so
each report is reproducible bit-for-bit.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import DimensionMismatch
from .measure import (
    SQEUCLIDEAN,
    CostSpec,
    DiscreteMeasure,
    Domain,
    UniformBox,
    new_measure,
    sample_empirical,
    total_variation,
)
from .sinkhorn import SinkhornConfig, contraction_lambda, hilbert_distance, potential_extend, sinkhorn_knopp


# ----------------------------------------------------------------------------
# kernels and MMD
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelSpec:
    """Gaussian RBF kernel ``exp(-|x - y|^2 / (2 sigma^2))``.

    With ``normalized=False`` the kernel is the Gaussian density with that
    bandwidth (diagonal ``(2 pi sigma^2)^(-d/2)``).
    """

    sigma: float
    kind: str = "gaussian-rbf"
    normalized: bool = True

    def __post_init__(self):
        if self.kind != "gaussian-rbf":
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def scale(self, dim: int) -> float:
        if self.normalized:
            return 1.0
        return (2.0 * math.pi * self.sigma ** 2) ** (-0.5 * dim)

    def __call__(self, X, Y) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        return self.scale(X.shape[1]) * np.exp(-_kernels.sqdist(X, Y) / (2.0 * self.sigma ** 2))


def median_bandwidth(X, max_points: int = 2000) -> float:
    """Median pairwise distance over the first ``max_points`` rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)[:max_points]
    if X.shape[0] < 2:
        return 1.0
    D = np.sqrt(_kernels.sqdist(X, X))
    med = float(np.median(D[np.triu_indices(X.shape[0], 1)]))
    return med if med > 0 else 1.0


def _kernel_sum(X, a, Y, b, kernel: KernelSpec, same: bool) -> float:
    s = kernel.scale(X.shape[1])
    if same:
        return s * _kernels.rbf_self_sum(X, a, kernel.sigma)
    return s * _kernels.rbf_sum(X, Y, a, b, kernel.sigma)


def mmd(alpha: DiscreteMeasure, beta: DiscreteMeasure, kernel: KernelSpec,
        *, self_beta: Optional[float] = None) -> float:
    """Closed-form MMD between two discrete measures.

    ``self_beta`` may carry a precomputed ``sum_ij b_i b_j h(y_i, y_j)`` when
    ``beta`` is a large reference sample reused across calls.
    """
    if alpha.dim != beta.dim:
        raise DimensionMismatch(f"dimension {alpha.dim} vs {beta.dim}")
    aa = _kernel_sum(alpha.points, alpha.weights, None, None, kernel, True)
    bb = self_beta if self_beta is not None else _kernel_sum(beta.points, beta.weights, None, None, kernel, True)
    ab = _kernel_sum(alpha.points, alpha.weights, beta.points, beta.weights, kernel, False)
    return math.sqrt(max(aa - 2.0 * ab + bb, 0.0))


def mmd_concentration_bound(n: int, tau: float) -> float:
    return 4.0 * math.log(3.0 / tau) / math.sqrt(n)


# ----------------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------------

@dataclass
class Report:
    name: str
    passed: bool
    statistics: dict
    rows: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"name": self.name, "pass": bool(self.passed), "statistics": _plain(self.statistics)}

    def write(self, out_dir: str) -> tuple:
        """Write ``<name>.csv`` and ``<name>.json``; returns both paths."""
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, f"{self.name}.csv")
        json_path = os.path.join(out_dir, f"{self.name}.json")
        cols = list(self.rows[0].keys()) if self.rows else []
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in cols])
        with open(json_path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return csv_path, json_path


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


@dataclass(frozen=True)
class RateFit:
    """Least-squares line through ``(log n, log error)``."""

    sample_sizes: tuple
    errors: tuple
    fitted_slope: float
    fitted_intercept: float


def fit_rate(sample_sizes: Sequence[int], errors: Sequence[float]) -> RateFit:
    if len(sample_sizes) != len(errors):
        raise ValueError("sample_sizes and errors must have the same length")
    x = np.log(np.asarray(sample_sizes, dtype=np.float64))
    y = np.log(np.asarray(errors, dtype=np.float64))
    slope, intercept = np.polyfit(x, y, 1)
    return RateFit(tuple(int(n) for n in sample_sizes), tuple(float(e) for e in errors),
                   float(slope), float(intercept))


# ----------------------------------------------------------------------------
# random instances
# ----------------------------------------------------------------------------

def _random_weights(rng, n):
    return rng.dirichlet(np.ones(n))


def random_instance(rng, n_range=(5, 20), ratio_range=(0.5, 3.0), dim: int = 2):
    """Random pair on [0,1]^dim with eps set so that ``D / eps`` falls in ``ratio_range``."""
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    m = int(rng.integers(n_range[0], n_range[1] + 1))
    alpha = new_measure(rng.random((n, dim)), _random_weights(rng, n))
    beta = new_measure(rng.random((m, dim)), _random_weights(rng, m))
    D = float(SQEUCLIDEAN(alpha.points, beta.points).max())
    ratio = float(rng.uniform(*ratio_range))
    return alpha, beta, D / ratio


def _reference(alpha, beta, eps, D):
    # long-run solve used as the fixed point; tolerance near rounding level
    cfg = SinkhornConfig(eps, tolerance=1e-14 * max(1.0, D), max_iterations=100_000)
    return sinkhorn_knopp(alpha, beta, cfg)


def _probe(domain: Domain, rng, n: int, *atoms) -> np.ndarray:
    return np.vstack([domain.uniform(rng, n)] + [np.asarray(a) for a in atoms])


# ----------------------------------------------------------------------------
# Sinkhorn contraction and potential bounds
# ----------------------------------------------------------------------------

def sinkhorn_rate_check(trials: int = 100, seed: int = 0, n_range=(5, 20), ratio_range=(0.5, 3.0),
                        floor: float = 1e-9) -> Report:
    """Per-sweep Hilbert contraction ``d_{l+1} <= lam^2 d_l`` and ``err_l <= lam^{2l} D / eps``.

    Distances are measured in log-scaling units (potentials divided by eps)
    against a long-run fixed point.  Sweeps whose measured quantity is
    below ``floor`` are not recorded: there the reference solution's own
    rounding error dominates the ratio.
    """
    rows = []
    worst_ratio = 0.0
    worst_err = 0.0
    violations = 0
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        alpha, beta, eps = random_instance(rng, n_range, ratio_range)
        ref = _reference(alpha, beta, eps, 0.0)
        D = ref.diameter
        lam = contraction_lambda(D, eps)
        lam2 = lam * lam
        star = ref.u_values / eps
        iterates = [np.zeros(alpha.n)]
        needed = 1 + int(math.ceil(math.log(floor * eps / D) / (2.0 * math.log(lam)))) if lam > 0 else 1
        cfg = SinkhornConfig(eps, tolerance=1e-300, max_iterations=max(1, min(needed, 10_000)))

        def grab(ell, u, v):
            iterates.append(u / eps)

        sinkhorn_knopp(alpha, beta, cfg, callback=grab)
        dists = [hilbert_distance(f, star) for f in iterates]
        for ell in range(len(iterates)):
            err = float(np.max(np.abs(iterates[ell] - star)))
            bound = lam ** (2 * ell) * D / eps
            if bound < floor:
                break
            ratio = float("nan")
            if ell > 0 and dists[ell - 1] > floor:
                ratio = dists[ell] / dists[ell - 1]
            ok_ratio = not (ratio > lam2 + 1e-9)
            ok_err = err <= bound
            if not (ok_ratio and ok_err):
                violations += 1
            if ratio == ratio:
                worst_ratio = max(worst_ratio, ratio / lam2)
            worst_err = max(worst_err, err / bound)
            rows.append({"trial": t, "sweep": ell, "eps": eps, "D": D, "lam": lam, "hilbert": dists[ell],
                         "ratio": ratio, "ratio_bound": lam2, "err": err, "err_bound": bound,
                         "ok": ok_ratio and ok_err})
    stats = {"trials": trials, "recorded_sweeps": len(rows), "violations": violations,
             "max_ratio_over_lam2": worst_ratio, "max_err_over_bound": worst_err, "floor": floor,
             "eps": [r["eps"] for r in rows if r["sweep"] == 0],
             "D": [r["D"] for r in rows if r["sweep"] == 0],
             "lam": [r["lam"] for r in rows if r["sweep"] == 0]}
    return Report("sinkhorn-rate", violations == 0, stats, rows)


def potential_bounds_check(trials: int = 100, seed: int = 0, n_range=(5, 20), ratio_range=(0.5, 3.0),
                           tolerance: float = 1e-9) -> Report:
    """Anchored potentials satisfy ``|u| <= D + tol`` and ``|v| <= 2 D + tol``."""
    rows = []
    violations = 0
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        alpha, beta, eps = random_instance(rng, n_range, ratio_range)
        res = sinkhorn_knopp(alpha, beta, SinkhornConfig(eps, tolerance=tolerance))
        D = res.diameter
        nu = float(np.max(np.abs(res.u_values)))
        nv = float(np.max(np.abs(res.v_values)))
        ok = nu <= D + tolerance and nv <= 2 * D + tolerance
        violations += not ok
        rows.append({"trial": t, "eps": eps, "D": D, "lam": res.lam, "sup_u": nu, "sup_v": nv,
                     "u_over_D": nu / D, "v_over_2D": nv / (2 * D), "ok": ok})
    stats = {"trials": trials, "violations": violations, "tolerance": tolerance,
             "max_u_over_D": max(r["u_over_D"] for r in rows),
             "max_v_over_2D": max(r["v_over_2D"] for r in rows),
             "eps": [r["eps"] for r in rows], "D": [r["D"] for r in rows],
             "lam": [r["lam"] for r in rows]}
    return Report("potential-bounds", violations == 0, stats, rows)


# ----------------------------------------------------------------------------
# stability of the potentials
# ----------------------------------------------------------------------------

def _u_on_probe(alpha, beta, cfg, probe):
    res = sinkhorn_knopp(alpha, beta, cfg)
    return potential_extend(beta.points, beta.weights, res.v_values, cfg.epsilon).values(probe)


def _perturb(rng, w):
    t = rng.uniform(0.0, 1.0) ** 2
    return (1.0 - t) * w + t * _random_weights(rng, w.size)


def lipschitz_tv_check(trials: int = 200, shared_support_size: int = 10, seed: int = 0,
                       exp_cap: float = 1e3, dim: int = 2, n_probe: int = 200,
                       tolerance: float = 1e-12) -> Report:
    """``|u - u'|_inf <= 2 eps e^{3D/eps} (TV(a, a') + TV(b, b'))`` on shared supports.

    Supports live in the unit box, D is the box's cost diameter and eps is
    chosen so that ``e^{3D/eps} = exp_cap``.  The sup norm runs over a probe
    set of uniform points plus all atoms.
    """
    if shared_support_size < 2:
        raise ValueError("shared_support_size must be >= 2")
    domain = Domain(np.zeros(dim), np.ones(dim))
    D = domain.cost_diameter(SQEUCLIDEAN)
    eps = 3.0 * D / math.log(exp_cap)
    const = 2.0 * eps * math.exp(3.0 * D / eps)
    cfg = SinkhornConfig(eps, tolerance=tolerance, max_iterations=100_000)
    rows = []
    violations = 0
    skipped = 0
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        X = rng.random((shared_support_size, dim))
        Y = rng.random((shared_support_size, dim))
        a = _random_weights(rng, shared_support_size)
        b = _random_weights(rng, shared_support_size)
        alpha, beta = new_measure(X, a), new_measure(Y, b)
        alpha2, beta2 = new_measure(X, _perturb(rng, a)), new_measure(Y, _perturb(rng, b))
        probe = _probe(domain, rng, n_probe, X, Y)
        lhs = float(np.max(np.abs(_u_on_probe(alpha, beta, cfg, probe) - _u_on_probe(alpha2, beta2, cfg, probe))))
        tv = total_variation(alpha, alpha2) + total_variation(beta, beta2)
        rhs = const * tv
        if rhs == 0.0:
            skipped += 1
            continue
        ok = lhs <= rhs
        violations += not ok
        rows.append({"trial": t, "lhs": lhs, "tv_sum": tv, "rhs": rhs, "ratio": lhs / rhs, "ok": ok})
    stats = {"trials": trials, "skipped": skipped, "violations": violations, "eps": eps, "D": D,
             "lam": contraction_lambda(D, eps), "constant": const,
             "max_ratio": max((r["ratio"] for r in rows), default=0.0)}
    return Report("lipschitz-tv", violations == 0, stats, rows)


def mmd_lipschitz_check(trials: int = 200, seed: int = 0, eps: float = 0.5, support_size: int = 10,
                        kernel: Optional[KernelSpec] = None, dim: int = 2, n_probe: int = 200,
                        tolerance: float = 1e-12) -> Report:
    """Smallest ``C`` with ``|u - u'|_inf <= C (MMD(a, a') + MMD(b, b'))`` over the trials.

    The theoretical constant is not computable, so the check only reports the
    fitted value; it passes when that value is finite.
    """
    domain = Domain(np.zeros(dim), np.ones(dim))
    kernel = kernel or KernelSpec(sigma=math.sqrt(dim) / 2)
    cfg = SinkhornConfig(eps, tolerance=tolerance, max_iterations=100_000)
    rows = []
    for t in range(trials):
        rng = np.random.default_rng((seed, t))
        alpha = new_measure(rng.random((support_size, dim)), _random_weights(rng, support_size))
        beta = new_measure(rng.random((support_size, dim)), _random_weights(rng, support_size))
        alpha2 = new_measure(rng.random((support_size, dim)), _random_weights(rng, support_size))
        beta2 = new_measure(rng.random((support_size, dim)), _random_weights(rng, support_size))
        # anchor both problems at the same point so the potentials are comparable
        x0 = rng.random((1, dim))
        alpha = new_measure(np.vstack([x0, alpha.points]), np.append(0.0, alpha.weights))
        alpha2 = new_measure(np.vstack([x0, alpha2.points]), np.append(0.0, alpha2.weights))
        probe = _probe(domain, rng, n_probe, alpha.points, alpha2.points)
        lhs = float(np.max(np.abs(_u_on_probe(alpha, beta, cfg, probe) - _u_on_probe(alpha2, beta2, cfg, probe))))
        dist = mmd(alpha, alpha2, kernel) + mmd(beta, beta2, kernel)
        if dist == 0.0:
            continue
        rows.append({"trial": t, "lhs": lhs, "mmd_sum": dist, "ratio": lhs / dist})
    ratios = [r["ratio"] for r in rows]
    C = max(ratios, default=0.0)
    D = domain.cost_diameter(SQEUCLIDEAN)
    # the max is an extreme-value statistic; the 95% quantile is the stable summary
    stats = {"trials": trials, "fitted_constant": C,
             "quantile_95": float(np.quantile(ratios, 0.95)) if ratios else 0.0, "eps": eps, "D": D, "lam": contraction_lambda(D, eps),
             "sigma": kernel.sigma, "exp_3D_over_eps": math.exp(3 * D / eps)}
    return Report("mmd-lipschitz", bool(math.isfinite(C)), stats, rows)


# ----------------------------------------------------------------------------
# concentration and sample complexity
# ----------------------------------------------------------------------------

def _default_sampler(dim=2):
    return UniformBox(np.zeros(dim), np.ones(dim))


def mmd_concentration_experiment(sampler=None, n_list: Sequence[int] = (25, 100, 400), trials: int = 50,
                                 tau: float = 0.05, kernel: Optional[KernelSpec] = None, seed: int = 0,
                                 n_ref: Optional[int] = None) -> Report:
    """Empirical ``(1 - tau)``-quantile of ``MMD(beta_n, beta_ref)`` against ``4 log(3/tau) / sqrt(n)``.

    The reference is an empirical measure of ``n_ref >= 100 max(n)`` points.
    The kernel bandwidth defaults to the median pairwise distance of the
    reference sample.
    """
    if trials < 20:
        raise ValueError("trials must be >= 20")
    sampler = sampler or _default_sampler()
    n_ref = int(n_ref or 100 * max(n_list))
    ref = sample_empirical(sampler, n_ref, (seed, 1))
    kernel = kernel or KernelSpec(sigma=median_bandwidth(ref.points))
    ref_self = _kernel_sum(ref.points, ref.weights, None, None, kernel, True)
    rows = []
    per_n = []
    ok_all = True
    for n in n_list:
        vals = []
        for t in range(trials):
            bn = sample_empirical(sampler, int(n), (seed, 2, int(n), t))
            val = mmd(bn, ref, kernel, self_beta=ref_self)
            vals.append(val)
            rows.append({"n": int(n), "trial": t, "mmd": val})
        q = float(np.quantile(vals, 1.0 - tau))
        bound = mmd_concentration_bound(int(n), tau)
        ok = q <= bound
        ok_all &= ok
        per_n.append({"n": int(n), "quantile": q, "median": float(np.median(vals)), "bound": bound, "ok": ok})
    # no transport problem is solved here; the keys are kept for a uniform report layout
    stats = {"tau": tau, "trials": trials, "n_ref": n_ref, "sigma": kernel.sigma, "per_n": per_n,
             "eps": None, "D": None, "lam": None}
    return Report("mmd-concentration", ok_all, stats, rows)


def sample_complexity_experiment(beta_sampler=None, alpha: Optional[DiscreteMeasure] = None,
                                 n_list: Sequence[int] = (16, 64, 256, 1024), trials: int = 30,
                                 scfg: Optional[SinkhornConfig] = None, seed: int = 0,
                                 n_ref: int = 20_000, n_probe: int = 200, max_slope: float = -0.35):
    """Median ``|u - u_n|_inf`` on a probe set as ``beta`` is replaced by ``n`` samples.

    ``u`` is the potential of ``(alpha, beta_ref)`` with ``beta_ref`` an
    ``n_ref``-point sample treated as the truth; ``u_n`` that of
    ``(alpha, beta_n)``.  Returns ``(RateFit, Report)``; the report passes
    when the fitted log-log slope is at most ``max_slope``.
    """
    beta_sampler = beta_sampler or _default_sampler()
    scfg = scfg or SinkhornConfig(0.5)
    ref_cfg = SinkhornConfig(scfg.epsilon, tolerance=1e-9, max_iterations=scfg.max_iterations)
    if alpha is None:
        rng = np.random.default_rng((seed, 3))
        alpha = new_measure(rng.random((20, 2)))
    ref = sample_empirical(beta_sampler, n_ref, (seed, 1))
    res = sinkhorn_knopp(alpha, ref, ref_cfg)
    u_ref = potential_extend(ref.points, ref.weights, res.v_values, scfg.epsilon)
    domain = Domain.bounding(alpha.points, ref.points)
    probe = _probe(domain, np.random.default_rng((seed, 4)), n_probe, alpha.points)
    truth = u_ref.values(probe)
    rows = []
    medians = []
    for n in n_list:
        errs = []
        for t in range(trials):
            bn = sample_empirical(beta_sampler, int(n), (seed, 2, int(n), t))
            errs.append(float(np.max(np.abs(_u_on_probe(alpha, bn, scfg, probe) - truth))))
            rows.append({"n": int(n), "trial": t, "err": errs[-1]})
        medians.append(float(np.median(errs)))
    fit = fit_rate(n_list, medians)
    D = res.diameter
    stats = {"n_list": [int(n) for n in n_list], "medians": medians, "slope": fit.fitted_slope,
             "intercept": fit.fitted_intercept, "max_slope": max_slope, "n_ref": n_ref,
             "eps": scfg.epsilon, "D": D, "lam": contraction_lambda(D, scfg.epsilon)}
    return fit, Report("sample-complexity", fit.fitted_slope <= max_slope, stats, rows)


SUITES = ("sinkhorn-rate", "potential-bounds", "lipschitz-tv", "mmd-concentration", "sample-complexity")


def run_suite(name: str, seed: int = 0) -> Report:
    """Run one named suite at its default size."""
    if name == "sinkhorn-rate":
        return sinkhorn_rate_check(seed=seed)
    if name == "potential-bounds":
        return potential_bounds_check(seed=seed)
    if name == "lipschitz-tv":
        return lipschitz_tv_check(seed=seed)
    if name == "mmd-concentration":
        return mmd_concentration_experiment(seed=seed)
    if name == "sample-complexity":
        return sample_complexity_experiment(seed=seed)[1]
    if name == "mmd-lipschitz":
        return mmd_lipschitz_check(seed=seed)
    raise ValueError(f"unknown suite {name!r}")
