"""Free-support Frank-Wolfe for Sinkhorn barycenters.

Each step linearizes ``B(alpha) = sum_j w_j S(alpha, beta_j)`` at the
current iterate, minimizes the resulting potential
``phi = sum_j w_j u_j - p`` over the domain (the minimizer over measures is a
Dirac), and moves toward that Dirac with step ``2 / (k + 2)``.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, InnerMinimizationFailed, WeightSumOutOfTolerance
from .measure import SQEUCLIDEAN, CostSpec, DiscreteMeasure, Domain, consolidate, dirac
from .sinkhorn import (
    PotentialFn,
    SinkhornConfig,
    ot_value,
    potential_extend,
    sinkhorn_knopp,
    sinkhorn_symmetric,
)


@dataclass(frozen=True, eq=False)
class BarycenterProblem:
    measures: Sequence[DiscreteMeasure]
    mix_weights: Optional[Sequence[float]] = None
    cost: CostSpec = SQEUCLIDEAN

    def __post_init__(self):
        ms = tuple(self.measures)
        if len(ms) < 1:
            raise ValueError("need at least one input measure")
        dims = {m.dim for m in ms}
        if len(dims) != 1:
            raise DimensionMismatch(f"input measures have dimensions {sorted(dims)}")
        if self.mix_weights is None:
            w = np.full(len(ms), 1.0 / len(ms))
        else:
            w = np.asarray(self.mix_weights, dtype=np.float64).reshape(-1)
        if w.size != len(ms):
            raise DimensionMismatch(f"{len(ms)} measures but {w.size} mixing weights")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise WeightSumOutOfTolerance(f"mixing weights must be a probability vector, sum={float(w.sum())!r}")
        w.setflags(write=False)
        object.__setattr__(self, "measures", ms)
        object.__setattr__(self, "mix_weights", w)

    @property
    def m(self) -> int:
        return len(self.measures)

    @property
    def dim(self) -> int:
        return self.measures[0].dim

    def all_points(self) -> np.ndarray:
        return np.vstack([b.points for b in self.measures])

    def support_union(self) -> np.ndarray:
        """Distinct atoms of all inputs, in order of first appearance."""
        P = self.all_points()
        _, first = np.unique(P, axis=0, return_index=True)
        return P[np.sort(first)]

    def default_x0(self) -> np.ndarray:
        return sum(w * b.mean() for w, b in zip(self.mix_weights, self.measures))


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class HarmonicSchedule:
    """``Delta_1k = Delta_2k = c0 / (k + 2)``; ``c0=None`` means ``c0 = eps``."""

    c0: Optional[float] = None

    def __call__(self, k: int, eps: float = 1.0):
        c0 = eps if self.c0 is None else self.c0
        d = c0 / (k + 2)
        return d, d


def schedule_is_admissible(schedule, eps: float = 1.0, n: int = 10_000) -> bool:
    """Positive precisions with ``Delta_k * (k + 2)`` nondecreasing on the first ``n`` indices."""
    prev = (-np.inf, -np.inf)
    for k in range(n):
        d1, d2 = schedule(k, eps)
        if d1 <= 0 or d2 <= 0:
            return False
        cur = (d1 * (k + 2), d2 * (k + 2))
        # relative slack for rounding in c0 / (k + 2) * (k + 2)
        if cur[0] < prev[0] * (1 - 1e-12) or cur[1] < prev[1] * (1 - 1e-12):
            return False
        prev = cur
    return True


@dataclass(frozen=True)
class GridMinimize:
    """Exact argmin over a finite candidate set.

    Candidates are the distinct atoms of the inputs (unless
    ``include_supports`` is False) followed by the rows of ``candidates``.
    """

    candidates: Optional[np.ndarray] = None
    include_supports: bool = True


@dataclass(frozen=True)
class ContinuousMinimize:
    """Multistart projected gradient descent with Armijo backtracking."""

    n_starts: int = 8
    pool_size: int = 256
    n_random: int = 64
    descent_iters: int = 60
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 40
    step_tol: float = 1e-12


@dataclass(frozen=True)
class FWConfig:
    iterations: int = 100
    minimize: object = field(default_factory=ContinuousMinimize)
    delta_schedule: object = field(default_factory=HarmonicSchedule)
    x0: Optional[Sequence[float]] = None
    merge_radius: float = 0.0
    objective_every: int = 0
    seed: int = 0
    warm_start: bool = True
    workers: int = 1
    reuse_atoms: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.merge_radius < 0:
            raise ValueError("merge_radius must be >= 0")


@dataclass(frozen=True, eq=False)
class FWState:
    """Frank-Wolfe iterate and traces.

    ``objective_trace[k]`` is ``B(alpha_k)`` or NaN when not evaluated;
    ``gap_trace[k]`` and ``selected_points[k]`` belong to the step from
    ``alpha_k`` to ``alpha_{k+1}``.  ``barycenter`` is the consolidated final
    iterate, set by :func:`barycenter` only.
    """

    iterate: DiscreteMeasure
    k: int = 0
    objective_trace: tuple = ()
    gap_trace: tuple = ()
    selected_points: tuple = ()
    sinkhorn_iters: tuple = ()
    all_converged: bool = True
    barycenter: Optional[DiscreteMeasure] = None
    warm: Optional[tuple] = None


# ----------------------------------------------------------------------------
# linear minimization
# ----------------------------------------------------------------------------

class PotentialCombination:
    """``x -> sum_t coef_t * f_t(x)`` for potentials ``f_t``."""

    def __init__(self, terms):
        self.terms = [(float(c), f) for c, f in terms]

    def values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.zeros(X.shape[0])
        for c, f in self.terms:
            out += c * f.values(X)
        return out

    def values_and_gradients(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        vals = np.zeros(X.shape[0])
        grads = np.zeros_like(X)
        for c, f in self.terms:
            v, g = f.values_and_gradients(X)
            vals += c * v
            grads += c * g
        return vals, grads

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = self.values(x)
        return float(out[0]) if x.ndim == 1 else out

    def shifted(self, const: float) -> "PotentialCombination":
        """Same combination plus a constant (used to check argmin invariance)."""
        shift = _Constant(const)
        return PotentialCombination(self.terms + [(1.0, shift)])


class _Constant:
    def __init__(self, value):
        self.value = float(value)

    def values(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.value)

    def values_and_gradients(self, X):
        X = np.atleast_2d(X)
        return self.values(X), np.zeros_like(X, dtype=np.float64)


def _descend(phi, X0, f0, domain: Domain, spec: ContinuousMinimize):
    """Projected gradient descent from each row of ``X0``, vectorized over starts."""
    X = X0.copy()
    f, g = phi.values_and_gradients(X)
    f = np.where(np.isfinite(f), f, np.inf)
    step = np.ones(X.shape[0])
    active = np.isfinite(f)
    for _ in range(spec.descent_iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        t = step[idx].copy()
        pending = np.ones(idx.size, dtype=bool)
        X_new = X[idx].copy()
        f_new = f[idx].copy()
        for _ in range(spec.max_backtracks):
            if not pending.any():
                break
            p = np.flatnonzero(pending)
            trial = domain.clip(X[idx[p]] - t[p, None] * g[idx[p]])
            ft = phi.values(trial)
            decrease = np.einsum("ij,ij->i", g[idx[p]], trial - X[idx[p]])
            ok = np.isfinite(ft) & (ft <= f[idx[p]] + spec.armijo * decrease)
            acc = p[ok]
            X_new[acc] = trial[ok]
            f_new[acc] = ft[ok]
            pending[acc] = False
            t[p[~ok]] *= spec.shrink
        moved = np.max(np.abs(X_new - X[idx]), axis=1) if X.shape[1] else np.zeros(idx.size)
        stalled = pending | (moved <= spec.step_tol)
        X[idx] = X_new
        f[idx] = f_new
        # grow the step again after an accepted move
        step[idx] = np.where(pending, t, np.minimum(t * 2.0, 1e6))
        active[idx[stalled]] = False
        live = idx[~stalled]
        if live.size:
            fv, gv = phi.values_and_gradients(X[live])
            f[live] = fv
            g[live] = gv
    return X, f


def minimize_phi(phi, spec, domain: Domain, seed=0, candidates: Optional[np.ndarray] = None) -> np.ndarray:
    """Approximate argmin of ``phi`` over ``domain``.

    Grid mode returns the exact argmin over ``candidates`` (lowest index on
    ties).  Continuous mode scores a pool made of a random subsample of
    ``candidates`` plus uniform draws in the domain, descends from the
    ``n_starts`` best pool points, and returns the best point seen.
    """
    if isinstance(spec, GridMinimize):
        if candidates is None or len(candidates) == 0:
            raise InnerMinimizationFailed("grid mode needs a nonempty candidate set")
        vals = phi.values(candidates)
        if not np.any(np.isfinite(vals)):
            raise InnerMinimizationFailed("phi is not finite on any candidate")
        vals = np.where(np.isfinite(vals), vals, np.inf)
        return np.array(candidates[int(np.argmin(vals))], dtype=np.float64)

    if not isinstance(spec, ContinuousMinimize):
        raise TypeError(f"unknown minimize mode {spec!r}")
    rng = np.random.default_rng(seed)
    parts = []
    if candidates is not None and len(candidates):
        if len(candidates) > spec.pool_size:
            pick = np.sort(rng.choice(len(candidates), size=spec.pool_size, replace=False))
            parts.append(candidates[pick])
        else:
            parts.append(np.asarray(candidates, dtype=np.float64))
    if spec.n_random > 0:
        parts.append(domain.uniform(rng, spec.n_random))
    pool = np.vstack(parts)
    pv = phi.values(pool)
    pv = np.where(np.isfinite(pv), pv, np.inf)
    if not np.any(np.isfinite(pv)):
        raise InnerMinimizationFailed("phi is not finite anywhere in the start pool")
    order = np.argsort(pv, kind="stable")[: spec.n_starts]
    X, f = _descend(phi, pool[order], pv[order], domain, spec)
    best_desc = int(np.argmin(f))
    best_pool = int(order[0])
    if f[best_desc] <= pv[best_pool]:
        return X[best_desc]
    return pool[best_pool].copy()


# ----------------------------------------------------------------------------
# objective and steps
# ----------------------------------------------------------------------------

def self_terms(problem: BarycenterProblem, scfg: SinkhornConfig) -> np.ndarray:
    """``OT(beta_j, beta_j)`` for every input; constant along the iterations."""
    out = []
    for b in problem.measures:
        res = sinkhorn_symmetric(b, scfg, problem.cost)
        out.append(ot_value(res, b, b))
    return np.array(out)


def objective(alpha: DiscreteMeasure, problem: BarycenterProblem, scfg: SinkhornConfig,
              cached_self: Optional[np.ndarray] = None) -> float:
    """``B(alpha) = sum_j w_j S(alpha, beta_j)``."""
    if cached_self is None:
        cached_self = self_terms(problem, scfg)
    a = alpha.positive()
    res_aa = sinkhorn_symmetric(a, scfg, problem.cost)
    aa = ot_value(res_aa, a, a)
    total = 0.0
    for w, b, bb in zip(problem.mix_weights, problem.measures, cached_self):
        res = sinkhorn_knopp(a, b, scfg, problem.cost)
        total += w * (ot_value(res, a, b) - 0.5 * aa - 0.5 * bb)
    return float(total)


def _solve_potentials(alpha_red, problem, scfg, tol, warm, workers):
    """(p, [u_j], iterations, converged) on the reduced support of the iterate."""
    cost = problem.cost
    X = alpha_red.points
    jobs = [(None, None)]
    for j, b in enumerate(problem.measures):
        jobs.append((b, None if warm is None else warm[1][j]))

    def run(job):
        target, prev = job
        if target is None:
            return sinkhorn_symmetric(alpha_red, scfg, cost, tolerance=tol)
        init = None if prev is None else prev.values(X)
        return sinkhorn_knopp(alpha_red, target, scfg, cost, init_u=init, tolerance=tol)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    eps = scfg.epsilon
    p = potential_extend(X, alpha_red.weights, results[0].v_values, eps, cost)
    us = [potential_extend(b.points, b.weights, r.v_values, eps, cost)
          for b, r in zip(problem.measures, results[1:])]
    iters = sum(r.iterations_used for r in results)
    conv = all(r.converged for r in results)
    return p, us, iters, conv


def _reduced(alpha: DiscreteMeasure) -> DiscreteMeasure:
    # same measure with zero-weight and duplicate atoms folded away
    return consolidate(alpha.positive(), 0.0)


def build_phi(state: FWState, problem: BarycenterProblem, scfg: SinkhornConfig, fcfg: FWConfig):
    """Potentials of the current iterate: ``(phi, p, [u_j], sinkhorn_iters, converged)``."""
    d1, _ = fcfg.delta_schedule(state.k, scfg.epsilon)
    # a-priori rule lambda^{2l} D/eps <= d1/8 is in log-scaling units;
    # the sup-norm change test runs on potentials, hence the factor eps
    tol = scfg.epsilon * d1 / 8.0
    warm = state.warm if fcfg.warm_start else None
    p, us, iters, conv = _solve_potentials(_reduced(state.iterate), problem, scfg, tol, warm, fcfg.workers)
    phi = PotentialCombination([(w, u) for w, u in zip(problem.mix_weights, us)] + [(-1.0, p)])
    return phi, p, us, iters, conv


def fw_step(state: FWState, problem: BarycenterProblem, scfg: SinkhornConfig, fcfg: FWConfig,
            domain: Optional[Domain] = None, candidates: Optional[np.ndarray] = None) -> FWState:
    """One Frank-Wolfe iteration ``alpha_{k+1} = k/(k+2) alpha_k + 2/(k+2) delta_x``."""
    if domain is None:
        domain = Domain.bounding(problem.all_points(), state.iterate.points, pad=fcfg.merge_radius)
    if candidates is None:
        candidates = default_candidates(problem, fcfg)
    k = state.k
    phi, p, us, iters, conv = build_phi(state, problem, scfg, fcfg)
    x_new = minimize_phi(phi, fcfg.minimize, domain, seed=(fcfg.seed, k), candidates=candidates)
    alpha = state.iterate
    if fcfg.reuse_atoms:
        # an existing atom within d2/2 of the found value is an admissible
        # inexact minimizer and keeps the support from growing
        _, d2 = fcfg.delta_schedule(k, scfg.epsilon)
        atoms = _reduced(alpha).points
        av = phi.values(atoms)
        j = int(np.argmin(av))
        if av[j] <= phi(x_new) + 0.5 * d2:
            x_new = atoms[j].copy()
    gap = alpha.pair(phi.values) - phi(x_new)
    weights = np.append(alpha.weights * k, 2.0) / (k + 2)
    points = np.vstack([alpha.points, x_new[None, :]])
    nxt = DiscreteMeasure(points, weights)
    return dataclasses.replace(
        state,
        iterate=nxt,
        k=k + 1,
        gap_trace=state.gap_trace + (float(gap),),
        selected_points=state.selected_points + (tuple(float(c) for c in x_new),),
        sinkhorn_iters=state.sinkhorn_iters + (int(iters),),
        all_converged=state.all_converged and conv,
        warm=(p, us),
    )


def default_candidates(problem: BarycenterProblem, fcfg: FWConfig) -> np.ndarray:
    spec = fcfg.minimize
    parts = []
    if not isinstance(spec, GridMinimize) or spec.include_supports:
        parts.append(problem.support_union())
    if isinstance(spec, GridMinimize) and spec.candidates is not None:
        parts.append(np.atleast_2d(np.asarray(spec.candidates, dtype=np.float64)))
    if not parts:
        raise InnerMinimizationFailed("empty candidate set")
    return np.vstack(parts)


def initial_state(problem: BarycenterProblem, fcfg: FWConfig) -> FWState:
    if fcfg.x0 is not None:
        x0 = np.asarray(fcfg.x0, dtype=np.float64).reshape(-1)
    elif problem.cost.kind == "user-matrix":
        x0 = problem.support_union()[0]
    else:
        x0 = problem.default_x0()
    if x0.size != problem.dim:
        raise DimensionMismatch(f"x0 has dimension {x0.size}, problem has {problem.dim}")
    return FWState(iterate=dirac(x0))


def barycenter(problem: BarycenterProblem, scfg: SinkhornConfig, fcfg: FWConfig,
               state: Optional[FWState] = None) -> FWState:
    """Run ``fcfg.iterations`` Frank-Wolfe steps from ``delta(x0)``.

    The objective is evaluated every ``objective_every`` iterations (never if
    0) and always for the last iterate when evaluation is enabled.
    """
    if state is None:
        state = initial_state(problem, fcfg)
    domain = Domain.bounding(problem.all_points(), state.iterate.points, pad=fcfg.merge_radius)
    candidates = default_candidates(problem, fcfg)
    every = fcfg.objective_every
    cached = self_terms(problem, scfg) if every else None
    objs = list(state.objective_trace)

    def record(st):
        if len(objs) > st.k:
            return
        while len(objs) < st.k:
            objs.append(float("nan"))
        if every and (st.k % every == 0 or st.k == end):
            objs.append(objective(st.iterate, problem, scfg, cached))
        else:
            objs.append(float("nan"))

    end = state.k + fcfg.iterations
    record(state)
    for _ in range(fcfg.iterations):
        state = fw_step(state, problem, scfg, fcfg, domain=domain, candidates=candidates)
        record(state)
    return dataclasses.replace(
        state,
        objective_trace=tuple(objs),
        barycenter=consolidate(state.iterate, fcfg.merge_radius),
    )


def closed_form_weights(k: int) -> np.ndarray:
    """Weights of ``alpha_k`` started from a Dirac, iterating ``a <- [j a, 2] / (j + 2)``."""
    a = np.ones(1)
    for j in range(k):
        a = np.append(a * j, 2.0) / (j + 2)
    return a


def rate_bound(eps: float, D: float, k: int) -> float:
    """``48 eps exp(3 D / eps) / (k + 2)``, the finite-support rate envelope."""
    return 48.0 * eps * np.exp(3.0 * D / eps) / (k + 2)
