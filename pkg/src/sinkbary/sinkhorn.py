"""Log-domain Sinkhorn-Knopp, Sinkhorn potentials and the Sinkhorn divergence.

Potentials follow the anchored convention: ``u(x_o) = 0`` where ``x_o`` is
atom ``anchor_index`` of the first measure.  All iterations run on the dual
potentials with max-shifted log-sum-exp, never on the scalings
``exp(u / eps)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, LengthMismatch, MaxIterationsExceeded, NumericalOverflow, UnsupportedCost
from .measure import SQEUCLIDEAN, CostSpec, DiscreteMeasure, _as_points


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float
    tolerance: float = 1e-9
    max_iterations: int = 10_000
    anchor_index: int = 0
    strict: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.anchor_index < 0:
            raise ValueError("anchor_index must be >= 0")


@dataclass(frozen=True, eq=False)
class SinkhornResult:
    """Converged potential values on the two supports.

    ``certified_error`` is the a-priori sup-norm bound on the anchored
    u-error, ``lam**(2 * iterations) * (D + osc(u0))``, in the units of the
    potentials.
    """

    u_values: np.ndarray
    v_values: np.ndarray
    iterations_used: int
    certified_error: float
    converged: bool
    diameter: float = float("nan")
    lam: float = float("nan")
    last_change: float = float("nan")

    def to_json(self) -> dict:
        return {
            "u": [float(x) for x in self.u_values],
            "v": [float(x) for x in self.v_values],
            "iters": int(self.iterations_used),
            "certified_error": float(self.certified_error),
            "converged": bool(self.converged),
        }


def contraction_lambda(D: float, eps: float) -> float:
    """Birkhoff-Hopf factor ``(e^{D/eps} - 1) / (e^{D/eps} + 1) = tanh(D / (2 eps))``."""
    if D < 0 or eps <= 0:
        raise ValueError("need D >= 0 and eps > 0")
    return math.tanh(D / (2.0 * eps))


def hilbert_distance(log_f, log_g) -> float:
    """Hilbert projective distance between positive vectors given by their logs."""
    lf = np.asarray(log_f, dtype=np.float64)
    lg = np.asarray(log_g, dtype=np.float64)
    if lf.shape != lg.shape:
        raise LengthMismatch(f"lengths {lf.shape} and {lg.shape} differ")
    d = lf - lg
    return float(d.max() - d.min())


def _power(lam: float, k: int) -> float:
    if lam <= 0.0:
        return 0.0
    return math.exp(k * math.log(lam))


def sinkhorn_knopp(
    alpha: DiscreteMeasure,
    beta: DiscreteMeasure,
    cfg: SinkhornConfig,
    cost: CostSpec = SQEUCLIDEAN,
    *,
    init_u: Optional[np.ndarray] = None,
    tolerance: Optional[float] = None,
    callback: Optional[Callable[[int, np.ndarray, np.ndarray], None]] = None,
) -> SinkhornResult:
    """Alternate ``v = T_alpha(u)`` and ``u = T_beta(v)`` until converged.

    Stops when consecutive anchored u-vectors differ by less than the
    tolerance in sup norm, or when the a-priori bound
    ``lam**(2l) * (D + osc(u0))`` drops below it.  ``init_u`` (values on the
    atoms of ``alpha``) warm-starts the iteration; the default is ``u = 0``.
    ``callback(l, u, v)`` sees the anchored iterate after every sweep.

    After each sweep the pair is shifted to ``(u - t, v + t)`` with
    ``t = u(x_o)``, so ``u == T_beta(v)`` holds exactly on return.
    """
    if alpha.dim != beta.dim:
        raise DimensionMismatch(f"dimension {alpha.dim} vs {beta.dim}")
    eps = float(cfg.epsilon)
    tol = float(cfg.tolerance if tolerance is None else tolerance)
    if cfg.anchor_index >= alpha.n:
        raise ValueError(f"anchor_index {cfg.anchor_index} out of range for {alpha.n} atoms")

    a_pos = alpha.weights > 0
    b_pos = beta.weights > 0
    Xa = alpha.points[a_pos]
    Yb = beta.points[b_pos]
    loga = np.log(alpha.weights[a_pos])
    logb = np.log(beta.weights[b_pos])
    C = np.ascontiguousarray(cost(Xa, Yb))
    CT = np.ascontiguousarray(C.T)
    D = cost.resolve_diameter(float(C.max()))
    lam = contraction_lambda(D, eps)

    anchor = cfg.anchor_index
    if a_pos[anchor]:
        anchor_pos = int(np.count_nonzero(a_pos[:anchor]))
        anchor_row = None
    else:
        anchor_pos = None
        anchor_row = np.ascontiguousarray(cost(alpha.points[anchor:anchor + 1], Yb))

    def anchor_value(u_vec, v_vec):
        if anchor_pos is not None:
            return u_vec[anchor_pos]
        return _kernels.softmin(anchor_row, logb, v_vec, eps)[0]

    if init_u is None:
        u = np.zeros(Xa.shape[0])
    else:
        init_u = np.asarray(init_u, dtype=np.float64).reshape(-1)
        if init_u.size != alpha.n:
            raise LengthMismatch("init_u must have one value per atom of alpha")
        u = init_u[a_pos].copy()
        if anchor_pos is not None:
            u -= u[anchor_pos]
    osc0 = float(u.max() - u.min())

    base = D + osc0
    if callback is None:
        row = anchor_row if anchor_row is not None else np.zeros((1, Yb.shape[0]))
        pos = -1 if anchor_pos is None else anchor_pos
        u, v, ell, change, cert, converged, finite = _kernels.sinkhorn_loop(
            C, CT, loga, logb, u, eps, tol, cfg.max_iterations, pos, row, lam, base)
        if not finite:
            raise NumericalOverflow("non-finite potentials in log-domain Sinkhorn")
        change, cert, converged = float(change), float(cert), bool(converged)
    else:
        v = np.zeros(Yb.shape[0])
        converged = False
        change = float("inf")
        cert = base
        ell = 0
        for ell in range(1, cfg.max_iterations + 1):
            v = _kernels.softmin(CT, loga, u, eps)
            u_new = _kernels.softmin(C, logb, v, eps)
            t = anchor_value(u_new, v)
            u_new -= t
            v += t
            change = float(np.max(np.abs(u_new - u)))
            if not math.isfinite(change):
                raise NumericalOverflow("non-finite potentials in log-domain Sinkhorn")
            u = u_new
            cert = _power(lam, 2 * ell) * base
            callback(ell, u, v)
            if change < tol or cert < tol:
                converged = True
                break

    u_full = np.empty(alpha.n)
    u_full[a_pos] = u
    if not a_pos.all():
        Cz = cost(alpha.points[~a_pos], Yb)
        u_full[~a_pos] = _kernels.softmin(Cz, logb, v, eps)
    v_full = np.empty(beta.n)
    v_full[b_pos] = v
    if not b_pos.all():
        Cz = cost(beta.points[~b_pos], Xa)
        v_full[~b_pos] = _kernels.softmin(Cz, loga, u, eps)

    result = SinkhornResult(
        u_values=u_full,
        v_values=v_full,
        iterations_used=ell,
        certified_error=float(cert),
        converged=converged,
        diameter=D,
        lam=lam,
        last_change=change,
    )
    if not converged and cfg.strict:
        raise MaxIterationsExceeded(
            f"Sinkhorn did not reach tolerance {tol:g} in {cfg.max_iterations} sweeps", result
        )
    return result


def sinkhorn_symmetric(
    alpha: DiscreteMeasure,
    cfg: SinkhornConfig,
    cost: CostSpec = SQEUCLIDEAN,
    *,
    tolerance: Optional[float] = None,
) -> SinkhornResult:
    """Potentials of the symmetric problem ``(alpha, alpha)``.

    Iterates the averaged map ``u <- (u + T_alpha(u)) / 2`` whose fixed point
    is the symmetric solution ``u = T_alpha(u)``.  The plain alternating
    scheme has an eigenvalue close to -1 here (the plan is nearly the
    identity when eps is small) and can need thousands of sweeps; averaging
    cancels that mode.  The result is returned in anchored form
    ``(u - t, u + t)`` with ``t = u(x_o)``.  No a-priori bound is available
    for the averaged map, so ``certified_error`` is NaN and ``last_change``
    carries the final sup-norm step.
    """
    eps = float(cfg.epsilon)
    tol = float(cfg.tolerance if tolerance is None else tolerance)
    if cfg.anchor_index >= alpha.n:
        raise ValueError(f"anchor_index {cfg.anchor_index} out of range for {alpha.n} atoms")
    pos = alpha.weights > 0
    X = alpha.points[pos]
    logw = np.log(alpha.weights[pos])
    C = np.ascontiguousarray(cost(X, X))
    D = cost.resolve_diameter(float(C.max()))
    u, ell, change, converged, finite = _kernels.symmetric_loop(
        C, logw, np.zeros(X.shape[0]), eps, tol, cfg.max_iterations)
    if not finite:
        raise NumericalOverflow("non-finite potentials in log-domain Sinkhorn")
    u_full = np.empty(alpha.n)
    u_full[pos] = u
    if not pos.all():
        u_full[~pos] = _kernels.softmin(cost(alpha.points[~pos], X), logw, u, eps)
    t = u_full[cfg.anchor_index]
    result = SinkhornResult(
        u_values=u_full - t,
        v_values=u_full + t,
        iterations_used=int(ell),
        certified_error=float("nan"),
        converged=bool(converged),
        diameter=D,
        lam=contraction_lambda(D, eps),
        last_change=float(change),
    )
    if not converged and cfg.strict:
        raise MaxIterationsExceeded(
            f"symmetric Sinkhorn did not reach tolerance {tol:g} in {cfg.max_iterations} sweeps", result
        )
    return result


# ----------------------------------------------------------------------------
# continuous potentials
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PotentialFn:
    """``x -> -eps * log sum_i b_i exp((v_i - c(x, y_i)) / eps)``.

    Callable on a single point (returns a float) or on an (q, d) array.
    """

    support_Y: np.ndarray
    weights_b: np.ndarray
    dual_values_v: np.ndarray
    epsilon: float
    cost: CostSpec = SQEUCLIDEAN

    def __post_init__(self):
        Y = _as_points(self.support_Y)
        b = np.asarray(self.weights_b, dtype=np.float64).reshape(-1)
        v = np.asarray(self.dual_values_v, dtype=np.float64).reshape(-1)
        if not (Y.shape[0] == b.size == v.size):
            raise LengthMismatch("support_Y, weights_b and dual_values_v must agree in length")
        if np.any(b < 0):
            raise ValueError("weights_b must be nonnegative")
        keep = b > 0
        object.__setattr__(self, "support_Y", Y[keep])
        object.__setattr__(self, "weights_b", b[keep])
        object.__setattr__(self, "dual_values_v", v[keep])
        object.__setattr__(self, "_logb", np.log(b[keep]))

    @property
    def dim(self) -> int:
        return self.support_Y.shape[1]

    def values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.cost.kind == "user-matrix":
            C = self.cost(X, self.support_Y)
            return _kernels.softmin(C, self._logb, self.dual_values_v, self.epsilon)
        return _kernels.potential_eval(
            X, self.support_Y, self._logb, self.dual_values_v, self.epsilon, self.cost.squared
        )

    def values_and_gradients(self, X):
        if not self.cost.differentiable:
            raise UnsupportedCost("gradient needs a euclidean or squared-euclidean cost")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return _kernels.potential_eval_grad(
            X, self.support_Y, self._logb, self.dual_values_v, self.epsilon, self.cost.squared
        )

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = self.values(x)
        return float(out[0]) if x.ndim == 1 else out

    def gradient(self, x):
        x = np.asarray(x, dtype=np.float64)
        _, g = self.values_and_gradients(x)
        return g[0] if x.ndim == 1 else g

    def upper_bound(self, X) -> np.ndarray:
        """Pointwise ``min_i (c(x, y_i) - v_i) + eps * log(1 / min_i b_i)``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        C = self.cost(X, self.support_Y)
        return np.min(C - self.dual_values_v[None, :], axis=1) - self.epsilon * np.log(self.weights_b.min())


def potential_extend(Y, b, v, eps: float, c: CostSpec = SQEUCLIDEAN) -> PotentialFn:
    """Continuous extension of the evaluation vector ``v`` on the support ``(Y, b)``."""
    return PotentialFn(Y, b, v, float(eps), c)


def potential_gradient(f: PotentialFn, x) -> np.ndarray:
    """Spatial gradient: softmax-weighted average of ``grad_x c(x, y_i)``."""
    return f.gradient(x)


# ----------------------------------------------------------------------------
# OT_eps and the Sinkhorn divergence
# ----------------------------------------------------------------------------

def ot_value(res: SinkhornResult, alpha: DiscreteMeasure, beta: DiscreteMeasure) -> float:
    return float(res.u_values @ alpha.weights + res.v_values @ beta.weights)


def ot_eps(alpha, beta, cfg: SinkhornConfig, cost: CostSpec = SQEUCLIDEAN) -> float:
    """Entropic OT value ``<u, alpha> + <v, beta>`` at the converged potentials.

    This is the primal value; the dual objective at the optimum is this minus
    ``eps``.  The offset cancels in the Sinkhorn divergence.
    """
    return ot_value(sinkhorn_knopp(alpha, beta, cfg, cost), alpha, beta)


def ot_self(alpha, cfg: SinkhornConfig, cost: CostSpec = SQEUCLIDEAN) -> float:
    """``OT(alpha, alpha)`` through the symmetric solver."""
    return ot_value(sinkhorn_symmetric(alpha, cfg, cost), alpha, alpha)


def sinkhorn_divergence(alpha, beta, cfg: SinkhornConfig, cost: CostSpec = SQEUCLIDEAN,
                        *, self_alpha: Optional[float] = None,
                        self_beta: Optional[float] = None) -> float:
    """``OT(a, b) - OT(a, a) / 2 - OT(b, b) / 2``; self terms may be passed in if cached."""
    ab = ot_eps(alpha, beta, cfg, cost)
    aa = ot_self(alpha, cfg, cost) if self_alpha is None else self_alpha
    bb = ot_self(beta, cfg, cost) if self_beta is None else self_beta
    return ab - 0.5 * aa - 0.5 * bb


def grad_divergence(alpha, beta, cfg: SinkhornConfig, cost: CostSpec = SQEUCLIDEAN):
    """Pair ``(u, p)`` of potentials; ``u - p`` is the gradient of ``S(., beta)`` at ``alpha``.

    ``u`` extends the (alpha, beta) potential and ``p`` the (alpha, alpha)
    one; both vanish at the anchor atom of ``alpha``.
    """
    res = sinkhorn_knopp(alpha, beta, cfg, cost)
    sym = sinkhorn_symmetric(alpha, cfg, cost)
    u = potential_extend(beta.points, beta.weights, res.v_values, cfg.epsilon, cost)
    p = potential_extend(alpha.points, alpha.weights, sym.v_values, cfg.epsilon, cost)
    return u, p
