"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` version (``*_nb``) and a
pure-numpy version (``*_np``).  The public names at the bottom of the module
are bound to one of the two at import time.  Set ``SINKBARY_DISABLE_NUMBA=1``
to force the numpy path (numba is also skipped if it cannot be imported).

Both paths compute the same quantities with the same max-shifted
log-sum-exp; results agree to rounding, not bit-for-bit.
"""
import os

import numpy as np
from scipy.spatial.distance import cdist

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_DISABLE = os.environ.get("SINKBARY_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes", "on")
USE_NUMBA = HAVE_NUMBA and not _DISABLE

njit_kwargs = {"nogil": True, "cache": True, "fastmath": False}


# ----------------------------------------------------------------------------
# numpy reference path
# ----------------------------------------------------------------------------

def sqdist_np(X, Y):
    """Squared Euclidean distance matrix in difference form (exact zero diagonal)."""
    return cdist(X, Y, "sqeuclidean")


def softmin_np(C, logw, pot, eps):
    """out[i] = -eps * log sum_j exp(logw[j] + (pot[j] - C[i, j]) / eps)."""
    A = logw[None, :] + (pot[None, :] - C) / eps
    m = A.max(axis=1)
    return -eps * (m + np.log(np.exp(A - m[:, None]).sum(axis=1)))


def _pairwise_cost_np(Xq, Y, squared):
    D = sqdist_np(Xq, Y)
    if not squared:
        D = np.sqrt(D)
    return D


def potential_eval_np(Xq, Y, logb, v, eps, squared):
    C = _pairwise_cost_np(Xq, Y, squared)
    return softmin_np(C, logb, v, eps)


def potential_eval_grad_np(Xq, Y, logb, v, eps, squared):
    C = _pairwise_cost_np(Xq, Y, squared)
    A = logb[None, :] + (v[None, :] - C) / eps
    m = A.max(axis=1)
    E = np.exp(A - m[:, None])
    s = E.sum(axis=1)
    vals = -eps * (m + np.log(s))
    P = E / s[:, None]
    diff = Xq[:, None, :] - Y[None, :, :]
    if squared:
        G = 2.0 * diff
    else:
        r = np.sqrt(np.einsum("qnd,qnd->qn", diff, diff))
        with np.errstate(invalid="ignore", divide="ignore"):
            G = np.where(r[..., None] > 0, diff / r[..., None], 0.0)
    grads = np.einsum("qn,qnd->qd", P, G)
    return vals, grads


def rbf_sum_np(X, Y, a, b, sigma):
    """sum_ij a_i b_j exp(-|x_i - y_j|^2 / (2 sigma^2)), chunked over rows."""
    total = 0.0
    inv = 1.0 / (2.0 * sigma * sigma)
    step = max(1, 4_000_000 // max(1, Y.shape[0]))
    for s in range(0, X.shape[0], step):
        K = np.exp(-sqdist_np(X[s:s + step], Y) * inv)
        total += float(a[s:s + step] @ K @ b)
    return total


def rbf_self_sum_np(X, a, sigma):
    """``rbf_sum(X, X, a, a, sigma)``."""
    return rbf_sum_np(X, X, a, a, sigma)


def _cert_np(lam, ell, base):
    if lam <= 0.0:
        return 0.0
    return np.exp(2 * ell * np.log(lam)) * base


def sinkhorn_loop_np(C, CT, loga, logb, u, eps, tol, max_iter, anchor_pos, anchor_row, lam, base):
    """Anchored alternating log-sum-exp sweeps.

    Returns ``(u, v, sweeps, last_change, certificate, converged, finite)``.
    ``anchor_pos < 0`` means the anchor is evaluated through ``anchor_row``.
    """
    v = np.zeros(C.shape[1])
    change = np.inf
    cert = base
    ell = 0
    for ell in range(1, max_iter + 1):
        v = softmin_np(CT, loga, u, eps)
        u_new = softmin_np(C, logb, v, eps)
        if anchor_pos >= 0:
            t = u_new[anchor_pos]
        else:
            t = softmin_np(anchor_row, logb, v, eps)[0]
        u_new -= t
        v += t
        change = float(np.max(np.abs(u_new - u)))
        if not np.isfinite(change):
            return u_new, v, ell, change, cert, False, False
        u = u_new
        cert = _cert_np(lam, ell, base)
        if change < tol or cert < tol:
            return u, v, ell, change, cert, True, True
    return u, v, ell, change, cert, False, True


def symmetric_loop_np(C, logw, u, eps, tol, max_iter):
    """Averaged symmetric update ``u <- (u + T(u)) / 2`` on a symmetric cost.

    Returns ``(u, sweeps, last_change, converged, finite)``.
    """
    change = np.inf
    ell = 0
    for ell in range(1, max_iter + 1):
        u_new = 0.5 * (u + softmin_np(C, logw, u, eps))
        change = float(np.max(np.abs(u_new - u)))
        if not np.isfinite(change):
            return u_new, ell, change, False, False
        u = u_new
        if change < tol:
            return u, ell, change, True, True
    return u, ell, change, False, True


# ----------------------------------------------------------------------------
# numba path
# ----------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(**njit_kwargs)
    def sqdist_nb(X, Y):
        n, d = X.shape
        m = Y.shape[0]
        D = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    t = X[i, k] - Y[j, k]
                    acc += t * t
                D[i, j] = acc
        return D

    @njit(**njit_kwargs)
    def softmin_nb(C, logw, pot, eps):
        n, m = C.shape
        out = np.empty(n)
        inv = 1.0 / eps
        buf = np.empty(m)
        for i in range(n):
            mx = -np.inf
            for j in range(m):
                a = logw[j] + (pot[j] - C[i, j]) * inv
                buf[j] = a
                if a > mx:
                    mx = a
            s = 0.0
            for j in range(m):
                s += np.exp(buf[j] - mx)
            out[i] = -eps * (mx + np.log(s))
        return out

    @njit(**njit_kwargs)
    def potential_eval_nb(Xq, Y, logb, v, eps, squared):
        q, d = Xq.shape
        n = Y.shape[0]
        out = np.empty(q)
        inv = 1.0 / eps
        buf = np.empty(n)
        for p in range(q):
            mx = -np.inf
            for i in range(n):
                c = 0.0
                for k in range(d):
                    t = Xq[p, k] - Y[i, k]
                    c += t * t
                if not squared:
                    c = np.sqrt(c)
                a = logb[i] + (v[i] - c) * inv
                buf[i] = a
                if a > mx:
                    mx = a
            s = 0.0
            for i in range(n):
                s += np.exp(buf[i] - mx)
            out[p] = -eps * (mx + np.log(s))
        return out

    @njit(**njit_kwargs)
    def potential_eval_grad_nb(Xq, Y, logb, v, eps, squared):
        q, d = Xq.shape
        n = Y.shape[0]
        vals = np.empty(q)
        grads = np.zeros((q, d))
        inv = 1.0 / eps
        buf = np.empty(n)
        dist = np.empty(n)
        for p in range(q):
            mx = -np.inf
            for i in range(n):
                c = 0.0
                for k in range(d):
                    t = Xq[p, k] - Y[i, k]
                    c += t * t
                if not squared:
                    c = np.sqrt(c)
                dist[i] = c
                a = logb[i] + (v[i] - c) * inv
                buf[i] = a
                if a > mx:
                    mx = a
            s = 0.0
            for i in range(n):
                e = np.exp(buf[i] - mx)
                buf[i] = e
                s += e
            vals[p] = -eps * (mx + np.log(s))
            for i in range(n):
                w = buf[i] / s
                if squared:
                    for k in range(d):
                        grads[p, k] += w * 2.0 * (Xq[p, k] - Y[i, k])
                elif dist[i] > 0.0:
                    for k in range(d):
                        grads[p, k] += w * (Xq[p, k] - Y[i, k]) / dist[i]
        return vals, grads

    @njit(**njit_kwargs)
    def rbf_sum_nb(X, Y, a, b, sigma):
        n, d = X.shape
        m = Y.shape[0]
        inv = 1.0 / (2.0 * sigma * sigma)
        total = 0.0
        for i in range(n):
            row = 0.0
            for j in range(m):
                c = 0.0
                for k in range(d):
                    t = X[i, k] - Y[j, k]
                    c += t * t
                row += b[j] * np.exp(-c * inv)
            total += a[i] * row
        return total

    @njit(**njit_kwargs)
    def rbf_self_sum_nb(X, a, sigma):
        # symmetric: visit each unordered pair once
        n, d = X.shape
        inv = 1.0 / (2.0 * sigma * sigma)
        off = 0.0
        diag = 0.0
        for i in range(n):
            diag += a[i] * a[i]
            row = 0.0
            for j in range(i + 1, n):
                c = 0.0
                for k in range(d):
                    t = X[i, k] - X[j, k]
                    c += t * t
                row += a[j] * np.exp(-c * inv)
            off += a[i] * row
        return diag + 2.0 * off

    @njit(**njit_kwargs)
    def sinkhorn_loop_nb(C, CT, loga, logb, u, eps, tol, max_iter, anchor_pos, anchor_row, lam, base):
        u = u.copy()
        v = np.zeros(C.shape[1])
        change = np.inf
        cert = base
        ell = 0
        for ell in range(1, max_iter + 1):
            v = softmin_nb(CT, loga, u, eps)
            u_new = softmin_nb(C, logb, v, eps)
            if anchor_pos >= 0:
                t = u_new[anchor_pos]
            else:
                t = softmin_nb(anchor_row, logb, v, eps)[0]
            change = 0.0
            for i in range(u.shape[0]):
                u_new[i] -= t
                dd = abs(u_new[i] - u[i])
                if not dd <= change:
                    change = dd
            for j in range(v.shape[0]):
                v[j] += t
            if not np.isfinite(change):
                return u_new, v, ell, change, cert, False, False
            u = u_new
            cert = 0.0 if lam <= 0.0 else np.exp(2 * ell * np.log(lam)) * base
            if change < tol or cert < tol:
                return u, v, ell, change, cert, True, True
        return u, v, ell, change, cert, False, True


    @njit(**njit_kwargs)
    def symmetric_loop_nb(C, logw, u, eps, tol, max_iter):
        u = u.copy()
        change = np.inf
        ell = 0
        for ell in range(1, max_iter + 1):
            t = softmin_nb(C, logw, u, eps)
            change = 0.0
            for i in range(u.shape[0]):
                nu = 0.5 * (u[i] + t[i])
                dd = abs(nu - u[i])
                if not dd <= change:
                    change = dd
                u[i] = nu
            if not np.isfinite(change):
                return u, ell, change, False, False
            if change < tol:
                return u, ell, change, True, True
        return u, ell, change, False, True


def backend():
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"


def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


if USE_NUMBA:

    def sqdist(X, Y):
        return sqdist_nb(_c(X), _c(Y))

    def softmin(C, logw, pot, eps):
        return softmin_nb(_c(C), _c(logw), _c(pot), float(eps))

    def potential_eval(Xq, Y, logb, v, eps, squared):
        return potential_eval_nb(_c(Xq), _c(Y), _c(logb), _c(v), float(eps), bool(squared))

    def potential_eval_grad(Xq, Y, logb, v, eps, squared):
        return potential_eval_grad_nb(_c(Xq), _c(Y), _c(logb), _c(v), float(eps), bool(squared))

    def rbf_sum(X, Y, a, b, sigma):
        return float(rbf_sum_nb(_c(X), _c(Y), _c(a), _c(b), float(sigma)))

    def rbf_self_sum(X, a, sigma):
        return float(rbf_self_sum_nb(_c(X), _c(a), float(sigma)))

    def sinkhorn_loop(C, CT, loga, logb, u, eps, tol, max_iter, anchor_pos, anchor_row, lam, base):
        return sinkhorn_loop_nb(_c(C), _c(CT), _c(loga), _c(logb), _c(u), float(eps), float(tol),
                                int(max_iter), int(anchor_pos), _c(anchor_row), float(lam), float(base))

    def symmetric_loop(C, logw, u, eps, tol, max_iter):
        return symmetric_loop_nb(_c(C), _c(logw), _c(u), float(eps), float(tol), int(max_iter))

else:
    sqdist = sqdist_np
    softmin = softmin_np
    potential_eval = potential_eval_np
    potential_eval_grad = potential_eval_grad_np
    rbf_sum = rbf_sum_np
    rbf_self_sum = rbf_self_sum_np
    sinkhorn_loop = sinkhorn_loop_np
    symmetric_loop = symmetric_loop_np
