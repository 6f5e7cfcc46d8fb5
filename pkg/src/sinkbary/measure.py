"""Discrete probability measures, costs and domains."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import (
    AllZeroImage,
    DimensionMismatch,
    EmptySupport,
    NegativeWeight,
    NonPositiveDefiniteCovariance,
    UnsupportedCost,
    WeightSumOutOfTolerance,
)

# silently renormalize below this deviation of sum(weights) from 1; reject above
RENORMALIZE_TOL = 1e-9


def _as_points(points) -> np.ndarray:
    P = np.array(points, dtype=np.float64)
    if P.ndim == 1:
        # a flat list is read as n points in dimension 1
        P = P.reshape(-1, 1)
    if P.ndim != 2:
        raise DimensionMismatch(f"points must be a list of vectors, got array of shape {P.shape}")
    return P


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud ``sum_i weights[i] * delta(points[i])``.

    ``points`` has shape (n, d) and ``weights`` shape (n,).  Both arrays are
    made read-only after validation, so a measure can be shared freely.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        P = _as_points(self.points)
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if P.shape[0] == 0 or w.size == 0:
            raise EmptySupport("a measure needs at least one atom")
        if P.shape[1] < 1:
            raise DimensionMismatch("points must have dimension >= 1")
        if P.shape[0] != w.size:
            raise DimensionMismatch(f"{P.shape[0]} points but {w.size} weights")
        if not np.all(np.isfinite(P)) or not np.all(np.isfinite(w)):
            raise DimensionMismatch("points and weights must be finite")
        if np.any(w < 0):
            raise NegativeWeight(f"negative weight {float(w.min())!r}")
        s = w.sum()
        if abs(s - 1.0) > RENORMALIZE_TOL:
            raise WeightSumOutOfTolerance(f"weights sum to {float(s)!r}, expected 1")
        if s != 1.0:
            w = w / s
        P.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights))

    __hash__ = None

    def __repr__(self):
        return f"DiscreteMeasure(n={self.n}, dim={self.dim})"

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def covariance(self) -> np.ndarray:
        c = self.points - self.mean()
        return (c * self.weights[:, None]).T @ c

    def pair(self, fn) -> float:
        """Pairing ``<fn, self>`` for a function evaluable on an (n, d) array."""
        vals = np.asarray(fn(self.points), dtype=np.float64).reshape(-1)
        return float(vals @ self.weights)

    def positive(self) -> "DiscreteMeasure":
        """Copy with zero-weight atoms removed."""
        keep = self.weights > 0
        if keep.all():
            return self
        return DiscreteMeasure(self.points[keep], self.weights[keep])


def new_measure(points, weights=None) -> DiscreteMeasure:
    """Validated measure; uniform weights when ``weights`` is None."""
    P = _as_points(points)
    if weights is None:
        weights = np.full(P.shape[0], 1.0 / max(P.shape[0], 1))
    return DiscreteMeasure(P, weights)


def dirac(x) -> DiscreteMeasure:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return DiscreteMeasure(x, np.ones(1))


def mixture(measures: Sequence[DiscreteMeasure], coefs: Sequence[float]) -> DiscreteMeasure:
    """Convex combination of measures, atoms concatenated (no merging)."""
    coefs = np.asarray(coefs, dtype=np.float64)
    dims = {m.dim for m in measures}
    if len(dims) != 1:
        raise DimensionMismatch(f"mixed dimensions {sorted(dims)}")
    P = np.vstack([m.points for m in measures])
    w = np.concatenate([c * m.weights for c, m in zip(coefs, measures)])
    return DiscreteMeasure(P, w)


# ----------------------------------------------------------------------------
# cost and domain
# ----------------------------------------------------------------------------

COST_KINDS = ("squared-euclidean", "euclidean", "user-matrix")


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Ground cost ``c(x, y)``.

    For ``user-matrix`` the cost is only known on a finite ground set
    ``ground_points`` through the symmetric matrix ``matrix``; queries must use
    points of that set.  ``diameter`` overrides the default diameter (the exact
    maximum over the supports in play) and may only be raised, never lowered.
    """

    kind: str = "squared-euclidean"
    diameter: float | None = None
    matrix: np.ndarray | None = None
    ground_points: np.ndarray | None = None
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}; expected one of {COST_KINDS}")
        if self.diameter is not None and self.diameter < 0:
            raise ValueError("diameter must be nonnegative")
        if self.kind == "user-matrix":
            if self.matrix is None or self.ground_points is None:
                raise ValueError("user-matrix cost needs matrix and ground_points")
            M = np.array(self.matrix, dtype=np.float64)
            G = _as_points(self.ground_points)
            if M.shape != (G.shape[0], G.shape[0]):
                raise DimensionMismatch("cost matrix must be square over the ground points")
            if not np.allclose(M, M.T):
                raise ValueError("cost matrix must be symmetric")
            M.setflags(write=False)
            G.setflags(write=False)
            object.__setattr__(self, "matrix", M)
            object.__setattr__(self, "ground_points", G)
            object.__setattr__(self, "_index", {row.tobytes(): i for i, row in enumerate(G)})

    @property
    def differentiable(self) -> bool:
        return self.kind != "user-matrix"

    @property
    def squared(self) -> bool:
        return self.kind == "squared-euclidean"

    def ground_index(self, X) -> np.ndarray:
        X = _as_points(X)
        try:
            return np.array([self._index[row.tobytes()] for row in X], dtype=np.intp)
        except KeyError as exc:
            raise UnsupportedCost("point is not in the ground set of the user-matrix cost") from exc

    def __call__(self, X, Y) -> np.ndarray:
        X = _as_points(X)
        Y = _as_points(Y)
        if X.shape[1] != Y.shape[1]:
            raise DimensionMismatch(f"dimension {X.shape[1]} vs {Y.shape[1]}")
        if self.kind == "user-matrix":
            return self.matrix[np.ix_(self.ground_index(X), self.ground_index(Y))].copy()
        D = _kernels.sqdist(X, Y)
        if self.kind == "euclidean":
            D = np.sqrt(D)
        return D

    def resolve_diameter(self, observed: float) -> float:
        """Diameter to use given the observed maximal cost; user override only raises it."""
        if self.diameter is None:
            return float(observed)
        return float(max(self.diameter, observed))


SQEUCLIDEAN = CostSpec()


def cost_matrix(c: CostSpec, X, Y) -> np.ndarray:
    """``M[i, j] = c(X[i], Y[j])``."""
    return c(X, Y)


@dataclass(frozen=True, eq=False)
class Domain:
    """Axis-aligned box standing in for the compact set the measures live on."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=np.float64).reshape(-1)
        hi = np.array(self.hi, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionMismatch("lo and hi differ in length")
        if np.any(lo > hi):
            raise ValueError("domain needs lo <= hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @classmethod
    def bounding(cls, *point_sets, pad: float = 0.0) -> "Domain":
        P = np.vstack([_as_points(p) for p in point_sets])
        return cls(P.min(axis=0) - pad, P.max(axis=0) + pad)

    def contains(self, X, atol: float = 1e-12) -> bool:
        X = _as_points(X)
        return bool(np.all(X >= self.lo - atol) and np.all(X <= self.hi + atol))

    def clip(self, X) -> np.ndarray:
        return np.clip(X, self.lo, self.hi)

    def uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def grid(self, per_axis: int) -> np.ndarray:
        axes = [np.linspace(l, h, per_axis) for l, h in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def corners(self) -> np.ndarray:
        d = self.dim
        idx = np.array(np.meshgrid(*[[0, 1]] * d, indexing="ij")).reshape(d, -1).T
        return np.where(idx == 0, self.lo, self.hi)

    def cost_diameter(self, cost: CostSpec) -> float:
        """sup of the cost over the box (attained at opposite corners)."""
        if cost.kind == "user-matrix":
            return float(cost.matrix.max())
        r = float(np.linalg.norm(self.hi - self.lo))
        return r * r if cost.squared else r


# ----------------------------------------------------------------------------
# operations on measures
# ----------------------------------------------------------------------------

def consolidate(alpha: DiscreteMeasure, merge_radius: float = 0.0) -> DiscreteMeasure:
    """Merge atoms closer than ``merge_radius``.

    Atoms are visited in descending weight order (ties by index); each
    unvisited atom absorbs every unvisited atom within ``merge_radius`` of it.
    A group is placed at its weight-weighted centroid and carries the summed
    weight.  Groups keep the original position of their seed atom in the
    output order, so radius 0 on distinct atoms returns the input unchanged.
    """
    if merge_radius < 0:
        raise ValueError("merge_radius must be nonnegative")
    P, w = alpha.points, alpha.weights
    n = alpha.n
    if merge_radius == 0.0:
        seen: dict[bytes, int] = {}
        groups: list[list[int]] = []
        for i in range(n):
            key = P[i].tobytes()
            if key in seen:
                groups[seen[key]].append(i)
            else:
                seen[key] = len(groups)
                groups.append([i])
        if len(groups) == n:
            return alpha
        pts = np.array([P[g[0]] for g in groups])
        wts = np.array([w[g].sum() for g in groups])
        return DiscreteMeasure(pts, wts / wts.sum())

    order = np.lexsort((np.arange(n), -w))
    free = np.ones(n, dtype=bool)
    seeds, pts, wts = [], [], []
    r2 = merge_radius * merge_radius
    for i in order:
        if not free[i]:
            continue
        d2 = np.sum((P - P[i]) ** 2, axis=1)
        members = np.flatnonzero(free & (d2 <= r2))
        free[members] = False
        mass = w[members].sum()
        if mass > 0:
            loc = (w[members] @ P[members]) / mass
        else:
            loc = P[members].mean(axis=0)
        seeds.append(i)
        pts.append(loc)
        wts.append(mass)
    perm = np.argsort(seeds, kind="stable")
    wts = np.asarray(wts)[perm]
    return DiscreteMeasure(np.asarray(pts)[perm], wts / wts.sum())


def total_variation(alpha: DiscreteMeasure, alpha2: DiscreteMeasure) -> float:
    """``sum_z |alpha({z}) - alpha2({z})|`` over the union of supports.

    Atoms are matched by exact coordinate equality after merging duplicates,
    so the value ranges over [0, 2].
    """
    if alpha.dim != alpha2.dim:
        raise DimensionMismatch(f"dimension {alpha.dim} vs {alpha2.dim}")
    acc: dict[bytes, float] = {}
    for m, sign in ((alpha, 1.0), (alpha2, -1.0)):
        for p, wi in zip(m.points, m.weights):
            key = p.tobytes()
            acc[key] = acc.get(key, 0.0) + sign * wi
    return float(sum(abs(v) for v in acc.values()))


def image_to_measure(grid, pixel_extent: float = 1.0) -> DiscreteMeasure:
    """Read a nonnegative 2-D array as a measure on pixel centers.

    Pixel (row i, column j) sits at ``((j + 0.5) * s, (i + 0.5) * s)`` with
    ``s = pixel_extent``; zero pixels are dropped.
    """
    G = np.asarray(grid, dtype=np.float64)
    if G.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D image, got shape {G.shape}")
    if np.any(G < 0):
        raise NegativeWeight("image intensities must be nonnegative")
    rows, cols = np.nonzero(G > 0)
    if rows.size == 0:
        raise AllZeroImage("image has no positive pixel")
    vals = G[rows, cols]
    pts = np.stack([(cols + 0.5) * pixel_extent, (rows + 0.5) * pixel_extent], axis=1)
    return DiscreteMeasure(pts, vals / vals.sum())


# ----------------------------------------------------------------------------
# sampling
# ----------------------------------------------------------------------------

def _cholesky(cov) -> np.ndarray:
    C = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if C.shape[0] != C.shape[1] or not np.allclose(C, C.T):
        raise NonPositiveDefiniteCovariance("covariance must be a symmetric square matrix")
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefiniteCovariance("covariance is not positive definite") from exc


@dataclass(frozen=True)
class Gaussian:
    mean: Sequence[float]
    cov: Sequence[Sequence[float]]

    def __post_init__(self):
        L = _cholesky(self.cov)
        if L.shape[0] != len(self.mean):
            raise DimensionMismatch("mean and covariance disagree in dimension")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        L = _cholesky(self.cov)
        z = rng.standard_normal((n, L.shape[0]))
        return np.asarray(self.mean, dtype=np.float64) + z @ L.T


@dataclass(frozen=True)
class GaussianMixture:
    means: Sequence[Sequence[float]]
    covs: Sequence[Sequence[Sequence[float]]]
    weights: Sequence[float]

    def __post_init__(self):
        if not (len(self.means) == len(self.covs) == len(self.weights)):
            raise DimensionMismatch("mixture components disagree in count")
        for m, c in zip(self.means, self.covs):
            Gaussian(m, c)
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise WeightSumOutOfTolerance("mixture weights must be a probability vector")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        w = np.asarray(self.weights, dtype=np.float64)
        labels = rng.choice(len(w), size=n, p=w / w.sum())
        d = len(self.means[0])
        out = np.empty((n, d))
        for c, (m, cov) in enumerate(zip(self.means, self.covs)):
            idx = np.flatnonzero(labels == c)
            out[idx] = Gaussian(m, cov).draw(rng, idx.size)
        return out


@dataclass(frozen=True)
class UniformBox:
    lo: Sequence[float]
    hi: Sequence[float]

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return Domain(self.lo, self.hi).uniform(rng, n)


@dataclass(frozen=True)
class PointMass:
    point: Sequence[float]

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.tile(np.asarray(self.point, dtype=np.float64), (n, 1))


def sampler_from_dict(spec: dict):
    """Build a sampler from ``{"kind": ..., ...}`` (used for file-based configs)."""
    kind = spec.get("kind")
    if kind == "gaussian":
        return Gaussian(spec["mean"], spec["cov"])
    if kind == "mixture":
        return GaussianMixture(spec["means"], spec["covs"], spec["weights"])
    if kind == "uniform":
        return UniformBox(spec["lo"], spec["hi"])
    if kind == "point":
        return PointMass(spec["point"])
    raise ValueError(f"unknown sampler kind {kind!r}")


def sample_empirical(sampler, n: int, seed) -> DiscreteMeasure:
    """Empirical measure of ``n`` i.i.d. draws, each of weight 1/n.

    ``seed`` is anything ``numpy.random.default_rng`` accepts, so the output
    is bit-reproducible for a fixed (sampler, n, seed).
    """
    if n < 1:
        raise EmptySupport("n must be >= 1")
    rng = np.random.default_rng(seed)
    pts = sampler.draw(rng, n)
    return DiscreteMeasure(pts, np.full(n, 1.0 / n))
