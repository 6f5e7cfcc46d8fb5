"""Workflows built on the barycenter solver: compression, k-means of measures
and propagation of measures over a graph."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import DisconnectedUnknownVertex, EmptyCluster
from .frank_wolfe import BarycenterProblem, FWConfig, FWState, barycenter
from .measure import SQEUCLIDEAN, CostSpec, DiscreteMeasure
from .sinkhorn import SinkhornConfig, ot_self, sinkhorn_divergence


# ----------------------------------------------------------------------------
# compression
# ----------------------------------------------------------------------------

def compress(beta: DiscreteMeasure, K: int, scfg: SinkhornConfig, fcfg: Optional[FWConfig] = None,
             cost: CostSpec = SQEUCLIDEAN) -> FWState:
    """Approximate ``beta`` by the Frank-Wolfe iterate after ``K`` steps (m = 1)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    fcfg = dataclasses.replace(fcfg or FWConfig(), iterations=int(K))
    return barycenter(BarycenterProblem([beta], cost=cost), scfg, fcfg)


# ----------------------------------------------------------------------------
# k-means on measures
# ----------------------------------------------------------------------------

@dataclass
class ClusterModel:
    centroids: list
    assignments: np.ndarray
    inertia: float
    inertia_trace: list = field(default_factory=list)
    reseeded: int = 0


class _Divergences:
    """``S(mu, c)`` with the self terms of every measure cached by identity."""

    def __init__(self, scfg, cost):
        self.scfg = scfg
        self.cost = cost
        self._self = {}

    def self_term(self, m):
        key = id(m)
        if key not in self._self:
            self._self[key] = (m, ot_self(m, self.scfg, self.cost))
        return self._self[key][1]

    def __call__(self, a, b):
        if a is b:
            return 0.0
        return sinkhorn_divergence(a, b, self.scfg, self.cost,
                                   self_alpha=self.self_term(a), self_beta=self.self_term(b))


def _refit(members, scfg, fcfg, cost):
    if len(members) == 1:
        return members[0]
    st = barycenter(BarycenterProblem(members, cost=cost), scfg, fcfg)
    return st.barycenter


def kmeans(measures: Sequence[DiscreteMeasure], k: int, lloyd_iters: int, scfg: SinkhornConfig,
           fcfg: Optional[FWConfig] = None, seed: int = 0, cost: CostSpec = SQEUCLIDEAN) -> ClusterModel:
    """Lloyd iterations with ``S_eps`` as the distance.

    Seeding is k-means++: the first centroid is a uniformly drawn input, each
    next one is drawn with probability proportional to the divergence to the
    nearest chosen centroid.  Centroids are re-fit as barycenters of their
    members (a single member is its own centroid); a re-fit is kept only if
    it lowers the cluster's summed divergence.  An emptied cluster is
    re-seeded with the input farthest from its centroid.
    """
    measures = list(measures)
    n = len(measures)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    fcfg = fcfg or FWConfig()
    div = _Divergences(scfg, cost)
    rng = np.random.default_rng(seed)

    chosen = [int(rng.integers(n))]
    nearest = np.array([div(m, measures[chosen[0]]) for m in measures])
    while len(chosen) < k:
        p = np.maximum(nearest, 0.0)
        p[chosen] = 0.0
        if p.sum() <= 0.0:
            p = np.ones(n)
            p[chosen] = 0.0
        nxt = int(rng.choice(n, p=p / p.sum()))
        chosen.append(nxt)
        nearest = np.minimum(nearest, [div(m, measures[nxt]) for m in measures])
    centroids = [measures[i] for i in chosen]

    def distances():
        return np.array([[div(m, c) for c in centroids] for m in measures])

    dist = distances()
    assign = np.argmin(dist, axis=1)
    trace = [float(dist[np.arange(n), assign].sum())]
    reseeded = 0
    for _ in range(lloyd_iters):
        # repair empty clusters before re-fitting
        for j in range(k):
            if np.any(assign == j):
                continue
            own = dist[np.arange(n), assign]
            counts = np.bincount(assign, minlength=k)
            movable = counts[assign] > 1
            if not movable.any():
                raise EmptyCluster(f"cluster {j} is empty and no input can be moved")
            far = int(np.argmax(np.where(movable, own, -np.inf)))
            centroids[j] = measures[far]
            assign[far] = j
            dist[:, j] = [div(m, centroids[j]) for m in measures]
            reseeded += 1
        for j in range(k):
            idx = np.flatnonzero(assign == j)
            members = [measures[i] for i in idx]
            cand = _refit(members, scfg, fcfg, cost)
            if cand is centroids[j]:
                continue
            new_cost = sum(div(m, cand) for m in members)
            if new_cost < dist[idx, j].sum():
                centroids[j] = cand
        dist = distances()
        new_assign = np.argmin(dist, axis=1)
        stable = np.array_equal(new_assign, assign)
        assign = new_assign
        trace.append(float(dist[np.arange(n), assign].sum()))
        if stable:
            break
    return ClusterModel(centroids, assign, trace[-1], trace, reseeded)


# ----------------------------------------------------------------------------
# propagation on graphs
# ----------------------------------------------------------------------------

@dataclass
class PropagationGraph:
    """Undirected weighted graph with measures on the known vertices.

    Edge weights are raw distances; :func:`propagate` turns them into
    affinities.
    """

    n_vertices: int
    edges: list
    known: Dict[int, DiscreteMeasure]
    unknown: list

    def __post_init__(self):
        self.edges = [(int(u), int(v), float(w)) for u, v, w in self.edges]
        self.known = {int(k): m for k, m in self.known.items()}
        self.unknown = sorted(int(v) for v in self.unknown)
        allv = set(self.known) | set(self.unknown)
        if set(self.known) & set(self.unknown):
            raise ValueError("a vertex cannot be both known and unknown")
        if allv != set(range(self.n_vertices)):
            raise ValueError("known and unknown vertices must partition 0..n_vertices-1")
        for u, v, w in self.edges:
            if u == v or not (0 <= u < self.n_vertices and 0 <= v < self.n_vertices):
                raise ValueError(f"bad edge ({u}, {v})")
            if not w > 0:
                raise ValueError(f"edge ({u}, {v}) needs a positive weight")
        touched = {u for u, _, _ in self.edges} | {v for _, v, _ in self.edges}
        for v in self.unknown:
            if v not in touched:
                raise DisconnectedUnknownVertex(f"unknown vertex {v} has no edge")

    def neighbors(self, v: int) -> list:
        out = []
        for a, b, w in self.edges:
            if a == v:
                out.append((b, w))
            elif b == v:
                out.append((a, w))
        return out


def edge_affinity(w: float, rule: str, sigma: float = 1.0) -> float:
    if rule == "inverse-distance":
        return 1.0 / w
    if rule == "exp-kernel":
        return math.exp(-w / sigma)
    raise ValueError(f"unknown edge weighting {rule!r}")


@dataclass
class PropagationResult:
    measures: Dict[int, DiscreteMeasure]
    objective_trace: list


def _local_cost(rho, nbrs, current, div):
    return sum(w * div(rho, current[u]) for u, w in nbrs)


def propagate(graph: PropagationGraph, edge_weighting: str, sweeps: int, scfg: SinkhornConfig,
              fcfg: Optional[FWConfig] = None, sigma: float = 1.0,
              cost: CostSpec = SQEUCLIDEAN) -> PropagationResult:
    """Block-coordinate descent of ``sum w_uv S(rho_u, rho_v)`` over the unknown vertices.

    Vertices are visited in index order and each one is re-fit as the
    barycenter of its neighbours' current measures with its incident
    affinities normalized to sum 1 (Gauss-Seidel).  A re-fit is kept only if
    it lowers the vertex's local cost.  Unknown vertices start empty; a
    vertex whose neighbours are all still empty waits for a later pass, and
    if no pass makes progress some unknown component has no known vertex.
    The objective sums over edges touching an unknown vertex.
    """
    fcfg = fcfg or FWConfig()
    div = _Divergences(scfg, cost)
    affin = {v: [(u, edge_affinity(w, edge_weighting, sigma)) for u, w in graph.neighbors(v)]
             for v in graph.unknown}
    current: Dict[int, DiscreteMeasure] = dict(graph.known)

    def fit(v):
        nbrs = [(u, w) for u, w in affin[v] if u in current]
        ws = np.array([w for _, w in nbrs])
        ws = ws / ws.sum()
        problem = BarycenterProblem([current[u] for u, _ in nbrs], ws, cost)
        return barycenter(problem, scfg, fcfg).barycenter, nbrs

    pending = list(graph.unknown)
    while pending:
        progressed = []
        for v in pending:
            if any(u in current for u, _ in affin[v]):
                current[v], _ = fit(v)
                progressed.append(v)
        if not progressed:
            raise DisconnectedUnknownVertex(f"vertices {pending} are not connected to any known vertex")
        pending = [v for v in pending if v not in progressed]

    unknown = set(graph.unknown)
    edges = [(u, v, edge_affinity(w, edge_weighting, sigma)) for u, v, w in graph.edges
             if u in unknown or v in unknown]

    def total():
        return float(sum(w * div(current[u], current[v]) for u, v, w in edges))

    trace = [total()]
    for _ in range(sweeps):
        for v in graph.unknown:
            cand, nbrs = fit(v)
            if _local_cost(cand, nbrs, current, div) < _local_cost(current[v], nbrs, current, div):
                current[v] = cand
        trace.append(total())
    return PropagationResult({v: current[v] for v in graph.unknown}, trace)
