"""Gaussian mean-shift mode seeking with query-set compression.

The density over superpixel features ``p_i`` uses an isotropic bandwidth
``Sigma = gamma^2 I`` and the profile ``k(x) = exp(-x / 2)``.  Every query
point climbs the density with the fixed-point update

    p <- sum_i g(M2(p, p_i)) p_i / sum_i g(M2(p, p_i)),   g = -k'

and points whose trajectories end at the same mode form one cluster.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class MeanShiftConfig:
    gamma: float = 0.1
    tol: float = 1e-6
    max_iter: int = 100
    merge_radius: float | None = None  # defaults to gamma / 10

    def __post_init__(self):
        if self.merge_radius is None:
            object.__setattr__(self, "merge_radius", self.gamma / 10.0)
        if self.gamma <= 0 or self.tol <= 0 or self.merge_radius <= 0 or self.max_iter < 1:
            raise ValueError(f"invalid mean-shift config {self}")


@dataclass
class ClusterAssignment:
    modes: np.ndarray  # (K, d)
    assignment: np.ndarray  # (Q,) mode index per point
    n_iter: int = 0
    non_converged: list[int] = field(default_factory=list)

    def clusters(self) -> list[list[int]]:
        return [np.flatnonzero(self.assignment == k).tolist() for k in range(len(self.modes))]


def _sq_mahalanobis(p: np.ndarray, points: np.ndarray, gamma: float) -> np.ndarray:
    p = np.atleast_2d(p)
    d2 = (p * p).sum(1)[:, None] - 2.0 * p @ points.T + (points * points).sum(1)[None, :]
    return np.maximum(d2, 0.0) / gamma**2


def kde_density(p, points, cfg: MeanShiftConfig) -> float:
    """Kernel density estimate at ``p`` (normalisation constant fixed to 1)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] == 0:
        raise ValueError("points must be non-empty")
    q, d = points.shape
    m2 = _sq_mahalanobis(np.asarray(p, dtype=np.float64), points, cfg.gamma)[0]
    det_sqrt = cfg.gamma**d
    return float(np.exp(-m2 / 2.0).sum() / (q * det_sqrt))


def _shift(queries: np.ndarray, points: np.ndarray, gamma: float) -> np.ndarray:
    m2 = _sq_mahalanobis(queries, points, gamma)
    # g(x) = exp(-x/2) / 2; the constant and a per-row shift cancel in the ratio.
    wts = np.exp(-(m2 - m2.min(axis=1, keepdims=True)) / 2.0)
    return (wts @ points) / wts.sum(axis=1, keepdims=True)


def meanshift_step(p, points, cfg: MeanShiftConfig) -> np.ndarray:
    """One shift of a query ``(d,)`` or a batch of queries ``(k, d)``."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] == 0:
        raise ValueError("points must be non-empty")
    p = np.asarray(p, dtype=np.float64)
    out = _shift(p, points, cfg.gamma)
    return out[0] if p.ndim == 1 else out


def trajectory(p0, points, cfg: MeanShiftConfig) -> np.ndarray:
    """All iterates from ``p0`` until the step falls below ``tol`` or ``max_iter``."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    path = [np.asarray(p0, dtype=np.float64)]
    for _ in range(cfg.max_iter):
        nxt = meanshift_step(path[-1], points, cfg)
        path.append(nxt)
        if np.linalg.norm(nxt - path[-2]) < cfg.tol:
            break
    return np.array(path)


def _link_groups(x: np.ndarray, radius: float) -> np.ndarray:
    """Single-linkage groups of rows within ``radius``; ids ordered by lowest row."""
    n = x.shape[0]
    pairs = cKDTree(x).query_pairs(radius, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, raw = connected_components(graph, directed=False)
    _, first = np.unique(raw, return_index=True)
    lut = np.empty(raw.max() + 1, dtype=np.int64)
    lut[raw[np.sort(first)]] = np.arange(first.size)
    return lut[raw]


def _assign(final: np.ndarray, owner: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    # final[q] is query q's endpoint; owner[i] the query carrying point i.
    point_group = _link_groups(final, radius)[owner]
    # Renumber modes by lowest member point; a mode sits at its lowest member's endpoint.
    _, first = np.unique(point_group, return_index=True)
    order = np.sort(first)
    lut = np.empty(int(point_group.max()) + 1, dtype=np.int64)
    lut[point_group[order]] = np.arange(order.size)
    return final[owner[order]], lut[point_group]


def plain_mean_shift(points, cfg: MeanShiftConfig) -> ClusterAssignment:
    """Reference clustering: every point climbs independently to convergence."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    q = points.shape[0]
    cur = points.copy()
    converged = np.zeros(q, dtype=bool)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        act = np.flatnonzero(~converged)
        if act.size == 0:
            it -= 1
            break
        nxt = _shift(cur[act], points, cfg.gamma)
        step = np.linalg.norm(nxt - cur[act], axis=1)
        cur[act] = nxt
        converged[act[step < cfg.tol]] = True
    modes, assignment = _assign(cur, np.arange(q), cfg.merge_radius)
    return ClusterAssignment(modes, assignment, it, np.flatnonzero(~converged).tolist())


def cluster_modes(points, cfg: MeanShiftConfig) -> ClusterAssignment:
    """Agglomerative mean shift.

    After every sweep, queries closer than ``merge_radius`` are fused into a
    single query (the one carrying the lowest point index), so the query set
    shrinks as trajectories meet.  Densities are always evaluated against the
    full point set.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] == 0:
        raise ValueError("points must be non-empty")
    q = points.shape[0]
    cur = points.copy()
    owner = np.arange(q)  # point -> index into cur
    converged = np.zeros(q, dtype=bool)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        act = np.flatnonzero(~converged)
        if act.size == 0:
            it -= 1
            break
        nxt = _shift(cur[act], points, cfg.gamma)
        step = np.linalg.norm(nxt - cur[act], axis=1)
        cur[act] = nxt
        converged[act[step < cfg.tol]] = True
        cur, owner, converged = _compress(cur, owner, converged, cfg.merge_radius)
    modes, assignment = _assign(cur, owner, cfg.merge_radius)
    stuck = np.flatnonzero(~converged[owner]).tolist()
    return ClusterAssignment(modes, assignment, it, stuck)


def _compress(cur, owner, converged, radius):
    groups = _link_groups(cur, radius)
    if groups.max() + 1 == cur.shape[0]:
        return cur, owner, converged
    # groups are numbered by lowest query row, and query rows stay ordered by
    # their lowest carried point, so the survivor is the group's first row.
    _, first = np.unique(groups, return_index=True)
    keep_conv = np.ones(first.size, dtype=bool)
    np.logical_and.at(keep_conv, groups, converged)
    return cur[first], groups[owner], keep_conv


class ScaleEdges(NamedTuple):
    gamma: float
    edges: list[list[int]]
    non_converged: list[int]


def multiscale_hyperedges(points, gammas, cfg: MeanShiftConfig | None = None,
                          merge_fraction: float = 0.1) -> list[ScaleEdges]:
    """Partition the points once per bandwidth; each cluster is a hyperedge."""
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise ValueError("gammas must be non-empty")
    if any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("gammas must be strictly ascending")
    cfg = cfg or MeanShiftConfig()
    out = []
    for g in gammas:
        res = cluster_modes(points, replace(cfg, gamma=g, merge_radius=merge_fraction * g))
        out.append(ScaleEdges(g, res.clusters(), res.non_converged))
    return out
