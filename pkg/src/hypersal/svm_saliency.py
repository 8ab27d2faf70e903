"""Centre-versus-surround saliency with a cost-sensitive weighted LS-SVM.

Each centre patch is a positive sample and its overlapping surround patches
are negatives.  The weighted LS-SVM has a closed-form solution through the
bordered KKT system

    [ 0   1^T        ] [b    ]   [0]
    [ 1   Omega + V_C] [alpha] = [y]

with a linear kernel ``Omega_ij = x_i . x_j`` and ``V_C = diag(1 / (C nu_l))``.
A patch is salient when its surround is easy to separate from it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imagecore import check_rgb, downsample, resize_bilinear

CENTER_WEIGHT = 0.5
SURROUND_WEIGHT = 0.01
DEFAULT_SCALES = (1.0, 0.5, 0.25)


class SingularSystemError(np.linalg.LinAlgError):
    pass


def half_overlap_offsets(patch_size: int) -> tuple[tuple[int, int], ...]:
    s = patch_size // 2
    return tuple((dx, dy) for dy in (-s, 0, s) for dx in (-s, 0, s) if (dx, dy) != (0, 0))


@dataclass(frozen=True)
class PatchGeometry:
    patch_size: int = 8
    stride: int = 4
    surround_offsets: tuple[tuple[int, int], ...] = field(default=None)

    def __post_init__(self):
        if self.surround_offsets is None:
            object.__setattr__(self, "surround_offsets", half_overlap_offsets(self.patch_size))
        else:
            object.__setattr__(
                self, "surround_offsets", tuple((int(dx), int(dy)) for dx, dy in self.surround_offsets)
            )
        if self.patch_size < 2:
            raise ValueError("patch_size must be >= 2")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not self.surround_offsets or (0, 0) in self.surround_offsets:
            raise ValueError("surround_offsets must be non-empty and exclude (0, 0)")

    @property
    def n_samples(self) -> int:
        return 1 + len(self.surround_offsets)


@dataclass(frozen=True)
class LsSvmProblem:
    samples: np.ndarray  # (N, d); row 0 is the centre
    labels: np.ndarray  # (N,) of +1 / -1
    weights: np.ndarray  # (N,) positive
    C: float = 1.0

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        y = np.asarray(self.labels, dtype=np.float64).ravel()
        nu = np.asarray(self.weights, dtype=np.float64).ravel()
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "weights", nu)
        n = x.shape[0]
        if n < 2 or y.shape != (n,) or nu.shape != (n,):
            raise ValueError("need N >= 2 samples with one label and one weight each")
        if np.any(nu <= 0) or self.C <= 0:
            raise ValueError("weights and C must be positive")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")

    @classmethod
    def center_surround(cls, center, surround, center_weight=CENTER_WEIGHT,
                        surround_weight=SURROUND_WEIGHT, C=1.0) -> "LsSvmProblem":
        x = np.vstack([np.ravel(center), np.atleast_2d(surround)])
        n = x.shape[0]
        y = -np.ones(n)
        y[0] = 1.0
        nu = np.full(n, float(surround_weight))
        nu[0] = center_weight
        return cls(x, y, nu, C)

    @property
    def n(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class LsSvmSolution:
    alpha: np.ndarray
    bias: float
    support: np.ndarray  # training samples the dual coefficients refer to

    @property
    def w(self) -> np.ndarray:
        return self.support.T @ self.alpha

    def decision(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ self.w + self.bias


def kkt_system(prob: LsSvmProblem) -> tuple[np.ndarray, np.ndarray]:
    """Assemble the (N+1) x (N+1) bordered system and its right-hand side."""
    n = prob.n
    a = np.zeros((n + 1, n + 1))
    a[0, 1:] = 1.0
    a[1:, 0] = 1.0
    a[1:, 1:] = prob.samples @ prob.samples.T + np.diag(1.0 / (prob.C * prob.weights))
    rhs = np.concatenate([[0.0], prob.labels])
    return a, rhs


def kkt_residual(prob: LsSvmProblem, sol: LsSvmSolution) -> float:
    a, rhs = kkt_system(prob)
    return float(np.max(np.abs(a @ np.concatenate([[sol.bias], sol.alpha]) - rhs)))


def solve_weighted_lssvm(prob: LsSvmProblem) -> LsSvmSolution:
    a, rhs = kkt_system(prob)
    try:
        z = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"LS-SVM system is singular: {exc}") from exc
    if not np.all(np.isfinite(z)):
        raise SingularSystemError("LS-SVM system produced non-finite solution")
    return LsSvmSolution(alpha=z[1:], bias=float(z[0]), support=prob.samples)


def solve_weighted_lssvm_primal(prob: LsSvmProblem) -> LsSvmSolution:
    """Same optimum as :func:`solve_weighted_lssvm`, via a (d+1)-sized system.

    Used when N is much larger than the feature dimension.  The dual
    coefficients are recovered from the residuals, ``alpha = C nu eps``.
    """
    x, y = prob.samples, prob.labels
    v = prob.C * prob.weights
    d = x.shape[1]
    xv = x.T * v
    a = np.empty((d + 1, d + 1))
    a[:d, :d] = xv @ x + np.eye(d)
    a[:d, d] = xv.sum(axis=1)
    a[d, :d] = a[:d, d]
    a[d, d] = v.sum()
    rhs = np.concatenate([xv @ y, [v @ y]])
    try:
        z = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"LS-SVM primal system is singular: {exc}") from exc
    w, b = z[:d], float(z[d])
    alpha = v * (y - x @ w - b)
    return LsSvmSolution(alpha=alpha, bias=b, support=x)


def sign(v: np.ndarray) -> np.ndarray:
    # sgn(0) = +1: a sample on the hyperplane does not count as separated.
    return np.where(np.asarray(v) < 0, -1.0, 1.0)


def svm_saliency_score(sol: LsSvmSolution, prob: LsSvmProblem) -> float:
    """Fraction of surround samples the classifier puts on the negative side."""
    f = sol.decision(prob.samples[1:])
    return float(np.mean((1.0 - sign(f)) / 2.0))


def patch_vectors(img: np.ndarray, patch_size: int) -> np.ndarray:
    """All ``patch_size`` windows as vectorised RGB, indexed by top-left corner."""
    win = np.lib.stride_tricks.sliding_window_view(img, (patch_size, patch_size), axis=(0, 1))
    # (rows, cols, 3, p, p) -> (rows, cols, p*p*3) in row-major RGB order
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(
        win.shape[0], win.shape[1], -1
    )


def extract_center_surround(img, center: tuple[int, int], geom: PatchGeometry,
                            center_weight=CENTER_WEIGHT, surround_weight=SURROUND_WEIGHT,
                            C=1.0) -> LsSvmProblem:
    """Training set for the centre window whose top-left corner is ``center`` (row, col).

    Surround windows that would leave the image are clamped to the border.
    """
    img = check_rgb(img)
    h, w = img.shape[:2]
    p = geom.patch_size
    r, c = center
    if not (0 <= r <= h - p and 0 <= c <= w - p):
        raise ValueError(f"centre window at {center} of size {p} does not fit a {h}x{w} image")
    rows, cols = _surround_corners(np.array([r]), np.array([c]), geom, h, w)
    windows = [img[rr:rr + p, cc:cc + p].reshape(-1) for rr, cc in zip(rows[0], cols[0])]
    return LsSvmProblem.center_surround(windows[0], np.array(windows[1:]),
                                        center_weight, surround_weight, C)


def _surround_corners(r, c, geom: PatchGeometry, h: int, w: int):
    # Column 0 is the centre itself.
    dx = np.array([0] + [o[0] for o in geom.surround_offsets])
    dy = np.array([0] + [o[1] for o in geom.surround_offsets])
    p = geom.patch_size
    rows = np.clip(r[:, None] + dy[None, :], 0, h - p)
    cols = np.clip(c[:, None] + dx[None, :], 0, w - p)
    return rows, cols


def window_starts(n: int, patch_size: int, stride: int) -> np.ndarray:
    starts = list(range(0, n - patch_size + 1, stride))
    if starts[-1] != n - patch_size:
        starts.append(n - patch_size)
    return np.array(starts)


def _batched_scores(x: np.ndarray, weights: np.ndarray, C: float) -> np.ndarray:
    """SSa for a stack of problems ``x`` of shape (P, N, d), sharing labels and weights."""
    p, n, _ = x.shape
    gram = x @ x.transpose(0, 2, 1)
    a = np.zeros((p, n + 1, n + 1))
    a[:, 0, 1:] = 1.0
    a[:, 1:, 0] = 1.0
    a[:, 1:, 1:] = gram + np.diag(1.0 / (C * weights))
    y = -np.ones(n)
    y[0] = 1.0
    rhs = np.broadcast_to(np.concatenate([[0.0], y]), (p, n + 1))[..., None]
    try:
        z = np.linalg.solve(a, rhs)[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"LS-SVM system is singular: {exc}") from exc
    f = np.einsum("pij,pj->pi", gram, z[:, 1:]) + z[:, :1]
    return np.mean((1.0 - sign(f[:, 1:])) / 2.0, axis=1)


def single_scale_map(img: np.ndarray, geom: PatchGeometry, center_weight=CENTER_WEIGHT,
                     surround_weight=SURROUND_WEIGHT, C=1.0, chunk: int = 2048) -> np.ndarray:
    """Per-pixel SSa at the image's own resolution (overlapping footprints averaged)."""
    img = check_rgb(img)
    h, w = img.shape[:2]
    p = geom.patch_size
    if h < p or w < p:
        raise ValueError(f"image {h}x{w} is smaller than the {p}px patch")
    vecs = patch_vectors(img, p)
    rr, cc = np.meshgrid(window_starts(h, p, geom.stride), window_starts(w, p, geom.stride),
                         indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    rows, cols = _surround_corners(rr, cc, geom, h, w)
    weights = np.full(geom.n_samples, float(surround_weight))
    weights[0] = center_weight
    scores = np.empty(rr.size)
    for s in range(0, rr.size, chunk):
        sl = slice(s, s + chunk)
        scores[sl] = _batched_scores(vecs[rows[sl], cols[sl]], weights, C)
    return _paint_footprints(scores, rr, cc, p, (h, w))


def _paint_footprints(values, rr, cc, p, shape) -> np.ndarray:
    acc = np.zeros(shape)
    cnt = np.zeros(shape)
    for v, r, c in zip(values, rr, cc):
        acc[r:r + p, c:c + p] += v
        cnt[r:r + p, c:c + p] += 1.0
    return np.divide(acc, cnt, out=np.zeros(shape), where=cnt > 0)


def svm_saliency_map(img, scales=DEFAULT_SCALES, geom: PatchGeometry | None = None,
                     center_weight=CENTER_WEIGHT, surround_weight=SURROUND_WEIGHT,
                     C=1.0) -> np.ndarray:
    """Multi-scale centre-surround saliency, equal-weight mean over scales."""
    img = check_rgb(img)
    geom = geom or PatchGeometry()
    h, w = img.shape[:2]
    maps = []
    for rate in scales:
        small = downsample(img, rate, min_side=geom.patch_size)
        m = single_scale_map(small, geom, center_weight, surround_weight, C)
        maps.append(resize_bilinear(m, (h, w)))
    return np.clip(np.mean(maps, axis=0), 0.0, 1.0)


def global_margin_saliency(img, geom: PatchGeometry | None = None, C=1.0) -> np.ndarray:
    """One LS-SVM for the whole image: border patches negative, the rest positive.

    Each patch scores its signed distance to the hyperplane, clamped at zero.
    The two classes are weighted so each carries half the total cost.
    """
    img = check_rgb(img)
    geom = geom or PatchGeometry()
    h, w = img.shape[:2]
    p = geom.patch_size
    if h < p or w < p:
        raise ValueError(f"image {h}x{w} is smaller than the {p}px patch")
    rr, cc = np.meshgrid(window_starts(h, p, geom.stride), window_starts(w, p, geom.stride),
                         indexing="ij")
    rr, cc = rr.ravel(), cc.ravel()
    border = (rr == 0) | (cc == 0) | (rr == h - p) | (cc == w - p)
    if border.all() or not border.any():
        raise ValueError("image needs at least one interior and one boundary patch")
    x = patch_vectors(img, p)[rr, cc]
    y = np.where(border, -1.0, 1.0)
    n = y.size
    nu = np.where(border, n / (2.0 * border.sum()), n / (2.0 * (~border).sum()))
    sol = solve_weighted_lssvm_primal(LsSvmProblem(x, y, nu, C))
    norm = np.linalg.norm(sol.w)
    if norm == 0.0:
        dist = np.zeros(n)
    else:
        dist = np.maximum(sol.decision(x) / norm, 0.0)
    return _paint_footprints(dist, rr, cc, p, (h, w))
