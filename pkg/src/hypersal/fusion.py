"""Linear fusion of the two saliency maps and manifold-propagation refinement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import normalize_saliency
from .superpixels import SuperpixelFeature, adjacent_pairs


@dataclass(frozen=True)
class FusionConfig:
    weight_svm: float = 0.5
    weight_hyper: float = 0.5
    propagation_alpha: float = 0.99
    propagation_iters: int = 30
    affinity_sigma: float = 0.1

    def __post_init__(self):
        if min(self.weight_svm, self.weight_hyper) < 0 or not np.isclose(
            self.weight_svm + self.weight_hyper, 1.0
        ):
            raise ValueError("fusion weights must be non-negative and sum to 1")
        if not 0 < self.propagation_alpha < 1:
            raise ValueError("propagation_alpha must lie in (0, 1)")
        if self.propagation_iters < 1 or self.affinity_sigma <= 0:
            raise ValueError("propagation_iters and affinity_sigma must be positive")


def fuse(svm_map, hyper_map, cfg: FusionConfig = FusionConfig()) -> np.ndarray:
    a = np.asarray(svm_map, dtype=np.float64)
    b = np.asarray(hyper_map, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"map sizes differ: {a.shape} vs {b.shape}")
    return cfg.weight_svm * normalize_saliency(a) + cfg.weight_hyper * normalize_saliency(b)


def propagation_matrix(labels: np.ndarray, features: np.ndarray, sigma: float) -> np.ndarray:
    """Symmetrically normalised affinity ``D^-1/2 W D^-1/2`` over 4-adjacent superpixels.

    ``W`` keeps the unit self-affinity on its diagonal, so a superpixel with
    no neighbours propagates its own score unchanged.
    """
    n = features.shape[0]
    w = np.eye(n)
    pairs = adjacent_pairs(labels)
    if pairs.size:
        i, j = pairs[:, 0], pairs[:, 1]
        aff = np.exp(-np.sum((features[i] - features[j]) ** 2, axis=1) / (2.0 * sigma**2))
        w[i, j] = aff
        w[j, i] = aff
    d = 1.0 / np.sqrt(w.sum(axis=1))
    return w * d[:, None] * d[None, :]


def superpixel_means(smap: np.ndarray, labels: np.ndarray) -> np.ndarray:
    n = int(labels.max()) + 1
    counts = np.bincount(labels.ravel(), minlength=n)
    return np.bincount(labels.ravel(), weights=smap.ravel(), minlength=n) / counts


def propagate_scores(s0: np.ndarray, s: np.ndarray, alpha: float, iters: int) -> np.ndarray:
    cur = s0.copy()
    for _ in range(iters):
        cur = alpha * (s @ cur) + (1.0 - alpha) * s0
    return cur


def closed_form_propagation(s0: np.ndarray, s: np.ndarray, alpha: float) -> np.ndarray:
    n = s.shape[0]
    return (1.0 - alpha) * np.linalg.solve(np.eye(n) - alpha * s, s0)


def manifold_propagate(smap, labels: np.ndarray, feats, cfg: FusionConfig = FusionConfig()):
    """Diffuse per-superpixel mean saliency over the colour-affinity graph."""
    smap = np.asarray(smap, dtype=np.float64)
    if smap.shape != labels.shape:
        raise ValueError("map and label sizes differ")
    features = np.array([f.feature for f in feats]) if isinstance(feats[0], SuperpixelFeature) \
        else np.asarray(feats, dtype=np.float64)
    if features.shape[0] != int(labels.max()) + 1:
        raise ValueError("one feature per superpixel required")
    s0 = superpixel_means(smap, labels)
    s = propagation_matrix(labels, features, cfg.affinity_sigma)
    out = propagate_scores(s0, s, cfg.propagation_alpha, cfg.propagation_iters)
    return np.maximum(out, 0.0)[labels]
