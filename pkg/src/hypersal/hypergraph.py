"""Hypergraph saliency over superpixels.

Vertices are superpixels and hyperedges are the mean-shift clusters at every
bandwidth.  A hyperedge is salient when its outline follows strong image
edges and it keeps away from the image frame:

    Gamma(e) = max(0, omega_e * (|I_g* o M_g(e)|_1 - rho(e)))

and a vertex collects the saliency of every hyperedge containing it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class Hypergraph:
    vertex_count: int
    hyperedges: list[tuple[int, ...]]
    scales: np.ndarray  # per-edge scale index (0-based)
    incidence: np.ndarray  # (|V|, |E|) uint8

    @property
    def edge_count(self) -> int:
        return len(self.hyperedges)


@dataclass(frozen=True)
class GradientMaps:
    magnitude: np.ndarray  # I_g
    binary: np.ndarray  # I_g*
    threshold: float
    ties: int  # pixels exactly at the threshold


@dataclass(frozen=True)
class HyperedgeScore:
    edge: int
    omega: float
    rho: int
    edge_hits: int  # |I_g* o M_g(e)|_1
    raw: float  # before clamping
    value: float


def build_incidence(vertex_count: int, hyperedges, scales=None) -> Hypergraph:
    edges = [tuple(sorted(int(v) for v in e)) for e in hyperedges]
    h = np.zeros((vertex_count, len(edges)), dtype=np.uint8)
    for j, e in enumerate(edges):
        if not e:
            raise ValueError(f"hyperedge {j} is empty")
        if e[0] < 0 or e[-1] >= vertex_count:
            raise ValueError(f"hyperedge {j} has a vertex id outside [0, {vertex_count})")
        h[list(e), j] = 1
    uncovered = np.flatnonzero(h.sum(axis=1) == 0)
    if uncovered.size:
        raise ValueError(f"vertices {uncovered.tolist()} belong to no hyperedge")
    scales = np.zeros(len(edges), dtype=int) if scales is None else np.asarray(scales, dtype=int)
    return Hypergraph(vertex_count, edges, scales, h)


def from_scales(vertex_count: int, per_scale) -> Hypergraph:
    """Hypergraph from a list of per-scale partitions (lists of member lists)."""
    edges, scales = [], []
    for s, partition in enumerate(per_scale):
        for e in partition:
            edges.append(e)
            scales.append(s)
    return build_incidence(vertex_count, edges, scales)


def luminance(img: np.ndarray) -> np.ndarray:
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    return np.hypot(gx, gy)


def top_fraction_threshold(values: np.ndarray, fraction: float = 0.1):
    """Nearest-rank percentile threshold T and the strict mask ``values > T``."""
    flat = np.sort(np.asarray(values, dtype=np.float64).ravel())
    rank = int(np.ceil((1.0 - fraction) * flat.size - 1e-9))
    t = float(flat[max(rank, 1) - 1])
    return t, values > t


def gradient_maps(img, fraction: float = 0.1) -> GradientMaps:
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError("gradient maps need at least a 3x3 image")
    mag = sobel_magnitude(luminance(img))
    t, binary = top_fraction_threshold(mag, fraction)
    return GradientMaps(mag, binary, t, int(np.count_nonzero(mag == t)))


def region_mask(edge, labels: np.ndarray) -> np.ndarray:
    return np.isin(labels, np.asarray(list(edge)))


def boundary_band_mask(edge, labels: np.ndarray, band_width: int = 3) -> np.ndarray:
    """Pixels within ``band_width`` (Chebyshev) of the hyperedge's contour.

    The contour is the set of region pixels with an 8-neighbour outside the
    region; pixels beyond the image frame count as outside.
    """
    region = region_mask(edge, labels)
    inner = ndimage.binary_erosion(region, structure=np.ones((3, 3)), border_value=0)
    contour = region & ~inner
    if band_width == 0 or not contour.any():
        return contour
    dist = ndimage.distance_transform_cdt(~contour, metric="chessboard")
    return dist <= band_width


def border_pixels(shape) -> np.ndarray:
    b = np.zeros(shape, dtype=bool)
    b[0, :] = b[-1, :] = b[:, 0] = b[:, -1] = True
    return b


def hyperedge_saliency(edge_id: int, maps: GradientMaps, band: np.ndarray, omega: float,
                       region: np.ndarray) -> HyperedgeScore:
    if band.shape != maps.binary.shape or region.shape != maps.binary.shape:
        raise ValueError("mask and gradient map sizes differ")
    hits = int(np.count_nonzero(maps.binary & band))
    rho = int(np.count_nonzero(region & border_pixels(region.shape)))
    raw = omega * (hits - rho)
    return HyperedgeScore(edge_id, float(omega), rho, hits, float(raw), max(0.0, float(raw)))


def score_hyperedges(hg: Hypergraph, labels: np.ndarray, maps: GradientMaps,
                     band_width: int = 3, omegas=None) -> list[HyperedgeScore]:
    """Score every hyperedge; ``omega`` defaults to the 1-based scale index."""
    out = []
    for j, e in enumerate(hg.hyperedges):
        omega = float(hg.scales[j] + 1) if omegas is None else float(omegas[hg.scales[j]])
        band = boundary_band_mask(e, labels, band_width)
        out.append(hyperedge_saliency(j, maps, band, omega, region_mask(e, labels)))
    return out


def vertex_saliency(hg: Hypergraph, scores) -> np.ndarray:
    gamma = np.array([s.value if isinstance(s, HyperedgeScore) else s for s in scores], float)
    if gamma.shape != (hg.edge_count,):
        raise ValueError("need exactly one score per hyperedge")
    return hg.incidence.astype(np.float64) @ gamma


def pairwise_saliency_baseline(adjacency, d) -> np.ndarray:
    """Sum of pairwise edge saliencies over each vertex's neighbourhood.

    ``d`` maps an unordered pair ``(i, j)`` to its saliency, either as a dict
    or as a dense symmetric matrix.
    """
    out = np.zeros(len(adjacency))
    for i, nbrs in enumerate(adjacency):
        for j in nbrs:
            if isinstance(d, dict):
                key = (i, j) if (i, j) in d else (j, i)
                out[i] += d[key]
            else:
                out[i] += d[i][j]
    return out


def render(values: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Paint each superpixel with its vertex value."""
    return np.asarray(values, dtype=np.float64)[labels]
