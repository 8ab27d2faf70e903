"""SLIC oversegmentation and per-superpixel mean colour features."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage import color

from .imagecore import check_rgb

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class SuperpixelFeature:
    id: int
    feature: np.ndarray
    pixel_count: int
    centroid: tuple[float, float]  # (x, y)
    touches_border: bool


def seed_grid(h: int, w: int, target_count: int) -> np.ndarray:
    """Regular grid of about ``target_count`` seeds, as (row, col) floats."""
    nx = max(1, min(w, round(math.sqrt(target_count * w / h))))
    ny = max(1, min(h, round(target_count / nx)))
    ys = (np.arange(ny) + 0.5) * h / ny - 0.5
    xs = (np.arange(nx) + 0.5) * w / nx - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1)


def _perturb_seeds(seeds: np.ndarray, lab: np.ndarray) -> np.ndarray:
    # Move each seed to the lowest-gradient pixel of its 3x3 neighbourhood;
    # a seed only moves on a strictly lower gradient.
    h, w = lab.shape[:2]
    gy = np.zeros((h, w))
    gx = np.zeros((h, w))
    gy[1:-1] = np.sum((lab[2:] - lab[:-2]) ** 2, axis=-1)
    gx[:, 1:-1] = np.sum((lab[:, 2:] - lab[:, :-2]) ** 2, axis=-1)
    grad = gx + gy
    out = seeds.copy()
    for k, (y, x) in enumerate(np.rint(seeds).astype(int)):
        best, by, bx = grad[y, x], y, x
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and grad[yy, xx] < best:
                    best, by, bx = grad[yy, xx], yy, xx
        out[k] = (by, bx)
    return out


def _slic_assign(lab, seeds, step, compactness, n_iter):
    h, w = lab.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    centers = np.hstack([seeds, np.array([lab[int(round(y)), int(round(x))] for y, x in seeds])])
    labels = np.full((h, w), -1, dtype=np.int64)
    ratio = (compactness / step) ** 2
    radius = int(math.ceil(step))
    for _ in range(n_iter):
        dist = np.full((h, w), np.inf)
        for k, (cy, cx, *cl) in enumerate(centers):
            y0, y1 = max(0, int(cy) - radius), min(h, int(cy) + radius + 2)
            x0, x1 = max(0, int(cx) - radius), min(w, int(cx) + radius + 2)
            patch = lab[y0:y1, x0:x1]
            d = np.sum((patch - np.asarray(cl)) ** 2, axis=-1)
            d = d + ratio * ((ys[y0:y1, x0:x1] - cy) ** 2 + (xs[y0:y1, x0:x1] - cx) ** 2)
            sub = dist[y0:y1, x0:x1]
            better = d < sub
            sub[better] = d[better]
            labels[y0:y1, x0:x1][better] = k
        unassigned = labels < 0
        if unassigned.any():
            # Fall back to the spatially nearest centre.
            pts = np.stack([ys[unassigned], xs[unassigned]], axis=1)
            d2 = ((pts[:, None, :] - centers[None, :, :2]) ** 2).sum(-1)
            labels[unassigned] = np.argmin(d2, axis=1)
        counts = np.bincount(labels.ravel(), minlength=len(centers)).astype(float)
        alive = counts > 0
        for j, plane in enumerate([ys, xs] + [lab[..., c] for c in range(3)]):
            sums = np.bincount(labels.ravel(), weights=plane.ravel(), minlength=len(centers))
            centers[alive, j] = sums[alive] / counts[alive]
    return labels


def adjacent_pairs(labels: np.ndarray) -> np.ndarray:
    pairs = np.concatenate([
        np.stack([labels[:, :-1].ravel(), labels[:, 1:].ravel()], axis=1),
        np.stack([labels[:-1, :].ravel(), labels[1:, :].ravel()], axis=1),
    ])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


def adjacency(labels: np.ndarray) -> list[list[int]]:
    """4-adjacency neighbour lists of the regions in ``labels``."""
    n = int(labels.max()) + 1
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for a, b in adjacent_pairs(labels):
        nbrs[a].add(int(b))
        nbrs[b].add(int(a))
    return [sorted(s) for s in nbrs]


def relabel_sequential(labels: np.ndarray) -> np.ndarray:
    """Renumber to 0..Q-1 in raster order of first appearance."""
    _, first = np.unique(labels.ravel(), return_index=True)
    order = labels.ravel()[np.sort(first)]
    lut = np.empty(int(labels.max()) + 1, dtype=np.int64)
    lut[order] = np.arange(order.size)
    return lut[labels]


def enforce_connectivity(labels: np.ndarray, lab: np.ndarray, min_size: int) -> np.ndarray:
    """Make every label 4-connected.

    Orphan fragments (any piece split off a label's largest component, or
    any component below ``min_size`` pixels) are merged into their most
    colour-similar 4-neighbour, smallest first.
    """
    comp = np.zeros_like(labels)
    main = []
    nxt = 0
    for k in np.unique(labels):
        cc, n = ndimage.label(labels == k, structure=FOUR_CONNECTED)
        mask = cc > 0
        comp[mask] = cc[mask] - 1 + nxt
        sz = np.bincount(cc[mask], minlength=n + 1)[1:]
        main.extend(i == int(np.argmax(sz)) for i in range(n))
        nxt += n
    flat = comp.ravel()
    n = nxt
    sizes = np.bincount(flat, minlength=n)
    sums = np.stack(
        [np.bincount(flat, weights=lab[..., c].ravel(), minlength=n) for c in range(3)], axis=1
    )
    nbrs = [set(x) for x in adjacency(comp)]
    parent = np.arange(n)
    orphan = ~np.array(main) | (sizes < min_size)
    heap = [(int(sizes[i]), i) for i in np.flatnonzero(orphan)]
    heapq.heapify(heap)
    while heap:
        size, k = heapq.heappop(heap)
        if parent[k] != k or size != sizes[k] or not nbrs[k]:
            continue
        if not orphan[k] and sizes[k] >= min_size:
            continue
        cands = sorted(nbrs[k])
        mean_k = sums[k] / sizes[k]
        d = [float(np.sum((mean_k - sums[j] / sizes[j]) ** 2)) for j in cands]
        t = cands[int(np.argmin(d))]
        parent[k] = t
        sizes[t] += sizes[k]
        sums[t] += sums[k]
        for j in nbrs[k]:
            nbrs[j].discard(k)
            if j != t:
                nbrs[j].add(t)
                nbrs[t].add(j)
        nbrs[k] = set()
        if orphan[t] or sizes[t] < min_size:
            heapq.heappush(heap, (int(sizes[t]), t))
    root = parent.copy()
    for i in range(n):
        r = i
        while root[r] != r:
            r = root[r]
        root[i] = r
    return relabel_sequential(root[comp])


def oversegment(img, target_count: int = 300, compactness: float = 10.0,
                n_iter: int = 10) -> np.ndarray:
    """SLIC superpixels; returns an (H, W) int label map with ids 0..Q-1."""
    img = check_rgb(img)
    h, w = img.shape[:2]
    if target_count < 1:
        raise ValueError("target_count must be positive")
    if target_count > h * w:
        raise ValueError(f"target_count {target_count} exceeds pixel count {h * w}")
    lab = color.rgb2lab(img)
    step = math.sqrt(h * w / target_count)
    seeds = seed_grid(h, w, target_count)
    if step >= 3:
        seeds = _perturb_seeds(seeds, lab)
    labels = _slic_assign(lab, seeds, step, compactness, n_iter)
    min_size = max(1, int((h * w / target_count) / 4))
    return enforce_connectivity(labels, lab, min_size)


def superpixel_features(labels: np.ndarray, grid: np.ndarray) -> list[SuperpixelFeature]:
    labels = np.asarray(labels)
    if labels.shape != grid.shape[:2]:
        raise ValueError("label map and feature grid differ in size")
    h, w = labels.shape
    n = int(labels.max()) + 1
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n)
    feats = np.stack(
        [np.bincount(flat, weights=grid[..., c].ravel(), minlength=n) for c in range(grid.shape[2])],
        axis=1,
    ) / counts[:, None]
    ys, xs = np.mgrid[0:h, 0:w]
    cy = np.bincount(flat, weights=ys.ravel(), minlength=n) / counts
    cx = np.bincount(flat, weights=xs.ravel(), minlength=n) / counts
    border = np.zeros((h, w), dtype=bool)
    border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
    touches = np.bincount(flat[border.ravel()], minlength=n) > 0
    return [
        SuperpixelFeature(i, np.clip(feats[i], 0.0, 1.0), int(counts[i]),
                          (float(cx[i]), float(cy[i])), bool(touches[i]))
        for i in range(n)
    ]


def feature_matrix(feats: list[SuperpixelFeature]) -> np.ndarray:
    return np.array([f.feature for f in feats])


def label_image(labels: np.ndarray) -> np.ndarray:
    """Colour-indexed uint8 RGB rendering of a label map (debug output)."""
    rng = np.random.default_rng(0)
    palette = rng.integers(0, 256, size=(int(labels.max()) + 1, 3), dtype=np.uint8)
    return palette[labels]
