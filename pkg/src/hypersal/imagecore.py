"""Image buffers, colour features, resampling and saliency-map normalisation.

Images are plain ``float64`` arrays of shape ``(H, W, 3)`` with channels in
``[0, 1]``; saliency maps are ``(H, W)`` arrays of non-negative reals.
"""
from __future__ import annotations

from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image
from skimage import color

MIN_SIDE = 8
FEATURE_DIM = 8


class ImageError(ValueError):
    pass


def check_rgb(img) -> np.ndarray:
    """Validate an RGB image and return it as a float64 array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageError("image must be at least 1x1")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ImageError("channel values must lie in [0, 1]")
    return arr


def _minmax(channel: np.ndarray) -> np.ndarray:
    lo, hi = channel.min(), channel.max()
    if hi <= lo:
        return np.zeros_like(channel)
    return np.clip((channel - lo) / (hi - lo), 0.0, 1.0)


def hue(img: np.ndarray) -> np.ndarray:
    """HSV hue in [0, 1); achromatic pixels get hue 0."""
    h = color.rgb2hsv(img)[..., 0]
    achromatic = img.max(axis=2) == img.min(axis=2)
    h = np.where(achromatic, 0.0, h)
    return np.clip(h, 0.0, 1.0)


def to_feature_colorspace(img) -> np.ndarray:
    """Per-pixel 8-d colour feature ``(l, a, b, h, l^2, a^2, b^2, h^2)``.

    ``l, a, b`` come from CIELAB (D65) and are min-max normalised over the
    image; a constant channel normalises to zero.  ``h`` is the HSV hue.
    """
    img = check_rgb(img)
    lab = color.rgb2lab(img, illuminant="D65")
    comps = [_minmax(lab[..., k]) for k in range(3)]
    comps.append(hue(img))
    base = np.stack(comps, axis=-1)
    return np.concatenate([base, base**2], axis=-1)


def output_size(n: int, rate) -> int:
    r = Fraction(rate).limit_denominator(10**6)
    return int(r * n + Fraction(1, 2))


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    # Row i averages input cells overlapping [i, i+1) * n_in / n_out.
    scale = n_in / n_out
    lo = np.arange(n_out)[:, None] * scale
    hi = lo + scale
    j = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, j + 1) - np.maximum(lo, j), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    # Pixel-centre aligned linear interpolation, edges clamped.
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = pos - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - t)
    np.add.at(m, (rows, i1), t)
    return m


def _apply_separable(arr: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        return rows @ arr @ cols.T
    tmp = np.tensordot(rows, arr, axes=(1, 0))  # (oh, w, c)
    return np.tensordot(tmp, cols, axes=(1, 1)).transpose(0, 2, 1)


def downsample(img, rate, min_side: int = MIN_SIDE) -> np.ndarray:
    """Box-filter (area-averaging) resize by ``rate`` in (0, 1]."""
    img = check_rgb(img)
    if not 0 < float(rate) <= 1:
        raise ImageError(f"downsampling rate must be in (0, 1], got {rate}")
    h, w = img.shape[:2]
    oh, ow = output_size(h, rate), output_size(w, rate)
    if min(oh, ow) < min_side:
        raise ImageError(
            f"rate {rate} shrinks {h}x{w} to {oh}x{ow}, below the {min_side}px minimum"
        )
    if (oh, ow) == (h, w):
        return img.copy()
    out = _apply_separable(img, _area_matrix(h, oh), _area_matrix(w, ow))
    return np.clip(out, 0.0, 1.0)


def resize_bilinear(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[:2]
    if (h, w) == tuple(shape):
        return arr.copy()
    return _apply_separable(arr, _bilinear_matrix(h, shape[0]), _bilinear_matrix(w, shape[1]))


def normalize_saliency(smap) -> np.ndarray:
    """Linearly map values onto [0, 255]; a constant map becomes all zero."""
    smap = np.asarray(smap, dtype=np.float64)
    lo, hi = smap.min(), smap.max()
    if hi <= lo:
        return np.zeros_like(smap)
    return np.clip((smap - lo) / (hi - lo) * 255.0, 0.0, 255.0)


def to_uint8(smap: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(smap), 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def read_mask(path, level: int = 128) -> np.ndarray:
    """Binary ground-truth mask from a grayscale image (foreground >= level)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= level


def write_map_png(path, smap: np.ndarray, normalize: bool = True) -> None:
    data = normalize_saliency(smap) if normalize else smap
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(data)).save(path, format="PNG")


def write_mask_png(path, mask: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path, format="PNG")
