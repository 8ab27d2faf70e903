"""Configuration, dataset ingestion, end-to-end detection and report writing."""
from __future__ import annotations

import configparser
import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import evaluation as ev
from .fusion import FusionConfig, fuse, manifold_propagate
from .hypergraph import (from_scales, gradient_maps, render, score_hyperedges,
                         vertex_saliency)
from .imagecore import (check_rgb, normalize_saliency, read_image, read_mask, to_uint8,
                        to_feature_colorspace, write_map_png, write_mask_png)
from .meanshift import MeanShiftConfig, multiscale_hyperedges
from .superpixels import label_image, oversegment, superpixel_features
from .svm_saliency import PatchGeometry, global_margin_saliency, svm_saliency_map

log = logging.getLogger(__name__)

CONFIG_ENV = "HYPERSAL_CONFIG"
IMAGE_EXTS = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class PipelineConfig:
    # centre-surround detector
    patch_size: int = 8
    stride: int = 4
    surround_offsets: tuple | None = None
    svm_scales: tuple[float, ...] = (1.0, 0.5, 0.25)
    svm_C: float = 1.0
    center_weight: float = 0.5
    surround_weight: float = 0.01
    svm_variant: str = "local"  # local | global
    # superpixels
    superpixel_count: int = 300
    compactness: float = 10.0
    slic_iters: int = 10
    # mean shift
    gammas: tuple[float, ...] = (0.1, 0.2, 0.4)
    ms_tol: float = 1e-6
    ms_max_iter: int = 100
    merge_fraction: float = 0.1
    # hyperedge scoring
    band_width: int = 3
    omegas: tuple[float, ...] | None = None  # None: 1, 2, 3, ... by scale
    gradient_fraction: float = 0.1
    # fusion and refinement
    fusion: FusionConfig = field(default_factory=FusionConfig)
    refine: bool = True
    # evaluation
    beta2: float = 0.3
    pooled_curves: bool = False
    mask_level: int = 128
    # dataset layout
    images_dir: str = "images"
    masks_dir: str = "masks"
    mask_suffix: str = ".png"
    # run
    jobs: int = 1
    debug: bool = False

    def __post_init__(self):
        if self.svm_variant not in ("local", "global"):
            raise ValueError("svm_variant must be 'local' or 'global'")
        if self.omegas is not None and len(self.omegas) != len(self.gammas):
            raise ValueError("need one omega per gamma")
        if self.omegas is not None and min(self.omegas) <= 0:
            raise ValueError("omegas must be positive")
        if self.band_width < 0 or self.superpixel_count < 1 or self.jobs < 1:
            raise ValueError("band_width >= 0, superpixel_count >= 1, jobs >= 1 required")
        if not 0 < self.gradient_fraction < 1:
            raise ValueError("gradient_fraction must lie in (0, 1)")
        # store the resolved offsets so equal layouts compare equal
        object.__setattr__(self, "surround_offsets", tuple(self.geometry.surround_offsets))
        MeanShiftConfig(gamma=min(self.gammas), tol=self.ms_tol, max_iter=self.ms_max_iter)

    @property
    def geometry(self) -> PatchGeometry:
        return PatchGeometry(self.patch_size, self.stride, self.surround_offsets)

    @property
    def meanshift(self) -> MeanShiftConfig:
        return MeanShiftConfig(gamma=self.gammas[0], tol=self.ms_tol, max_iter=self.ms_max_iter)


# config file: [section] key = value, every key optional
_SCHEMA = {
    "svm": {"patch_size": int, "stride": int, "surround_offsets": "offsets",
            "scales": ("svm_scales", "floats"), "C": ("svm_C", float),
            "center_weight": float, "surround_weight": float, "variant": ("svm_variant", str)},
    "superpixels": {"count": ("superpixel_count", int), "compactness": float,
                    "iterations": ("slic_iters", int)},
    "meanshift": {"gammas": "floats", "tol": ("ms_tol", float),
                  "max_iter": ("ms_max_iter", int), "merge_fraction": float},
    "hypergraph": {"band_width": int, "omegas": "floats", "gradient_fraction": float},
    "fusion": {"weight_svm": "fusion", "weight_hyper": "fusion", "propagation_alpha": "fusion",
               "propagation_iters": "fusion", "affinity_sigma": "fusion", "refine": bool},
    "evaluation": {"beta2": float, "pooled_curves": bool, "mask_level": int},
    "dataset": {"images_dir": str, "masks_dir": str, "mask_suffix": str},
    "run": {"jobs": int, "debug": bool},
}


def _floats(text: str) -> tuple[float, ...]:
    from fractions import Fraction
    return tuple(float(Fraction(t.strip())) for t in text.replace(",", " ").split())


def _offsets(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in text.split(";"):
        if item.strip():
            dx, dy = item.split(",")
            out.append((int(dx), int(dy)))
    return tuple(out)


def load_config(path=None) -> PipelineConfig:
    """Read an INI config; ``None`` or ``"-"`` falls back to $HYPERSAL_CONFIG, then defaults."""
    if path in (None, "-"):
        path = os.environ.get(CONFIG_ENV)
        if not path:
            return PipelineConfig()
    parser = configparser.ConfigParser()
    parser.optionxform = str
    with open(path) as fh:
        parser.read_file(fh)
    kwargs: dict = {}
    fusion_kwargs: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            spec = _SCHEMA[section].get(key)
            if spec is None:
                raise ValueError(f"unknown config key {section}.{key}")
            name, kind = (spec if isinstance(spec, tuple) else (key, spec))
            if kind == "fusion":
                ftype = int if key == "propagation_iters" else float
                fusion_kwargs[key] = ftype(raw)
            elif kind == "floats":
                kwargs[name] = _floats(raw)
            elif kind == "offsets":
                kwargs[name] = _offsets(raw)
            elif kind is bool:
                kwargs[name] = parser.getboolean(section, key)
            else:
                kwargs[name] = kind(raw)
    if fusion_kwargs:
        kwargs["fusion"] = FusionConfig(**fusion_kwargs)
    return PipelineConfig(**kwargs)


def default_config_text() -> str:
    c = PipelineConfig()
    f = c.fusion
    offsets = "; ".join(f"{dx},{dy}" for dx, dy in c.geometry.surround_offsets)
    return f"""[svm]
patch_size = {c.patch_size}
stride = {c.stride}
surround_offsets = {offsets}
scales = 1 1/2 1/4
C = {c.svm_C}
center_weight = {c.center_weight}
surround_weight = {c.surround_weight}
variant = {c.svm_variant}

[superpixels]
count = {c.superpixel_count}
compactness = {c.compactness}
iterations = {c.slic_iters}

[meanshift]
gammas = {' '.join(str(g) for g in c.gammas)}
tol = {c.ms_tol}
max_iter = {c.ms_max_iter}
merge_fraction = {c.merge_fraction}

[hypergraph]
band_width = {c.band_width}
# omegas = 1 2 3
gradient_fraction = {c.gradient_fraction}

[fusion]
weight_svm = {f.weight_svm}
weight_hyper = {f.weight_hyper}
propagation_alpha = {f.propagation_alpha}
propagation_iters = {f.propagation_iters}
affinity_sigma = {f.affinity_sigma}
refine = {str(c.refine).lower()}

[evaluation]
beta2 = {c.beta2}
pooled_curves = {str(c.pooled_curves).lower()}
mask_level = {c.mask_level}

[dataset]
images_dir = {c.images_dir}
masks_dir = {c.masks_dir}
mask_suffix = {c.mask_suffix}

[run]
jobs = {c.jobs}
debug = {str(c.debug).lower()}
"""


@dataclass(frozen=True)
class DatasetEntry:
    image: Path
    mask: Path | None

    @property
    def name(self) -> str:
        return self.image.stem


@dataclass
class DatasetIndex:
    name: str
    entries: list[DatasetEntry]
    skipped: list[tuple[str, str]] = field(default_factory=list)

    @property
    def warnings(self) -> int:
        return len(self.skipped)


def _size(path: Path):
    with Image.open(path) as im:
        return im.size


def ingest_dataset(root, images_dir="images", masks_dir="masks", mask_suffix=".png",
                   name: str | None = None) -> DatasetIndex:
    """Pair images with masks by file stem.

    Images live in ``root/images_dir`` (or directly in ``root`` when that
    directory is absent); masks in ``root/masks_dir`` as ``<stem><mask_suffix>``.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a readable directory")
    img_dir = root / images_dir if (root / images_dir).is_dir() else root
    mask_dir = root / masks_dir
    index = DatasetIndex(name or root.name, [])
    for path in sorted(p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_EXTS):
        try:
            size = _size(path)
        except Exception as exc:  # undecodable file
            index.skipped.append((path.name, f"unreadable image: {exc}"))
            continue
        mask = mask_dir / f"{path.stem}{mask_suffix}"
        if mask.is_file():
            try:
                msize = _size(mask)
            except Exception as exc:
                index.skipped.append((path.name, f"unreadable mask: {exc}"))
                continue
            if msize != size:
                index.skipped.append(
                    (path.name, f"mask size {msize[0]}x{msize[1]} != image {size[0]}x{size[1]}")
                )
                continue
        else:
            mask = None
        index.entries.append(DatasetEntry(path, mask))
    if index.skipped:
        log.warning("%d dataset entries skipped", len(index.skipped))
    return index


@dataclass
class PipelineResult:
    svm_map: np.ndarray
    hyper_map: np.ndarray
    fused_map: np.ndarray
    intermediates: dict | None = None


def run_pipeline(img, cfg: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Both detectors, fusion and refinement; all returned maps lie in [0, 255]."""
    img = check_rgb(img)
    h, w = img.shape[:2]
    if cfg.svm_variant == "local":
        svm = svm_saliency_map(img, cfg.svm_scales, cfg.geometry, cfg.center_weight,
                               cfg.surround_weight, cfg.svm_C)
    else:
        svm = global_margin_saliency(img, cfg.geometry, cfg.svm_C)

    labels = oversegment(img, min(cfg.superpixel_count, h * w), cfg.compactness, cfg.slic_iters)
    feats = superpixel_features(labels, to_feature_colorspace(img))
    points = np.array([f.feature for f in feats])
    scales = multiscale_hyperedges(points, cfg.gammas, cfg.meanshift, cfg.merge_fraction)
    hg = from_scales(len(feats), [s.edges for s in scales])
    grads = gradient_maps(img, cfg.gradient_fraction)
    scores = score_hyperedges(hg, labels, grads, cfg.band_width, cfg.omegas)
    hyper = render(vertex_saliency(hg, scores), labels)

    fused = fuse(svm, hyper, cfg.fusion)
    final = manifold_propagate(fused, labels, feats, cfg.fusion) if cfg.refine else fused
    result = PipelineResult(normalize_saliency(svm), normalize_saliency(hyper),
                            normalize_saliency(final))
    if cfg.debug:
        result.intermediates = {
            "labels": labels, "features": feats, "scales": scales, "hypergraph": hg,
            "gradients": grads, "scores": scores, "fused_raw": fused,
        }
    return result


@dataclass
class EntryResult:
    name: str
    saliency: np.ndarray | None = None  # uint8 final map
    metrics: ev.AdaptiveResult | None = None
    curve: ev.EvalCurve | None = None
    counts: ev.Confusion | None = None
    error: str | None = None
    debug: dict | None = None


def process_entry(entry: DatasetEntry, cfg: PipelineConfig, evaluate: bool) -> EntryResult:
    """Run one image; failures come back as an ``error`` rather than raising."""
    try:
        img = read_image(entry.image)
        res = run_pipeline(img, cfg)
        sal = to_uint8(res.fused_map)
        out = EntryResult(entry.name, sal)
        if cfg.debug:
            out.debug = _debug_payload(res)
        if evaluate and entry.mask is not None:
            gt = read_mask(entry.mask, cfg.mask_level)
            values = sal.astype(np.float64)
            out.metrics = ev.adaptive_metrics(values, gt, cfg.beta2)
            out.curve = ev.pr_roc_curves(values, gt)
            out.counts = ev.confusion_counts(values, gt)
        return out
    except Exception as exc:  # noqa: BLE001 - a bad image must not abort the batch
        return EntryResult(entry.name, error=f"{type(exc).__name__}: {exc}")


def _debug_payload(res: PipelineResult) -> dict:
    it = res.intermediates
    return {
        "svm": res.svm_map, "hyper": res.hyper_map, "fused_raw": it["fused_raw"],
        "labels": it["labels"], "gradient": it["gradients"].magnitude,
        "gradient_binary": it["gradients"].binary,
        "scales": [(s.gamma, s.edges) for s in it["scales"]],
        "edge_rows": [(sc.edge, int(it["hypergraph"].scales[sc.edge]), sc.omega, sc.rho, sc.value)
                      for sc in it["scores"]],
    }


def _run_one(args):
    return process_entry(*args)


def process_dataset(index: DatasetIndex, cfg: PipelineConfig, evaluate: bool = True,
                    jobs: int | None = None) -> list[EntryResult]:
    """Results in index order whatever the degree of parallelism."""
    jobs = jobs or cfg.jobs
    tasks = [(e, cfg, evaluate) for e in index.entries]
    if jobs <= 1 or len(tasks) <= 1:
        return [process_entry(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, tasks))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit_report(index: DatasetIndex, results: list[EntryResult], out_dir,
                pooled: bool = False) -> dict[str, Path]:
    """Write maps, per-image metrics, the dataset curve, a summary and skip reasons."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    skipped = list(index.skipped)
    for r in results:
        if r.error is not None:
            skipped.append((r.name, r.error))
            continue
        write_map_png(out / "maps" / f"{r.name}.png", r.saliency, normalize=False)
        if r.debug:
            _write_debug(out / "debug" / r.name, r.debug)
    written["maps"] = out / "maps"

    scored = [r for r in results if r.metrics is not None]
    if scored:
        _write_csv(out / "metrics.csv", ["image", "f_measure", "voc_overlap", "threshold"],
                   [[r.name, f"{r.metrics.f_measure:.6f}", f"{r.metrics.voc_overlap:.6f}",
                     f"{r.metrics.threshold:.6f}"] for r in scored])
        written["metrics"] = out / "metrics.csv"
        curve = (ev.pooled_curve([r.counts for r in scored]) if pooled
                 else ev.average_curves([r.curve for r in scored]))
        ev.write_curve_csv(out / "curves.csv", curve)
        written["curves"] = out / "curves.csv"
    _write_csv(out / "skipped.csv", ["image", "reason"], skipped)
    written["skipped"] = out / "skipped.csv"

    (out / "summary.txt").write_text(summary_line(index.name, results, scored) + "\n")
    written["summary"] = out / "summary.txt"
    return written


def summary_line(name: str, results, scored) -> str:
    done = sum(r.error is None for r in results)
    line = f"{name}: {done} maps"
    if scored:
        f = np.mean([r.metrics.f_measure for r in scored])
        voc = ev.mean_pm_std([r.metrics.voc_overlap for r in scored])
        line += f", {len(scored)} evaluated, F-measure {f:.2f}, VOC overlap {voc}"
    return line


def _write_debug(folder: Path, dbg: dict) -> None:
    folder.mkdir(parents=True, exist_ok=True)
    write_map_png(folder / "svm.png", dbg["svm"], normalize=False)
    write_map_png(folder / "hyper.png", dbg["hyper"], normalize=False)
    write_map_png(folder / "fused_raw.png", dbg["fused_raw"], normalize=False)
    write_map_png(folder / "gradient.png", dbg["gradient"])
    write_mask_png(folder / "gradient_binary.png", dbg["gradient_binary"])
    Image.fromarray(label_image(dbg["labels"])).save(folder / "superpixels.png", format="PNG")
    with open(folder / "hyperedges.txt", "w") as fh:
        for s, (gamma, edges) in enumerate(dbg["scales"]):
            fh.write(f"# scale {s} gamma {gamma}\n")
            for e in edges:
                fh.write(" ".join(str(v) for v in e) + "\n")
    _write_csv(folder / "edges.csv", ["id", "scale", "omega", "rho", "gamma"],
               [[i, s, f"{o:g}", rho, f"{g:g}"] for i, s, o, rho, g in dbg["edge_rows"]])
