"""Acceptance criteria, one marked group per criterion (see conftest for the summary lines)."""
import os
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg

from hypersal import cli
from hypersal.evaluation import f_beta, pr_roc_curves, voc_overlap
from hypersal.fusion import closed_form_propagation, propagate_scores, propagation_matrix
from hypersal.hypergraph import (build_incidence, gradient_maps, hyperedge_saliency,
                                 top_fraction_threshold, vertex_saliency)
from hypersal.meanshift import (MeanShiftConfig, cluster_modes, meanshift_step,
                                plain_mean_shift)
from hypersal.pipeline import PipelineConfig, run_pipeline
from hypersal.svm_saliency import (LsSvmProblem, PatchGeometry, extract_center_surround,
                                   kkt_residual, solve_weighted_lssvm, svm_saliency_score)

crit = pytest.mark.criterion
DATASET_ENV = "HYPERSAL_DATASET"


def synthetic_square(size=64, side=16):
    img = np.full((size, size, 3), 0.5)
    lo = (size - side) // 2
    img[lo:lo + side, lo:lo + side] = (1.0, 0.1, 0.1)
    inside = np.zeros((size, size), dtype=bool)
    inside[lo:lo + side, lo:lo + side] = True
    return img, inside


def natural_like(seed, size=64):
    # smooth random blobs over a textured background
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / size
    img = 0.3 + 0.1 * rng.random((size, size, 3))
    for _ in range(3):
        cy, cx, r = rng.random(3) * [1, 1, 0.3]
        blob = np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * (0.05 + r) ** 2))
        img += blob[..., None] * rng.random(3)
    return np.clip(img, 0, 1)


# --- LS-SVM solver ---------------------------------------------------------

def dense_reference(prob):
    # assemble the bordered system from scratch and hand it to LAPACK via scipy
    x, y, nu, C = prob.samples, prob.labels, prob.weights, prob.C
    n = len(y)
    a = np.zeros((n + 1, n + 1))
    a[0, 1:] = a[1:, 0] = 1.0
    a[1:, 1:] = x @ x.T + np.diag(1.0 / (C * nu))
    z = scipy.linalg.solve(a, np.concatenate([[0.0], y]), assume_a="sym")
    return z


@crit("LS-SVM solver correctness")
def test_lssvm_solver_correctness():
    rng = np.random.default_rng(2024)
    problems = []
    for _ in range(1000):
        n, d = int(rng.integers(2, 51)), int(rng.integers(1, 201))
        x = rng.random((n, d))
        problems.append(LsSvmProblem.center_surround(x[0], x[1:], C=1.0))
    t0 = time.perf_counter()
    sols = [solve_weighted_lssvm(p) for p in problems]
    elapsed = time.perf_counter() - t0
    worst_res = worst_rel = 0.0
    for p, s in zip(problems, sols):
        worst_res = max(worst_res, kkt_residual(p, s))
        ref = dense_reference(p)
        got = np.concatenate([[s.bias], s.alpha])
        worst_rel = max(worst_rel, np.linalg.norm(got - ref) / np.linalg.norm(ref))
    print(f"residual {worst_res:.2e}, relative error {worst_rel:.2e}, {elapsed:.2f}s")
    assert worst_res <= 1e-8
    assert worst_rel <= 1e-10
    assert elapsed < 5.0


# --- SSa contract -------------------------------------------------------------

@crit("SSa contract")
def test_ssa_symmetric_two_sample_bias():
    for v in (0.3, 1.0, 4.0):
        prob = LsSvmProblem([[v, -v], [-v, v]], [1, -1], [0.5, 0.5], 1.0)
        assert abs(solve_weighted_lssvm(prob).bias) <= 1e-10


@crit("SSa contract")
def test_ssa_in_unit_interval():
    rng = np.random.default_rng(7)
    for _ in range(500):
        n, d = int(rng.integers(2, 12)), int(rng.integers(1, 200))
        x = rng.random((n, d))
        prob = LsSvmProblem.center_surround(x[0], x[1:])
        assert 0.0 <= svm_saliency_score(solve_weighted_lssvm(prob), prob) <= 1.0


@crit("SSa contract")
def test_ssa_separable_center_is_one():
    rng = np.random.default_rng(3)
    for _ in range(10):
        img = 0.1 * rng.random((32, 32, 3))
        img[12:20, 12:20] = 1.0
        prob = extract_center_surround(img, (12, 12), PatchGeometry())
        assert svm_saliency_score(solve_weighted_lssvm(prob), prob) == 1.0


# --- mean shift -----------------------------------------------------------------

def rescaled_density(p, points, gamma):
    d2 = ((p[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / (2 * gamma**2)).mean(axis=1)


@crit("Mean-shift oracle equivalence")
def test_meanshift_agglomerative_equals_plain():
    rng = np.random.default_rng(11)
    mismatches = 0
    for _ in range(100):
        q = int(rng.integers(2, 201))
        pts = rng.random((q, 8))
        cfg = MeanShiftConfig(gamma=float(rng.choice([0.1, 0.2, 0.4])), max_iter=10000)
        a, b = cluster_modes(pts, cfg), plain_mean_shift(pts, cfg)
        mismatches += not np.array_equal(a.assignment, b.assignment)
    assert mismatches == 0


@crit("Mean-shift oracle equivalence")
def test_meanshift_density_ascent():
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(100):
        q = int(rng.integers(2, 201))
        pts = rng.random((q, 8))
        gamma = float(rng.choice([0.1, 0.2, 0.4]))
        cfg = MeanShiftConfig(gamma=gamma)
        cur = pts.copy()
        dens = rescaled_density(cur, pts, gamma)
        for _ in range(cfg.max_iter):
            nxt = meanshift_step(cur, pts, cfg)  # every point's trajectory advances together
            nd = rescaled_density(nxt, pts, gamma)
            worst = min(worst, float((nd - dens).min()))
            if np.max(np.linalg.norm(nxt - cur, axis=1)) < cfg.tol:
                break
            cur, dens = nxt, nd
    assert worst >= -1e-12


@crit("Mean-shift oracle equivalence")
def test_meanshift_three_clusters():
    rng = np.random.default_rng(13)
    centers = np.array([[0.2] * 8, [0.5] * 8, [0.8] * 8])
    pts = np.clip(np.concatenate([c + 0.02 * rng.normal(size=(30, 8)) for c in centers]), 0, 1)
    small = cluster_modes(pts, MeanShiftConfig(gamma=0.1))
    assert len(small.modes) == 3
    assert small.clusters() == [list(range(30)), list(range(30, 60)), list(range(60, 90))]
    assert len(cluster_modes(pts, MeanShiftConfig(gamma=1.0)).modes) == 1


# --- hypergraph -------------------------------------------------------------------

@pytest.fixture(scope="module")
def pipeline_runs():
    imgs = [synthetic_square()[0], natural_like(0), natural_like(1), natural_like(2)]
    cfg = PipelineConfig(debug=True)
    return [(img, run_pipeline(img, cfg)) for img in imgs]


@crit("Hypergraph invariants")
def test_pipeline_hyperedges_partition_vertices(pipeline_runs):
    for _, res in pipeline_runs:
        it = res.intermediates
        n = len(it["features"])
        for s in it["scales"]:
            members = [v for e in s.edges for v in e]
            assert len(members) == len(set(members)) == n
        assert np.all(it["hypergraph"].incidence.sum(axis=1) == len(it["scales"]))


@crit("Hypergraph invariants")
def test_vertex_saliency_matches_double_loop():
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(200):
        nv, ne = int(rng.integers(1, 101)), int(rng.integers(1, 31))
        edges = [set(rng.choice(nv, size=int(rng.integers(1, nv + 1)), replace=False).tolist())
                 for _ in range(ne)]
        edges[0] |= set(range(nv))  # cover V
        hg = build_incidence(nv, edges)
        gam = rng.random(ne) * 50
        naive = [sum(gam[j] for j in range(ne) if v in edges[j]) for v in range(nv)]
        worst = max(worst, float(np.max(np.abs(vertex_saliency(hg, gam) - naive))))
        ints = rng.integers(0, 100, ne)
        naive_int = [sum(int(ints[j]) for j in range(ne) if v in edges[j]) for v in range(nv)]
        assert vertex_saliency(hg, ints).tolist() == naive_int
    assert worst <= 1e-12


# --- gradient thresholding --------------------------------------------------------

@crit("Gradient thresholding")
def test_top_ten_percent_against_sort():
    rng = np.random.default_rng(31)
    for _ in range(200):
        h, w = int(rng.integers(3, 40)), int(rng.integers(3, 40))
        vals = rng.permutation(h * w).astype(float).reshape(h, w) + rng.random()
        _, mask = top_fraction_threshold(vals, 0.1)
        k = int(np.floor(0.1 * h * w))
        assert set(vals[mask].tolist()) == set(np.sort(vals.ravel())[h * w - k:].tolist())


@crit("Gradient thresholding")
def test_constant_images_have_empty_edge_map():
    for v in (0.0, 0.37, 1.0):
        assert not gradient_maps(np.full((17, 23, 3), v)).binary.any()


# --- hyperedge score ----------------------------------------------------------------

@crit("Hyperedge score properties")
def test_gamma_linear_in_omega():
    rng = np.random.default_rng(41)
    maps = gradient_maps(rng.random((30, 30, 3)))
    for _ in range(50):
        region = rng.random((30, 30)) < 0.3
        band = rng.random((30, 30)) < 0.5
        a = hyperedge_saliency(0, maps, band, 1.0, region)
        b = hyperedge_saliency(0, maps, band, 2.0, region)
        if a.raw != 0:
            assert b.raw / a.raw == 2.0


@crit("Hyperedge score properties")
def test_rho_per_scale_is_perimeter_and_gamma_non_negative(pipeline_runs):
    for img, res in pipeline_runs:
        h, w = img.shape[:2]
        hg, scores = res.intermediates["hypergraph"], res.intermediates["scores"]
        for s in range(len(res.intermediates["scales"])):
            assert sum(sc.rho for sc in scores if hg.scales[sc.edge] == s) == 2 * (h + w) - 4
        assert all(sc.value >= 0 for sc in scores)


# --- metrics --------------------------------------------------------------------------

@crit("Metric identities")
def test_metric_identities():
    for x in np.linspace(0, 1, 101):
        assert abs(f_beta(x, x, 0.3) - x) <= 1e-12
    assert abs(f_beta(0.8, 0.4, 0.3) - 0.65) <= 1e-12
    rng = np.random.default_rng(51)
    for _ in range(100):
        a, b = rng.random((2, 12, 12)) < 0.4
        assert voc_overlap(a, b) == voc_overlap(b, a)
        assert voc_overlap(a, a) == 1.0
    a = np.zeros((8, 8), bool)
    b = np.zeros((8, 8), bool)
    a[:3], b[5:] = True, True
    assert voc_overlap(a, b) == 0.0


@crit("Metric identities")
def test_curve_monotonicity():
    rng = np.random.default_rng(52)
    for _ in range(100):
        smap = rng.integers(0, 256, (20, 20)).astype(float)
        gt = rng.random((20, 20)) < 0.3
        gt[0, 0], gt[0, 1] = True, False
        c = pr_roc_curves(smap, gt)
        assert np.all(np.diff(c.recall) <= 0) and np.all(np.diff(c.fpr) <= 0)


# --- propagation ------------------------------------------------------------------------

@crit("Manifold propagation")
def test_propagation_matches_closed_form():
    rng = np.random.default_rng(61)
    alpha = 0.99
    iters = int(np.ceil(np.log(1e-8) / np.log(alpha)))
    for _ in range(20):
        labels = rng.permutation(np.arange(20).repeat(5)).reshape(10, 10)
        s = propagation_matrix(labels, rng.random((20, 8)), 0.1)
        s0 = rng.random(20)
        ref = closed_form_propagation(s0, s, alpha)
        got = propagate_scores(s0, s, alpha, iters)
        assert np.linalg.norm(got - ref) / np.linalg.norm(ref) <= 1e-6


# --- end to end --------------------------------------------------------------------------

@crit("End-to-end synthetic")
def test_end_to_end_square():
    img, inside = synthetic_square()
    t0 = time.perf_counter()
    res = run_pipeline(img)
    elapsed = time.perf_counter() - t0
    ratio = res.fused_map[inside].mean() / max(res.fused_map[~inside].mean(), 1e-12)
    print(f"inside/outside {ratio:.1f}, {elapsed:.2f}s")
    assert ratio >= 2.0
    assert elapsed < 10.0


@crit("End-to-end synthetic")
def test_end_to_end_constant():
    for colour in ((0.5, 0.5, 0.5), (0.9, 0.2, 0.1)):
        res = run_pipeline(np.ones((64, 64, 3)) * colour)
        assert np.all(res.fused_map == 0)


# --- determinism ---------------------------------------------------------------------------

def _make_dataset(root: Path):
    from PIL import Image
    (root / "images").mkdir(parents=True)
    (root / "masks").mkdir()
    for i in range(4):
        img = (natural_like(10 + i, 48) * 255).astype(np.uint8)
        Image.fromarray(img).save(root / "images" / f"img{i}.png")
        mask = np.zeros((48, 48), np.uint8)
        mask[10 + i:30, 12:34 - i] = 255
        Image.fromarray(mask).save(root / "masks" / f"img{i}.png")


def _snapshot(out: Path):
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


@crit("Determinism")
def test_batch_runs_are_byte_identical(tmp_path):
    _make_dataset(tmp_path / "ds")
    runs = []
    for k, jobs in enumerate(("1", "3")):
        out = tmp_path / f"out{k}"
        assert cli.main(["evaluate", "-", str(tmp_path / "ds"), str(out), "--jobs", jobs,
                         "--debug-intermediates"]) == 0
        runs.append(_snapshot(out))
    assert any(name.endswith(".csv") for name in runs[0])
    assert runs[0] == runs[1]


# --- user-supplied dataset ----------------------------------------------------------------------

@crit("Dataset smoke", soft=True)
def test_dataset_smoke(tmp_path):
    root = os.environ.get(DATASET_ENV)
    if not root:
        pytest.skip(f"set {DATASET_ENV} to an images/ + masks/ directory to run")
    from hypersal.pipeline import ingest_dataset, load_config, process_dataset
    cfg = load_config("-")
    index = ingest_dataset(root, cfg.images_dir, cfg.masks_dir, cfg.mask_suffix)
    results = [r for r in process_dataset(index, cfg) if r.metrics is not None]
    if len(results) < 50:
        pytest.skip(f"only {len(results)} evaluated images; need at least 50")
    voc = np.mean([r.metrics.voc_overlap for r in results])
    f = np.mean([r.metrics.f_measure for r in results])
    print(f"mean VOC overlap {voc:.3f}, mean F-measure {f:.3f} over {len(results)} images")
    assert voc >= 0.55 and f >= 0.60
