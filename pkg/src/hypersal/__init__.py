"""Salient object detection with a centre-surround LS-SVM and a mean-shift hypergraph."""
from .evaluation import adaptive_metrics, f_measure, pr_roc_curves, voc_overlap
from .fusion import FusionConfig, fuse, manifold_propagate
from .hypergraph import build_incidence, gradient_maps, score_hyperedges, vertex_saliency
from .imagecore import (downsample, normalize_saliency, read_image, read_mask,
                        to_feature_colorspace, write_map_png)
from .meanshift import MeanShiftConfig, cluster_modes, multiscale_hyperedges
from .pipeline import PipelineConfig, load_config, run_pipeline
from .superpixels import oversegment, superpixel_features
from .svm_saliency import (LsSvmProblem, PatchGeometry, global_margin_saliency,
                           solve_weighted_lssvm, svm_saliency_map, svm_saliency_score)

__version__ = "0.1.0"
