"""Elastic statistical shape analysis of two-layer root trees."""

from .tree_model import (
    Branch,
    Lateral,
    RootTree,
    RootFormatError,
    TreeValidationError,
    augment_collection,
    augment_pair,
    extract_bio_params,
    load_collection,
    load_root,
    normalize_scale,
    resample_branch,
    resample_tree,
    save_root,
)
from .srvf import (
    Srvf,
    SrvfTree,
    Weights,
    from_srvf,
    l2_dist_sq,
    srvft_to_tree,
    to_srvf,
    tree_to_srvft,
)
from .registration import (
    Gamma,
    Registration,
    apply_registration,
    match_laterals,
    optimal_reparam_main,
    optimal_rotation,
    preshape_dissimilarity_sq,
    register,
)
from .metric import (
    DistanceMatrix,
    Geodesic,
    PairOptions,
    distance,
    distance_sq,
    geodesic,
    pairwise_matrix,
)
from .statistics import (
    Atlas,
    RegressionModel,
    exp_map,
    fit_atlas,
    fit_regression,
    karcher_mean,
    log_map,
    mode_path,
    predict,
    sample_random,
)
from .clustering import Dendrogram, cut, linkage
from .render import RenderStyle, render_dendrogram, render_tree, render_tree_row

__version__ = "0.1.0"

__all__ = [
    "Atlas",
    "Branch",
    "Dendrogram",
    "DistanceMatrix",
    "Gamma",
    "Geodesic",
    "Lateral",
    "PairOptions",
    "RegressionModel",
    "Registration",
    "RenderStyle",
    "RootFormatError",
    "RootTree",
    "Srvf",
    "SrvfTree",
    "TreeValidationError",
    "Weights",
    "apply_registration",
    "augment_collection",
    "augment_pair",
    "cut",
    "distance",
    "distance_sq",
    "exp_map",
    "extract_bio_params",
    "fit_atlas",
    "fit_regression",
    "from_srvf",
    "geodesic",
    "karcher_mean",
    "l2_dist_sq",
    "linkage",
    "load_collection",
    "load_root",
    "log_map",
    "match_laterals",
    "mode_path",
    "normalize_scale",
    "optimal_reparam_main",
    "optimal_rotation",
    "pairwise_matrix",
    "predict",
    "preshape_dissimilarity_sq",
    "register",
    "render_dendrogram",
    "render_tree",
    "render_tree_row",
    "resample_branch",
    "resample_tree",
    "sample_random",
    "save_root",
    "srvft_to_tree",
    "to_srvf",
    "tree_to_srvft",
]
