"""Synthetic scenes with exact ground truth, oracle features and pose metrics."""
from .scene import (
    PoseGap,
    SyntheticObject,
    ViewPair,
    default_intrinsics,
    gen_object,
    make_pair,
    render_color,
    render_depth,
)
from .oracle import OracleExtractor, oracle_features
from .metrics import add_metric, adds_metric, auc_add, recall_add01d
from .evaluate import EvalConfig, MetricsReport, eval_run, pair_seed
