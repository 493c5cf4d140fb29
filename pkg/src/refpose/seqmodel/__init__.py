"""State-space sequence engine and the point/image feature extractors."""
from .points import knn_tokenize, points_ssm_forward, position_embed
from .rgb import cross_merge, cross_scan, rgb_ssm_forward
from .scan import (
    DiscretizedParams,
    SelectiveParams,
    StateSpaceParams,
    discretize_zoh,
    scan_reference,
    selective_scan,
)
from .weights import ModelConfig, WeightBundle, init_weights

import numpy as np

from ..errors import ShapeMismatch


def fuse(fp: np.ndarray, fi: np.ndarray) -> np.ndarray:
    """Point and image features combined by elementwise addition."""
    if fp.shape != fi.shape:
        raise ShapeMismatch(f"cannot fuse {fp.shape} with {fi.shape}")
    return fp + fi
