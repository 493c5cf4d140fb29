"""ADD / ADD-S distances, ADD-0.1d recall and AUC of ADD."""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from ..geom import Pose


def _transform(points: np.ndarray, pose: Pose) -> np.ndarray:
    return points @ pose.rotation.T + pose.translation


def _points(model) -> np.ndarray:
    return model.points if hasattr(model, "points") else np.asarray(model, dtype=np.float64)


def _mean(v: np.ndarray) -> float:
    # shifted by the first term, so equal distances (pure translation) average exactly
    return float(v[0]) + math.fsum(v - v[0]) / len(v)


def add_metric(model, est: Pose, gt: Pose) -> float:
    """Mean distance between corresponding model points under the two poses."""
    pts = _points(model)
    # (R_e - R_g) p + (t_e - t_g): a pure translation offset cancels the rotation exactly
    d = pts @ (est.rotation - gt.rotation).T + (est.translation - gt.translation)
    return _mean(np.linalg.norm(d, axis=1))


def adds_metric(model, est: Pose, gt: Pose) -> float:
    """Mean distance from each estimated point to the closest ground-truth point."""
    pts = _points(model)
    dist, _ = cKDTree(_transform(pts, gt)).query(_transform(pts, est), k=1)
    return _mean(dist)


def recall_add01d(adds, diameters, fraction: float = 0.1) -> float:
    adds = np.asarray(adds, dtype=np.float64)
    if adds.size == 0:
        return 0.0
    return float((adds < fraction * np.asarray(diameters, dtype=np.float64)).mean())


def auc_add(adds, max_threshold: float = 0.1) -> float:
    """Normalised area under the accuracy-vs-threshold curve on [0, max_threshold].

    The empirical accuracy curve is a step function, so the integral is
    exact: each instance contributes ``max(0, 1 - add / max_threshold)``.
    """
    adds = np.asarray(adds, dtype=np.float64)
    if adds.size == 0:
        return 0.0
    return float(np.clip(1.0 - adds / max_threshold, 0.0, 1.0).mean())
