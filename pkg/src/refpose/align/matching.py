"""Affinity, mutual-best correspondence selection, pose solving and the alignment loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from ..errors import AllDiscarded, NoCorrespondences, ShapeMismatch
from ..geom import DISCARD, CorrespondenceLabels, PointCloud, Pose, wsvd


@dataclass(frozen=True)
class CorrespondenceSet:
    query_idx: np.ndarray
    ref_idx: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.query_idx)


def affinity(fq: np.ndarray, fr: np.ndarray) -> np.ndarray:
    """Query-by-reference similarity logits, dot products scaled by 1/sqrt(C)."""
    if fq.ndim != 2 or fr.ndim != 2 or fq.shape[1] != fr.shape[1]:
        raise ShapeMismatch(f"cannot correlate {fq.shape} with {fr.shape}")
    return (fq @ fr.T) / np.sqrt(fq.shape[1])


def select_correspondences(a: np.ndarray) -> CorrespondenceSet:
    """Mutually-best pairs; weight is the query-row softmax at the chosen reference."""
    a = np.asarray(a)
    if a.ndim != 2 or a.size == 0:
        raise NoCorrespondences(f"no candidates in an affinity of shape {a.shape}")
    row_best = np.argmax(a, axis=1)
    col_best = np.argmax(a, axis=0)
    q = np.nonzero(col_best[row_best] == np.arange(a.shape[0]))[0]
    if len(q) == 0:
        raise NoCorrespondences("mutual-best filter left no pairs")
    r = row_best[q]
    rows = a[q].astype(np.float64)
    w = np.exp(rows[np.arange(len(q)), r] - logsumexp(rows, axis=1))
    return CorrespondenceSet(q, r, w)


def solve_pose(c: CorrespondenceSet, pr_obj: PointCloud, pq_cam: PointCloud) -> Pose:
    """Object-to-query-camera pose from weighted correspondences."""
    return wsvd(pr_obj.points[c.ref_idx], pq_cam.points[c.query_idx], c.weights)


def _check_labels(a, labels: CorrespondenceLabels):
    if a.shape != (len(labels.query_to_ref), len(labels.ref_to_query)):
        raise ShapeMismatch(f"labels do not match affinity shape {a.shape}")
    lq = np.nonzero(labels.query_to_ref != DISCARD)[0]
    lr = np.nonzero(labels.ref_to_query != DISCARD)[0]
    if len(lq) == 0 and len(lr) == 0:
        raise AllDiscarded("every point pair was discarded")
    return lq, lr


def _mean(v: np.ndarray) -> float:
    # shifted by the first term, so equal terms (uniform logits) average exactly
    return float(v[0]) + math.fsum(v - v[0]) / len(v)


def alignment_loss(a: np.ndarray, labels: CorrespondenceLabels) -> float:
    """Bidirectional cross-entropy over labeled query rows and labeled reference columns."""
    a = np.asarray(a, dtype=np.float64)
    lq, lr = _check_labels(a, labels)
    loss = 0.0
    if len(lq):
        lp = log_softmax(a[lq], axis=1)
        loss -= _mean(lp[np.arange(len(lq)), labels.query_to_ref[lq]])
    if len(lr):
        lp = log_softmax(a[:, lr].T, axis=1)
        loss -= _mean(lp[np.arange(len(lr)), labels.ref_to_query[lr]])
    return float(loss)


def loss_gradient(a: np.ndarray, labels: CorrespondenceLabels) -> np.ndarray:
    """d(alignment_loss)/d(a): softmax minus one-hot in both directions, averaged."""
    a = np.asarray(a, dtype=np.float64)
    lq, lr = _check_labels(a, labels)
    g = np.zeros_like(a)
    if len(lq):
        s = softmax(a[lq], axis=1)
        s[np.arange(len(lq)), labels.query_to_ref[lq]] -= 1.0
        g[lq] += s / len(lq)
    if len(lr):
        s = softmax(a[:, lr].T, axis=1)
        s[np.arange(len(lr)), labels.ref_to_query[lr]] -= 1.0
        g[:, lr] += s.T / len(lr)
    return g
