"""Ground-truth feature injection that isolates the alignment loop from the extractors."""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from ..errors import AllDiscarded
from ..geom import DISCARD, PointCloud, Pose, focalize, nearest_labels
from ..align.pipeline import view_cloud

MAX_CROSS_DOT = 0.3


def separated_unit_vectors(n: int, dim: int, rng: np.random.Generator, fixed: np.ndarray | None = None,
                           max_dot: float = MAX_CROSS_DOT) -> np.ndarray:
    """``n`` random unit vectors with every pairwise dot product below ``max_dot``.

    Also kept below ``max_dot`` against each row of ``fixed``. Offending
    vectors are redrawn until no pair violates the bound.
    """
    def draw(k):
        x = rng.normal(size=(k, dim))
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    v = draw(n)
    todo = np.arange(n)
    for attempt in range(1000):
        g = v[todo] @ v.T
        if attempt == 0:
            # only one member of each violating pair is redrawn
            g[np.tril_indices(n)] = -np.inf
            bad = (g.T >= max_dot).any(axis=0)
        else:
            g[np.arange(len(todo)), todo] = -np.inf
            bad = (g >= max_dot).any(axis=1)
        if fixed is not None:
            bad |= (v[todo] @ fixed.T >= max_dot).any(axis=1)
        todo = todo[bad]
        if len(todo) == 0:
            return v
        v[todo] = draw(len(todo))
    raise RuntimeError(f"could not separate {n} vectors in {dim} dimensions")


class OracleExtractor:
    """Features built from ground truth.

    Reference point r gets a unique vector. A query point q receives the same
    vector when (q, r) is a matched pair: after ground-truth focalization each
    is the other's nearest neighbour within ``threshold``. A query point that
    is labeled with r but is not r's nearest gets a tilted copy whose
    similarity to r falls from 0.9 towards 0.5 with distance, so r's column
    is maximised by its closest query. Query points beyond ``threshold`` get
    unrelated vectors.

    ``capture_radius`` models an extractor that is only reliable near the
    truth: a labeled query point whose current focalized position lies
    farther than this from its ground-truth object position instead copies the
    vector of whatever reference point is currently nearest to it. The
    default (infinite) gives iteration-independent features.
    """

    def __init__(self, gt_query_pose: Pose, seed: int = 0, dim: int = 256, threshold: float = 0.15,
                 capture_radius: float = math.inf):
        self.gt = gt_query_pose
        self.rng = np.random.default_rng([seed, 0x0AC1E])
        self.dim = dim
        self.threshold = threshold
        self.capture_radius = capture_radius
        self.ref_obj = None
        self.labels = None

    def reference(self, view, cloud_cam: PointCloud, cloud_obj: PointCloud) -> np.ndarray:
        self.ref_obj = cloud_obj
        self._ref_tree = cKDTree(cloud_obj.points)
        self._n_ref = cloud_obj.n
        self._vectors = separated_unit_vectors(cloud_obj.n, self.dim, self.rng)
        return self._vectors.astype(np.float32)

    def query(self, view, cloud_cam: PointCloud, cloud_obj: PointCloud, iteration: int) -> np.ndarray:
        if self.ref_obj is None:
            raise RuntimeError("reference features must be requested first")
        if self.labels is None:
            self.labels = nearest_labels(cloud_cam, self.ref_obj, self.gt, self.threshold)
            if (self.labels.query_to_ref == DISCARD).all():
                raise AllDiscarded("reference and query views do not overlap")
            self._gt_obj = focalize(cloud_cam, self.gt).points
            # vectors for unmatched query points, drawn after the reference ones
            extra = separated_unit_vectors(cloud_cam.n, self.dim, self.rng, fixed=self._vectors)
            self._vectors = np.concatenate([self._vectors, extra])
            q2r, r2q = self.labels.query_to_ref, self.labels.ref_to_query
            mutual = (q2r != DISCARD) & (r2q[np.maximum(q2r, 0)] == np.arange(cloud_cam.n))
            self._pairs = np.where(mutual, q2r, DISCARD)
            self._tilt = self._tilted_vectors(cloud_cam.n)
        src = self.labels.query_to_ref.copy()
        exact = self._pairs != DISCARD
        unmatched = np.arange(cloud_cam.n) + self._n_ref
        # similarity grading uses ground-truth geometry except for captured points
        pos = self._gt_obj.copy()
        if math.isfinite(self.capture_radius):
            off = (src != DISCARD) & (np.linalg.norm(cloud_obj.points - self._gt_obj, axis=1) > self.capture_radius)
            dist, nn = self._ref_tree.query(cloud_obj.points[off])
            src[off] = np.where(dist <= self.threshold, nn, DISCARD)
            exact = exact & ~off
            pos[off] = cloud_obj.points[off]
        rows = self._vectors[unmatched].copy()
        lab = src != DISCARD
        v = self._vectors[src[lab]]
        u = self._tilt[lab]
        # component of the tilt direction orthogonal to the shared vector
        u = u - (u * v).sum(axis=1, keepdims=True) * v
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        d = np.linalg.norm(pos[lab] - self.ref_obj.points[src[lab]], axis=1)
        cos = np.where(exact[lab], 1.0, 0.9 - 0.4 * np.minimum(d / self.threshold, 1.0))
        rows[lab] = cos[:, None] * v + np.sqrt(1.0 - cos ** 2)[:, None] * u
        return rows.astype(np.float32)

    def _tilted_vectors(self, n: int) -> np.ndarray:
        u = self.rng.normal(size=(n, self.dim))
        return u / np.linalg.norm(u, axis=1, keepdims=True)


def oracle_features(pair, n: int = 2048, seed: int = 0, dim: int = 256):
    """Reference and query feature maps (plus their camera-space clouds) for a view pair.

    Both clouds are drawn the same way ``estimate`` draws them for ``seed``.
    """
    intr = pair.intrinsics
    pr_cam = view_cloud(pair.reference, intr, n, seed)
    pq_cam = view_cloud(pair.query, intr, n, seed)
    ex = OracleExtractor(pair.gt_query_pose, seed=seed, dim=dim)
    fr = ex.reference(pair.reference, pr_cam, focalize(pr_cam, pair.reference.pose))
    fq = ex.query(pair.query, pq_cam, focalize(pq_cam, pair.gt_query_pose), 1)
    return fr, fq, pr_cam, pq_cam, ex.labels
