"""The iterative focalize -> extract -> refine -> match -> solve loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateCorrespondences, NoCorrespondences
from ..geom import CameraIntrinsics, PointCloud, Pose, backproject, centroid, focalize, resample
from ..seqmodel import fuse, points_ssm_forward, rgb_ssm_forward
from ..seqmodel.rgb import prepare_view
from ..seqmodel.weights import WeightBundle
from .matching import affinity, select_correspondences, solve_pose
from .refine import refine_features

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class View:
    image: np.ndarray          # H x W x 3 uint8
    depth: np.ndarray          # H x W, multiplied by depth_scale to get metres
    mask: np.ndarray           # H x W bool
    pose: Pose | None = None   # camera_from_object, known for the reference only
    depth_scale: float = 1.0


@dataclass
class AlignerWeights:
    """Two independent refinement parameter sets: first iteration and later ones."""
    initial: dict
    iterative: dict
    heads: int = 4

    def for_iteration(self, i: int) -> dict:
        return self.initial if i == 1 else self.iterative


@dataclass(frozen=True)
class IterationRecord:
    pose: Pose
    n_correspondences: int
    mean_similarity: float


@dataclass
class EstimateResult:
    pose: Pose
    trace: list = field(default_factory=list)
    failed: bool = False
    message: str = ""


class SSMExtractor:
    """Point + image features from the state-space extractors.

    Image features of the query are computed once; point features are
    recomputed for every refocalized cloud.
    """

    def __init__(self, weights: WeightBundle, use_rgb: bool = True):
        self.w = weights
        self.use_rgb = use_rgb
        self._query_image = None

    def _image_features(self, view: View, cloud_cam: PointCloud) -> np.ndarray:
        img, m, px = prepare_view(view.image, view.mask, cloud_cam.pixel_coords, self.w.config.image_size)
        return rgb_ssm_forward(img, m, px, self.w)

    def reference(self, view: View, cloud_cam: PointCloud, cloud_obj: PointCloud) -> np.ndarray:
        fp = points_ssm_forward(cloud_obj.points, self.w)
        if not self.use_rgb:
            return fp
        return fuse(fp, self._image_features(view, cloud_cam))

    def query(self, view: View, cloud_cam: PointCloud, cloud_obj: PointCloud, iteration: int) -> np.ndarray:
        fp = points_ssm_forward(cloud_obj.points, self.w)
        if not self.use_rgb:
            return fp
        if self._query_image is None:
            self._query_image = self._image_features(view, cloud_cam)
        return fuse(fp, self._query_image)


def view_cloud(view: View, intr: CameraIntrinsics, n_points: int, seed: int) -> PointCloud:
    return resample(backproject(view.depth, view.mask, intr, view.depth_scale), n_points, seed)


def estimate(ref: View, query: View, intr: CameraIntrinsics, extractor, aligners: AlignerWeights | None = None,
             iters: int = 3, n_points: int = 2048, seed: int = 0, init_rotation=None) -> EstimateResult:
    """Estimate the query's camera_from_object pose against a single posed reference view.

    ``extractor`` supplies ``reference(view, cam, obj)`` and ``query(view, cam, obj_i, i)``
    feature maps. With ``aligners=None`` features are matched unrefined.
    The first focalization only removes the query centroid (rotation
    ``init_rotation``, identity by default).
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if ref.pose is None or not ref.pose.is_valid():
        raise ValueError("reference view needs a valid pose")
    pr_cam = view_cloud(ref, intr, n_points, seed)
    # same draw for both views, so identical inputs give identical clouds
    pq_cam = view_cloud(query, intr, n_points, seed)
    pr_obj = focalize(pr_cam, ref.pose)
    fr = extractor.reference(ref, pr_cam, pr_obj)

    R1 = np.eye(3) if init_rotation is None else np.asarray(init_rotation, dtype=np.float64)
    pose = Pose(R1, centroid(pq_cam))
    result = EstimateResult(pose)
    for i in range(1, iters + 1):
        pq_obj = focalize(pq_cam, pose)
        fq = extractor.query(query, pq_cam, pq_obj, i)
        if aligners is not None:
            fr_i, fq_i = refine_features(fr, fq, pr_obj, pq_obj, aligners.for_iteration(i), aligners.heads)
        else:
            fr_i, fq_i = fr, fq
        a = affinity(fq_i, fr_i)
        try:
            c = select_correspondences(a)
            pose = solve_pose(c, pr_obj, pq_cam)
        except (NoCorrespondences, DegenerateCorrespondences) as exc:
            log.warning("iteration %d failed: %s", i, exc)
            result.failed = True
            result.message = f"iteration {i}: {exc}"
            break
        sim = float(a[c.query_idx, c.ref_idx].mean())
        result.trace.append(IterationRecord(pose, len(c), sim))
        result.pose = pose
    return result
