"""Rigid-body geometry: back-projection, focalization, pose algebra and WSVD.

All coordinates are metres and all poses map object space into camera space
(``p_cam = R @ p_obj + t``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCorrespondences, EmptyCloud

DISCARD = -1

# second/first singular value of the weighted covariance below which the
# rotation is considered undetermined
RANK_TOL = 1e-12


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def is_valid(self, tol: float = 1e-6) -> bool:
        R = self.rotation
        ortho = np.abs(R.T @ R - np.eye(3)).max() < tol
        return bool(ortho and abs(np.linalg.det(R) - 1.0) < tol and np.isfinite(self.translation).all())

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    pixel_coords: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.pixel_coords is not None:
            px = np.asarray(self.pixel_coords).reshape(-1, 2).astype(np.int64)
            if len(px) != len(pts):
                raise ValueError("pixel_coords length does not match points")
            object.__setattr__(self, "pixel_coords", px)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n(self) -> int:
        return len(self.points)

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.pixel_coords)

    def take(self, idx: np.ndarray) -> "PointCloud":
        px = None if self.pixel_coords is None else self.pixel_coords[idx]
        return PointCloud(self.points[idx], px)


@dataclass(frozen=True)
class CorrespondenceLabels:
    query_to_ref: np.ndarray
    ref_to_query: np.ndarray
    threshold: float = field(default=0.15)

    @property
    def n_labeled(self) -> int:
        return int((self.query_to_ref != DISCARD).sum() + (self.ref_to_query != DISCARD).sum())


def backproject(depth, mask, intr: CameraIntrinsics, unit_scale: float = 0.001) -> PointCloud:
    """Lift every masked pixel with positive depth to a camera-space point."""
    depth = np.asarray(depth)
    mask = np.asarray(mask, dtype=bool)
    if depth.shape != mask.shape:
        raise ValueError(f"depth {depth.shape} and mask {mask.shape} differ in shape")
    if depth.shape != (intr.height, intr.width):
        raise ValueError(f"depth {depth.shape} does not match intrinsics {intr.height}x{intr.width}")
    if unit_scale <= 0:
        raise ValueError("unit_scale must be positive")
    z = depth.astype(np.float64) * unit_scale
    v, u = np.nonzero(mask & (z > 0))
    if len(u) == 0:
        raise EmptyCloud("no masked pixel carries a valid depth")
    zz = z[v, u]
    x = (u - intr.cx) * zz / intr.fx
    y = (v - intr.cy) * zz / intr.fy
    return PointCloud(np.stack([x, y, zz], axis=1), np.stack([u, v], axis=1))


def apply_pose(cloud: PointCloud, pose: Pose) -> PointCloud:
    return cloud.with_points(cloud.points @ pose.rotation.T + pose.translation)


def focalize(cloud: PointCloud, pose: Pose) -> PointCloud:
    """Move a camera-space cloud into the object frame: ``R^T (p - t)``."""
    return cloud.with_points((cloud.points - pose.translation) @ pose.rotation)


def compose(a: Pose, b: Pose) -> Pose:
    """Pose mapping ``p -> a(b(p))``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(a: Pose) -> Pose:
    Rt = a.rotation.T
    return Pose(Rt, -Rt @ a.translation)


def rotation_error(R1: np.ndarray, R2: np.ndarray) -> float:
    """Geodesic angle (radians) between two rotations."""
    c = (np.trace(R1.T @ R2) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    # uniform over SO(3) via a random unit quaternion
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def centroid(cloud: PointCloud) -> np.ndarray:
    if cloud.n == 0:
        raise EmptyCloud("centroid of an empty cloud")
    return cloud.points.mean(axis=0)


def resample(cloud: PointCloud, target_n: int, seed: int) -> PointCloud:
    """Draw exactly ``target_n`` points, with replacement only when the cloud is too small."""
    if cloud.n == 0:
        raise EmptyCloud("cannot resample an empty cloud")
    rng = np.random.default_rng(seed)
    replace = cloud.n < target_n
    idx = rng.choice(cloud.n, size=target_n, replace=replace)
    return cloud.take(idx)


def wsvd(src: PointCloud | np.ndarray, dst: PointCloud | np.ndarray, weights) -> Pose:
    """Weighted least-squares rigid transform taking ``src`` onto ``dst``.

    Minimises ``sum_k w_k |R src_k + t - dst_k|^2`` with the Kabsch reflection
    fix, so the returned rotation always has determinant +1.
    """
    s = src.points if isinstance(src, PointCloud) else np.asarray(src, dtype=np.float64)
    d = dst.points if isinstance(dst, PointCloud) else np.asarray(dst, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if len(s) != len(d) or len(s) != len(w):
        raise ValueError("src, dst and weights must have equal length")
    if len(s) < 3:
        raise DegenerateCorrespondences(f"need at least 3 correspondences, got {len(s)}")
    if (w < 0).any() or not np.isfinite(w).all():
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise DegenerateCorrespondences("all correspondence weights are zero")
    w = w / total
    s_bar = w @ s
    d_bar = w @ d
    H = (s - s_bar).T @ ((d - d_bar) * w[:, None])
    U, S, Vt = np.linalg.svd(H)
    if S[0] <= 0 or S[1] < RANK_TOL * S[0]:
        raise DegenerateCorrespondences("weighted source points are collinear")
    V = Vt.T
    sign = np.sign(np.linalg.det(V @ U.T))
    R = V @ np.diag([1.0, 1.0, sign]) @ U.T
    return Pose(R, d_bar - R @ s_bar)


def _nearest(src: np.ndarray, dst: np.ndarray, threshold: float) -> np.ndarray:
    dist, idx = cKDTree(dst).query(src, k=1)
    idx = np.asarray(idx, dtype=np.int64)
    idx[~(dist <= threshold)] = DISCARD
    return idx


def nearest_labels(query_cam: PointCloud, ref_obj: PointCloud, gt: Pose, threshold: float = 0.15) -> CorrespondenceLabels:
    """Ground-truth nearest-point labels in object space, discarding pairs beyond ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    q_obj = focalize(query_cam, gt).points
    return CorrespondenceLabels(
        query_to_ref=_nearest(q_obj, ref_obj.points, threshold),
        ref_to_query=_nearest(ref_obj.points, q_obj, threshold),
        threshold=threshold,
    )
