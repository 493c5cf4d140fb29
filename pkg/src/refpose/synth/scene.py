"""Procedural objects, z-buffer point splatting and posed view pairs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial.distance import pdist

from ..align.pipeline import View
from ..errors import BehindCamera
from ..geom import CameraIntrinsics, PointCloud, Pose, apply_pose, axis_angle, compose

N_LOBES = 8
BACKGROUND = np.zeros(3, dtype=np.uint8)


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=224.0, fy=224.0, cx=112.0, cy=112.0, width=224, height=224)


@dataclass(frozen=True)
class SyntheticObject:
    model_points: PointCloud
    diameter: float
    seed: int
    normals: np.ndarray | None = None   # outward unit normals; None renders flat discs

    @property
    def points(self) -> np.ndarray:
        return self.model_points.points


def diameter_of(points: np.ndarray) -> float:
    # the farthest pair always lies on the convex hull
    return float(pdist(points[ConvexHull(points).vertices]).max())


def estimate_normals(points: np.ndarray, outward: np.ndarray, k: int = 12) -> np.ndarray:
    """Local-PCA normals flipped to agree with the ``outward`` hint vectors."""
    _, nbr = cKDTree(points).query(points, k=k)
    local = points[nbr] - points[nbr].mean(axis=1, keepdims=True)
    _, _, vt = np.linalg.svd(local)
    n = vt[:, 2, :]
    return n * np.where((n * outward).sum(axis=1) < 0, -1.0, 1.0)[:, None]


def gen_object(seed: int, n_model_points: int = 4096, amplitude: float = 0.35,
               diameter_range=(0.08, 0.30)) -> SyntheticObject:
    """A smooth star-shaped blob: a sphere radially pushed out by 8 seeded Gaussian lobes.

    Directions are drawn in antipodal pairs so the unperturbed sphere is
    exactly centred; an odd count drops the last antipode.
    """
    if n_model_points < 64:
        raise ValueError("need at least 64 model points")
    rng = np.random.default_rng(seed)
    half = rng.normal(size=((n_model_points + 1) // 2, 3))
    half /= np.linalg.norm(half, axis=1, keepdims=True)
    dirs = np.concatenate([half, -half])[:n_model_points]
    lobe_dirs = rng.normal(size=(N_LOBES, 3))
    lobe_dirs /= np.linalg.norm(lobe_dirs, axis=1, keepdims=True)
    lobe_amp = rng.uniform(-0.5, 1.0, size=N_LOBES)
    lobe_sharp = rng.uniform(1.0, 4.0, size=N_LOBES)
    radial = np.exp(lobe_sharp * (dirs @ lobe_dirs.T - 1.0)) @ lobe_amp
    pts = dirs * (1.0 + amplitude * radial)[:, None]
    # the blob is star-shaped about the pre-centring origin, so dirs point outward
    normals = estimate_normals(pts, dirs)
    pts -= pts.mean(axis=0)
    target = rng.uniform(*diameter_range)
    pts *= target / diameter_of(pts)
    return SyntheticObject(PointCloud(pts), diameter_of(pts), seed, normals)


def _splat(obj: SyntheticObject, pose: Pose, intr: CameraIntrinsics, splat_radius: int):
    """Z-buffered point splats; returns (depth, winning point index per pixel or -1).

    Every posed point covers a pixel disc of ``splat_radius``. With normals,
    each covered pixel takes the depth where its ray meets the point's
    tangent plane (back-facing and over-stretched samples are dropped);
    without normals the disc is flat at the point's depth.
    """
    cam = apply_pose(obj.model_points, pose).points
    if (cam[:, 2] <= 0).any():
        raise BehindCamera("a posed point lies at or behind the camera plane")
    u = np.rint(intr.fx * cam[:, 0] / cam[:, 2] + intr.cx).astype(np.int64)
    v = np.rint(intr.fy * cam[:, 1] / cam[:, 2] + intr.cy).astype(np.int64)
    r = int(splat_radius)
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    disc = (dx * dx + dy * dy) <= r * r
    dx, dy = dx[disc], dy[disc]
    pu = (u[:, None] + dx[None]).ravel()
    pv = (v[:, None] + dy[None]).ravel()
    pid = np.repeat(np.arange(len(cam)), len(dx))
    ok = (pu >= 0) & (pu < intr.width) & (pv >= 0) & (pv < intr.height)
    pu, pv, pid = pu[ok], pv[ok], pid[ok]
    if obj.normals is None:
        z = cam[pid, 2]
    else:
        n = obj.normals @ pose.rotation.T
        ray = np.stack([(pu - intr.cx) / intr.fx, (pv - intr.cy) / intr.fy, np.ones(len(pu))], axis=1)
        denom = (n[pid] * ray).sum(axis=1)
        facing = denom < -1e-6
        z = np.where(facing, (n[pid] * cam[pid]).sum(axis=1) / np.where(facing, denom, -1.0), np.inf)
        reach = 2.0 * max(r, 1) * cam[pid, 2] / min(intr.fx, intr.fy)
        hit = np.where(facing[:, None], ray * np.where(facing, z, 0.0)[:, None], np.inf)
        keep = facing & (z > 0) & (np.linalg.norm(hit - cam[pid], axis=1) <= reach)
        pu, pv, pid, z = pu[keep], pv[keep], pid[keep], z[keep]
    flat = pv * intr.width + pu
    # sort by pixel, then depth, then point id; the first entry of each pixel wins
    order = np.lexsort((pid, z, flat))
    flat, pid, z = flat[order], pid[order], z[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    depth = np.zeros(intr.height * intr.width)
    winner = np.full(intr.height * intr.width, -1, dtype=np.int64)
    depth[flat[first]] = z[first]
    winner[flat[first]] = pid[first]
    shape = (intr.height, intr.width)
    return depth.reshape(shape), winner.reshape(shape)


def render_depth(obj: SyntheticObject, pose: Pose, intr: CameraIntrinsics, splat_radius: int = 2):
    """Metric depth map and mask of ``obj`` seen under ``pose``."""
    depth, winner = _splat(obj, pose, intr, splat_radius)
    return depth, winner >= 0


def albedo(obj: SyntheticObject) -> np.ndarray:
    rng = np.random.default_rng([obj.seed, 0xA1BED0])
    return rng.uniform(0.2, 1.0, size=(obj.model_points.n, 3))


def _shade(obj: SyntheticObject, depth: np.ndarray, winner: np.ndarray) -> np.ndarray:
    img = np.zeros(depth.shape + (3,), dtype=np.uint8)
    hit = winner >= 0
    if not hit.any():
        return img
    z = depth[hit]
    shade = 1.0 - 0.4 * (z - z.min()) / max(z.max() - z.min(), 1e-9)
    img[hit] = np.clip(np.rint(albedo(obj)[winner[hit]] * shade[:, None] * 255), 1, 255).astype(np.uint8)
    return img


def render_color(obj: SyntheticObject, pose: Pose, intr: CameraIntrinsics, splat_radius: int = 2) -> np.ndarray:
    """8-bit RGB: per-point albedo darkened with depth; background is black."""
    return _shade(obj, *_splat(obj, pose, intr, splat_radius))


def look_at_pose(elevation: float, azimuth: float, distance: float, roll: float = 0.0) -> Pose:
    """camera_from_object for a camera on a sphere around the origin looking at it."""
    c = distance * np.array([np.cos(elevation) * np.cos(azimuth), np.cos(elevation) * np.sin(azimuth), np.sin(elevation)])
    z = -c / np.linalg.norm(c)
    x = np.cross(z, [0.0, 0.0, 1.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])          # rows: camera axes in object coordinates
    R = axis_angle([0, 0, 1], roll) @ R
    return Pose(R, -R @ c)


@dataclass(frozen=True)
class PoseGap:
    max_rotation_deg: float = 30.0
    max_translation: float = 0.05


def sample_view_poses(seed: int, gap: PoseGap):
    """Reference pose in the oblique band and the perturbed query pose."""
    if not 0 <= gap.max_rotation_deg <= 180:
        raise ValueError("rotation gap must lie in [0, 180] degrees")
    rng = np.random.default_rng([seed, 0x5EED])
    ref = look_at_pose(np.deg2rad(rng.uniform(30, 60)), rng.uniform(0, 2 * np.pi),
                       rng.uniform(0.6, 1.2), rng.uniform(-np.pi, np.pi))
    axis = rng.normal(size=3)
    angle = np.deg2rad(gap.max_rotation_deg) * rng.uniform()
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    shift = direction * gap.max_translation * rng.uniform()
    if angle == 0 and not shift.any():
        return ref, ref
    # rotate about the object origin, then shift in camera space
    query = compose(Pose(np.eye(3), shift), compose(ref, Pose(axis_angle(axis, angle), np.zeros(3))))
    return ref, query


@dataclass(frozen=True)
class ViewPair:
    reference: View
    query: View
    gt_query_pose: Pose
    object: SyntheticObject
    intrinsics: CameraIntrinsics
    seed: int


def render_view(obj: SyntheticObject, pose: Pose, intr: CameraIntrinsics, splat_radius: int, with_pose: bool) -> View:
    depth, winner = _splat(obj, pose, intr, splat_radius)
    return View(_shade(obj, depth, winner), depth, winner >= 0, pose if with_pose else None, depth_scale=1.0)


def make_pair(seed: int, gap: PoseGap = PoseGap(), intr: CameraIntrinsics | None = None,
              n_model_points: int = 4096, splat_radius: int = 2) -> ViewPair:
    intr = intr or default_intrinsics()
    obj = gen_object(seed, n_model_points)
    ref_pose, q_pose = sample_view_poses(seed, gap)
    return ViewPair(
        reference=render_view(obj, ref_pose, intr, splat_radius, with_pose=True),
        query=render_view(obj, q_pose, intr, splat_radius, with_pose=False),
        gt_query_pose=q_pose, object=obj, intrinsics=intr, seed=seed,
    )
