"""Readers and writers for poses, intrinsics, images, clouds, weights and reports.

Every reader raises :class:`FormatError` naming the file, a location and
what was expected there.

Weight file layout (all integers little-endian)::

    offset 0   4 bytes   magic b"RPWT"
           4   u32       format version (1)
           8   u32       length J of the config block
          12   J bytes   UTF-8 JSON: {"model": {...}, "aligner_heads": int}
               u32       tensor count T
               T entries:
                   u16   name length, then the UTF-8 name
                   u8    dtype code (1 = float32)
                   u8    ndim, then ndim x u32 dims
               payloads: each tensor as contiguous little-endian float32,
                         C order, in manifest order, no padding

Aligner tensors are stored as ``aligner.initial.<local>`` and
``aligner.iterative.<local>`` next to the extractor tensors.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import FormatError
from ..geom import CameraIntrinsics, PointCloud, Pose

FRAME = "camera_from_object"
WEIGHT_MAGIC = b"RPWT"
WEIGHT_VERSION = 1
DTYPE_CODES = {1: np.dtype("<f4")}


def _load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FormatError(path, "file", "an existing file") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"line {exc.lineno} column {exc.colno}", "valid JSON") from None


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


# poses -----------------------------------------------------------------

def pose_to_dict(pose: Pose) -> dict:
    return {"frame": FRAME,
            "rotation": [[float(v) for v in row] for row in pose.rotation],
            "translation": [float(v) for v in pose.translation]}


def write_pose(pose: Pose, path) -> None:
    """Row-major 3x3 rotation and translation in metres, mapping object to camera."""
    _dump_json(pose_to_dict(pose), path)


def read_pose(path) -> Pose:
    d = _load_json(path)
    if not isinstance(d, dict):
        raise FormatError(path, "top level", "an object")
    if d.get("frame") != FRAME:
        raise FormatError(path, "key 'frame'", f'"{FRAME}"')
    R, t = d.get("rotation"), d.get("translation")
    if not (isinstance(R, list) and len(R) == 3 and all(isinstance(r, list) and len(r) == 3 for r in R)):
        raise FormatError(path, "key 'rotation'", "a 3x3 list of numbers")
    if not (isinstance(t, list) and len(t) == 3):
        raise FormatError(path, "key 'translation'", "a list of 3 numbers")
    try:
        R = np.array(R, dtype=np.float64)
        t = np.array(t, dtype=np.float64)
    except (TypeError, ValueError):
        raise FormatError(path, "key 'rotation'/'translation'", "numeric entries") from None
    if not (np.isfinite(R).all() and np.isfinite(t).all()):
        raise FormatError(path, "key 'rotation'/'translation'", "finite entries")
    return Pose(R, t)


# intrinsics ------------------------------------------------------------

INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "width", "height")


def write_intrinsics(intr: CameraIntrinsics, path) -> None:
    _dump_json({k: getattr(intr, k) for k in INTRINSIC_KEYS}, path)


def read_intrinsics(path) -> CameraIntrinsics:
    d = _load_json(path)
    if not isinstance(d, dict):
        raise FormatError(path, "top level", "an object")
    for k in INTRINSIC_KEYS:
        if not isinstance(d.get(k), (int, float)) or isinstance(d.get(k), bool):
            raise FormatError(path, f"key '{k}'", "a number")
    for k in ("width", "height"):
        if int(d[k]) != d[k] or d[k] <= 0:
            raise FormatError(path, f"key '{k}'", "a positive integer")
    try:
        return CameraIntrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                                int(d["width"]), int(d["height"]))
    except ValueError as exc:
        raise FormatError(path, "intrinsics", f"consistent values ({exc})") from None


# images ----------------------------------------------------------------

def _open_image(path) -> Image.Image:
    path = Path(path)
    if not path.is_file():
        raise FormatError(path, "file", "an existing image file")
    try:
        img = Image.open(path)
        img.load()
    except OSError:
        raise FormatError(path, "byte 0", "a readable PNG image") from None
    return img


def write_depth(depth_m: np.ndarray, path) -> None:
    """Metric depth saved as 16-bit millimetres; zero marks invalid pixels."""
    mm = np.rint(np.asarray(depth_m, dtype=np.float64) * 1000.0)
    if (mm < 0).any() or (mm > 65535).any():
        raise ValueError("depth outside the 16-bit millimetre range")
    Image.fromarray(mm.astype(np.uint16)).save(path, format="PNG")


def read_depth(path) -> np.ndarray:
    """Depth in millimetres as uint16 (multiply by 0.001 for metres)."""
    img = _open_image(path)
    if img.mode not in ("I;16", "I;16B", "I;16L", "I"):
        raise FormatError(path, "image header", f"a 16-bit grayscale image, found mode {img.mode}")
    a = np.array(img)
    if a.ndim != 2 or a.min() < 0 or a.max() > 65535:
        raise FormatError(path, "pixel data", "16-bit single-channel values")
    return a.astype(np.uint16)


def write_mask(mask: np.ndarray, path) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    img = _open_image(path)
    if img.mode not in ("L", "1", "P"):
        raise FormatError(path, "image header", f"an 8-bit single-channel mask, found mode {img.mode}")
    return np.array(img.convert("L")) > 0


def write_color(image: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path, format="PNG")


def read_color(path) -> np.ndarray:
    img = _open_image(path)
    if img.mode not in ("RGB", "RGBA", "P", "L"):
        raise FormatError(path, "image header", f"an 8-bit RGB image, found mode {img.mode}")
    return np.array(img.convert("RGB"))


# clouds ----------------------------------------------------------------

def write_cloud(cloud: PointCloud, path) -> None:
    """One point per line: ``x y z`` in metres, followed by ``u v`` when pixels are known."""
    px = cloud.pixel_coords
    lines = ["# x y z u v" if px is not None else "# x y z"]
    for i, p in enumerate(cloud.points):
        row = [repr(float(v)) for v in p]
        if px is not None:
            row += [str(int(px[i, 0])), str(int(px[i, 1]))]
        lines.append(" ".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_cloud(path) -> PointCloud:
    path = Path(path)
    if not path.is_file():
        raise FormatError(path, "file", "an existing cloud file")
    pts, px, width = [], [], None
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) not in (3, 5) or (width is not None and len(fields) != width):
            raise FormatError(path, f"line {lineno}", f"{width or '3 or 5'} whitespace-separated fields")
        width = len(fields)
        try:
            xyz = [float(f) for f in fields[:3]]
            uv = [int(f) for f in fields[3:]]
        except ValueError:
            raise FormatError(path, f"line {lineno}", "numbers x y z [integer u v]") from None
        if not all(math.isfinite(v) for v in xyz):
            raise FormatError(path, f"line {lineno}", "finite coordinates")
        pts.append(xyz)
        px.append(uv)
    if not pts:
        raise FormatError(path, "end of file", "at least one point")
    return PointCloud(np.array(pts), np.array(px) if width == 5 else None)


# weights ---------------------------------------------------------------

def write_weights(tensors: dict, path, config: dict | None = None) -> None:
    """Serialise named tensors as float32 in insertion order."""
    cfg = json.dumps(config or {}, sort_keys=True).encode("utf-8")
    head = [WEIGHT_MAGIC, struct.pack("<II", WEIGHT_VERSION, len(cfg)), cfg, struct.pack("<I", len(tensors))]
    payload = []
    for name, t in tensors.items():
        a = np.ascontiguousarray(t, dtype="<f4")
        raw = name.encode("utf-8")
        head.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", 1, a.ndim)
                    + struct.pack(f"<{a.ndim}I", *a.shape))
        payload.append(a.tobytes())
    Path(path).write_bytes(b"".join(head + payload))


def read_weights(path) -> tuple[dict, dict]:
    """Returns (tensors in file order, config block)."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(path, "file", "an existing weight file") from None
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(path, f"byte {pos}", what)
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4, "the 4-byte magic") != WEIGHT_MAGIC:
        raise FormatError(path, "byte 0", f"magic {WEIGHT_MAGIC!r}")
    version, cfg_len = struct.unpack("<II", take(8, "version and config length"))
    if version != WEIGHT_VERSION:
        raise FormatError(path, "byte 4", f"format version {WEIGHT_VERSION}, found {version}")
    at = pos
    try:
        config = json.loads(take(cfg_len, "the config block").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError(path, f"byte {at}", "a UTF-8 JSON config block") from None
    (count,) = struct.unpack("<I", take(4, "the tensor count"))
    manifest = []
    for i in range(count):
        (nlen,) = struct.unpack("<H", take(2, f"manifest entry {i}"))
        name = take(nlen, f"the name of manifest entry {i}").decode("utf-8", errors="replace")
        at = pos
        code, ndim = struct.unpack("<BB", take(2, f"dtype and rank of tensor {name}"))
        if code not in DTYPE_CODES:
            raise FormatError(path, f"byte {at}", f"dtype code 1 for tensor {name}, found {code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"the shape of tensor {name}"))
        manifest.append((name, shape, DTYPE_CODES[code]))
    tensors = {}
    for name, shape, dt in manifest:
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        raw = take(n, f"{n} payload bytes for tensor {name}")
        tensors[name] = np.frombuffer(raw, dtype=dt).reshape(shape).astype(np.float32)
    if pos != len(buf):
        raise FormatError(path, f"byte {pos}", "end of file after the last payload")
    return tensors, config


def write_model(weights, aligners, path) -> None:
    """Extractor weights plus both aligner parameter sets in one file."""
    from dataclasses import asdict

    tensors = dict(weights.tensors)
    for kind, params in (("initial", aligners.initial), ("iterative", aligners.iterative)):
        tensors.update({f"aligner.{kind}.{k}": v for k, v in params.items()})
    write_weights(tensors, path, {"model": asdict(weights.config), "aligner_heads": aligners.heads})


def read_model(path):
    """(WeightBundle, AlignerWeights) validated against the stored configuration."""
    from ..align.pipeline import AlignerWeights
    from ..errors import ShapeMismatch
    from ..seqmodel.weights import ModelConfig, WeightBundle

    tensors, config = read_weights(path)
    try:
        model = dict(config.get("model", {}))
        if "stage_dims" in model:
            model["stage_dims"] = tuple(model["stage_dims"])
        cfg = ModelConfig(**model)
    except TypeError:
        raise FormatError(path, "config block", "ModelConfig fields") from None
    ext = {k: v for k, v in tensors.items() if not k.startswith("aligner.")}
    split = {kind: {k[len(f"aligner.{kind}."):]: v for k, v in tensors.items() if k.startswith(f"aligner.{kind}.")}
             for kind in ("initial", "iterative")}
    bundle = WeightBundle(ext, cfg)
    try:
        bundle.validate()
    except (ShapeMismatch, ValueError) as exc:
        raise FormatError(path, "manifest", f"tensors matching the model config ({exc})") from None
    return bundle, AlignerWeights(split["initial"], split["iterative"], heads=int(config.get("aligner_heads", 4)))


# reports ---------------------------------------------------------------

def _finite_or_null(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _finite_or_null(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite_or_null(v) for v in x]
    if isinstance(x, np.generic):
        return _finite_or_null(x.item())
    return x


def write_report(report, path) -> None:
    """Report body with sorted keys; wall-clock timings go to a ``.timings.json`` sidecar.

    Non-finite numbers (failed instances) are written as ``null``.
    """
    path = Path(path)
    _dump_json(_finite_or_null(report.body()), path)
    _dump_json({"seconds": [float(t) for t in report.timings]}, path.with_suffix(".timings.json"))


def read_report(path) -> dict:
    d = _load_json(path)
    for key in ("schema_version", "config", "instances", "aggregate"):
        if key not in d:
            raise FormatError(path, f"key '{key}'", "a report section")
    return d
