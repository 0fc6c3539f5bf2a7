"""Pose-space augmentation: per-part similarity warps toward sampled target poses.

Skeleton (15 keypoints, ``(x, y, confidence)`` with x = column, y = row)::

    0 head-top   1 neck        8 pelvis
    2 l-shoulder 3 l-elbow     4 l-wrist
    5 r-shoulder 6 r-elbow     7 r-wrist
    9 l-hip     10 l-knee     11 l-ankle
   12 r-hip     13 r-knee     14 r-ankle

Each of the 10 body parts is anchored on one joint pair, so a single
two-point correspondence fixes its 4-DOF similarity transform. Parts are
composited in the order of ``PART_NAMES``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from skimage.draw import polygon as _fill_polygon

from .errors import DataError, DegenerateSegment, InsufficientPoses, ShapeError

NUM_KEYPOINTS = 15
NUM_PARTS = 10
SEGMENT_EPS = 1e-9
DEFAULT_CONF_THRESHOLD = 0.2

KEYPOINT_NAMES = (
    "head_top", "neck",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "pelvis",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)

PART_NAMES = (
    "torso", "head",
    "l_thigh", "r_thigh", "l_shin", "r_shin",
    "l_upper_arm", "r_upper_arm", "l_forearm", "r_forearm",
)

PART_JOINTS = {
    "torso": (1, 8),
    "head": (1, 0),
    "l_thigh": (9, 10),
    "r_thigh": (12, 13),
    "l_shin": (10, 11),
    "r_shin": (13, 14),
    "l_upper_arm": (2, 3),
    "r_upper_arm": (5, 6),
    "l_forearm": (3, 4),
    "r_forearm": (6, 7),
}


@dataclass(frozen=True)
class Pose:
    keypoints: np.ndarray

    def __post_init__(self):
        kp = np.array(self.keypoints, dtype=np.float64)
        if kp.shape != (NUM_KEYPOINTS, 3):
            raise ShapeError(f"pose must be 15x3, got {kp.shape}")
        if not np.all(np.isfinite(kp)):
            raise DataError("pose contains non-finite values")
        if np.any(kp[:, 2] < 0) or np.any(kp[:, 2] > 1):
            raise DataError("keypoint confidence must lie in [0, 1]")
        kp.setflags(write=False)
        object.__setattr__(self, "keypoints", kp)

    def point(self, k: int) -> np.ndarray:
        return self.keypoints[k, :2]

    def confidence(self, k: int) -> float:
        return float(self.keypoints[k, 2])


@dataclass(frozen=True)
class Part:
    """A body part: its anchoring joint pair plus a raster mask or a polygon."""

    joint_pair: tuple
    mask: np.ndarray | None = None
    polygon: np.ndarray | None = None

    def __post_init__(self):
        a, b = (int(j) for j in self.joint_pair)
        if not (0 <= a < NUM_KEYPOINTS and 0 <= b < NUM_KEYPOINTS) or a == b:
            raise DataError(f"invalid joint pair {self.joint_pair}")
        object.__setattr__(self, "joint_pair", (a, b))
        if (self.mask is None) == (self.polygon is None):
            raise DataError("a part carries exactly one of mask or polygon")
        if self.mask is not None:
            m = np.asarray(self.mask)
            if m.ndim != 2:
                raise ShapeError("part mask must be 2-D")
            m = (m != 0).astype(np.uint8)
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)
        else:
            poly = np.array(self.polygon, dtype=np.float64)
            if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
                raise ShapeError("polygon must be a (V>=3, 2) vertex list")
            poly.setflags(write=False)
            object.__setattr__(self, "polygon", poly)

    def raster(self, shape) -> np.ndarray:
        if self.mask is not None:
            if self.mask.shape != tuple(shape):
                raise ShapeError(f"mask {self.mask.shape} does not match image {tuple(shape)}")
            return self.mask
        return rasterize_polygon(self.polygon, shape)


@dataclass(frozen=True)
class PartSet:
    parts: tuple

    def __post_init__(self):
        parts = tuple(self.parts)
        if len(parts) != NUM_PARTS:
            raise DataError(f"a part set holds exactly {NUM_PARTS} parts, got {len(parts)}")
        object.__setattr__(self, "parts", parts)

    def __iter__(self):
        return iter(self.parts)

    def __getitem__(self, k):
        return self.parts[k]


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> scale * R(rotation) @ p + translation`` on ``(x, y)`` points."""

    rotation: float
    scale: float
    translation: tuple

    def __post_init__(self):
        if not self.scale > 0:
            raise DataError(f"scale must be positive, got {self.scale}")

    @property
    def linear(self) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.linear.T + np.asarray(self.translation, dtype=np.float64)

    def apply_inverse(self, points) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        rot_t = np.array([[c, s], [-s, c]])
        pts = np.asarray(points, dtype=np.float64) - np.asarray(self.translation, dtype=np.float64)
        return (pts @ rot_t.T) / self.scale

    def then(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """The transform applying ``self`` first, then ``other``."""
        t = other.apply(np.asarray(self.translation, dtype=np.float64))
        return SimilarityTransform(self.rotation + other.rotation, self.scale * other.scale, (t[0], t[1]))


def estimate_part_transform(src_a, src_b, tgt_a, tgt_b) -> SimilarityTransform:
    src_a, src_b, tgt_a, tgt_b = (np.asarray(p, dtype=np.float64)[:2] for p in (src_a, src_b, tgt_a, tgt_b))
    vs, vt = src_b - src_a, tgt_b - tgt_a
    ls, lt = math.hypot(*vs), math.hypot(*vt)
    if ls <= SEGMENT_EPS or lt <= SEGMENT_EPS:
        raise DegenerateSegment("zero-length joint segment")
    rotation = math.atan2(vt[1], vt[0]) - math.atan2(vs[1], vs[0])
    # keep the angle in (-pi, pi]; identical directions give exactly 0
    if rotation > math.pi:
        rotation -= 2 * math.pi
    elif rotation <= -math.pi:
        rotation += 2 * math.pi
    scale = lt / ls
    partial = SimilarityTransform(rotation, scale, (0.0, 0.0))
    t = tgt_a - partial.apply(src_a)
    return SimilarityTransform(rotation, scale, (float(t[0]), float(t[1])))


def part_transform(part: Part, src_pose: Pose, tgt_pose: Pose) -> SimilarityTransform:
    a, b = part.joint_pair
    return estimate_part_transform(src_pose.point(a), src_pose.point(b), tgt_pose.point(a), tgt_pose.point(b))


def rasterize_polygon(vertices, shape) -> np.ndarray:
    """Fill a polygon given as ``(x, y)`` vertices into a uint8 mask."""
    v = np.asarray(vertices, dtype=np.float64)
    mask = np.zeros(shape[:2], dtype=np.uint8)
    rr, cc = _fill_polygon(v[:, 1], v[:, 0], shape=shape[:2])
    mask[rr, cc] = 1
    return mask


def _warp_coords(mask: np.ndarray, transform: SimilarityTransform, out_shape):
    """Destination pixels whose nearest-neighbour preimage lies inside ``mask``.

    Returns ``(dst_rows, dst_cols, src_rows, src_cols)``.
    """
    h_in, w_in = mask.shape
    h_out, w_out = out_shape[:2]
    rows, cols = np.nonzero(mask)
    empty = np.empty(0, dtype=np.intp)
    if rows.size == 0:
        return empty, empty, empty, empty
    corners = np.array(
        [[cols.min() - 1, rows.min() - 1], [cols.max() + 1, rows.min() - 1],
         [cols.min() - 1, rows.max() + 1], [cols.max() + 1, rows.max() + 1]],
        dtype=np.float64,
    )
    fwd = transform.apply(corners)
    c0 = max(int(math.floor(fwd[:, 0].min())), 0)
    c1 = min(int(math.ceil(fwd[:, 0].max())), w_out - 1)
    r0 = max(int(math.floor(fwd[:, 1].min())), 0)
    r1 = min(int(math.ceil(fwd[:, 1].max())), h_out - 1)
    if c0 > c1 or r0 > r1:
        return empty, empty, empty, empty
    rr, cc = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    rr, cc = rr.ravel(), cc.ravel()
    src = transform.apply_inverse(np.column_stack([cc, rr]).astype(np.float64))
    sc = np.rint(src[:, 0]).astype(np.intp)
    sr = np.rint(src[:, 1]).astype(np.intp)
    ok = (sc >= 0) & (sc < w_in) & (sr >= 0) & (sr < h_in)
    rr, cc, sr, sc = rr[ok], cc[ok], sr[ok], sc[ok]
    hit = mask[sr, sc] != 0
    return rr[hit], cc[hit], sr[hit], sc[hit]


def warp_mask(mask, transform: SimilarityTransform, out_shape=None) -> np.ndarray:
    mask = np.asarray(mask)
    out_shape = mask.shape if out_shape is None else tuple(out_shape[:2])
    out = np.zeros(out_shape, dtype=np.uint8)
    rr, cc, _, _ = _warp_coords(mask, transform, out_shape)
    out[rr, cc] = 1
    return out


def _part_is_confident(part: Part, src_pose: Pose, tgt_pose: Pose, thr: float) -> bool:
    return all(p.confidence(j) >= thr for p in (src_pose, tgt_pose) for j in part.joint_pair)


def apply_part_transforms(image, parts: PartSet, src_pose: Pose, tgt_pose: Pose,
                          conf_threshold: float = DEFAULT_CONF_THRESHOLD) -> np.ndarray:
    """Warp every confident part of ``image`` onto ``tgt_pose``.

    Warped parts are pasted over a copy of the original image in part order;
    parts whose joints fall below ``conf_threshold`` in either pose stay put.
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeError(f"image must be H x W x C, got {image.shape}")
    out = image.copy()
    for part in parts:
        mask = part.raster(image.shape[:2])
        if not _part_is_confident(part, src_pose, tgt_pose, conf_threshold):
            continue
        transform = part_transform(part, src_pose, tgt_pose)
        rr, cc, sr, sc = _warp_coords(mask, transform, image.shape)
        out[rr, cc] = image[sr, sc]
    return out


def draw_targets(n: int, K: int, seed: int) -> np.ndarray:
    """``(n, K)`` target pose indices; row ``i`` never contains ``i`` nor repeats."""
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    if K > 0 and K >= n:
        raise InsufficientPoses(f"cannot draw {K} distinct target poses from {n - 1} others")
    targets = np.empty((n, K), dtype=np.int64)
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        others = np.delete(np.arange(n), i)
        targets[i] = rng.choice(others, size=K, replace=False)
    return targets


def generate_pt(images: Sequence, poses: Sequence[Pose], parts: Sequence[PartSet], K: int, seed: int,
                conf_threshold: float = DEFAULT_CONF_THRESHOLD):
    """Produce ``K`` pose-transformed rasters per image.

    Returns ``(rasters, sources)`` ordered image-major: the ``K`` variants of
    image 0 first, then image 1, and so on.
    """
    n = len(images)
    if len(poses) != n or len(parts) != n:
        raise ShapeError("images, poses and parts must have equal length")
    targets = draw_targets(n, K, seed)
    rasters, sources = [], []
    for i in range(n):
        for t in targets[i]:
            rasters.append(apply_part_transforms(images[i], parts[i], poses[i], poses[t], conf_threshold))
            sources.append(i)
    return rasters, sources


def generate_pt_features(features, K: int, seed: int, jitter: float):
    """Keypoint-free stand-in: ``K`` Gaussian-jittered copies of every feature row."""
    feats = np.asarray(features, dtype=np.float64)
    n = feats.shape[0]
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    if K > 0 and K >= n:
        raise InsufficientPoses(f"K={K} requires more than {K} samples, got {n}")
    out = np.empty((n * K, feats.shape[1]))
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        out[i * K : (i + 1) * K] = feats[i] + rng.normal(0.0, jitter, size=(K, feats.shape[1]))
    return out, [i for i in range(n) for _ in range(K)]


def warp_sia_parts(canonical_parts: PartSet, canonical_pose: Pose, target_pose: Pose) -> PartSet:
    """Carry a single annotated image's parts over to ``target_pose``."""
    warped = []
    for part in canonical_parts:
        transform = part_transform(part, canonical_pose, target_pose)
        if part.polygon is not None:
            warped.append(Part(part.joint_pair, polygon=transform.apply(part.polygon)))
        else:
            warped.append(Part(part.joint_pair, mask=warp_mask(part.mask, transform)))
    return PartSet(tuple(warped))


# ---------------------------------------------------------------------------
# file formats


def write_keypoints(path, poses: Sequence[Pose], ids=None, cameras=None) -> None:
    with open(path, "w") as fh:
        for i, pose in enumerate(poses):
            rec = {
                "id": int(i if ids is None else ids[i]),
                "camera": None if cameras is None or cameras[i] is None else int(cameras[i]),
                "keypoints": pose.keypoints.tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def read_keypoints(path):
    """Return ``(ids, cameras, poses)``."""
    ids, cams, poses = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ids.append(int(rec["id"]))
                cams.append(rec.get("camera"))
                poses.append(Pose(rec["keypoints"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return ids, cams, poses


def mask_path(directory, image_id: int, k: int) -> Path:
    return Path(directory) / f"{image_id}_part{k}.png"


def write_part_masks(directory, image_id: int, parts: PartSet) -> None:
    from PIL import Image

    for k, part in enumerate(parts):
        if part.mask is None:
            raise DataError("only raster parts can be written as mask files")
        Image.fromarray(part.mask * np.uint8(255), mode="L").save(mask_path(directory, image_id, k))


def read_part_masks(directory, image_id: int) -> PartSet:
    from PIL import Image

    parts = []
    for k, name in enumerate(PART_NAMES):
        path = mask_path(directory, image_id, k)
        if not path.exists():
            raise DataError(f"missing part mask {path}")
        parts.append(Part(PART_JOINTS[name], mask=np.asarray(Image.open(path).convert("L"))))
    return PartSet(tuple(parts))


def write_sia_annotation(path, parts: PartSet, pose: Pose) -> None:
    rec = {
        "pose": pose.keypoints.tolist(),
        "parts": [
            {"name": PART_NAMES[k], "joint_pair": list(p.joint_pair), "polygon": p.polygon.tolist()}
            for k, p in enumerate(parts)
        ],
    }
    Path(path).write_text(json.dumps(rec, indent=1))


def read_sia_annotation(path):
    """Return ``(parts, canonical_pose)``."""
    try:
        rec = json.loads(Path(path).read_text())
        pose = Pose(rec["pose"])
        parts = PartSet(tuple(Part(tuple(p["joint_pair"]), polygon=p["polygon"]) for p in rec["parts"]))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: {exc}") from None
    return parts, pose
