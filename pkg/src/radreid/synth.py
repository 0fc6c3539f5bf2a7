"""Seeded synthetic re-ID data: identity feature clouds and stick figures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PlacementError, ShapeError
from .pose import NUM_KEYPOINTS, PART_JOINTS, PART_NAMES, Part, PartSet, Pose, rasterize_polygon

MAX_PLACEMENT_TRIES = 2000


@dataclass(frozen=True)
class SynthSpec:
    num_identities: int
    samples_per_identity: tuple
    feature_dim: int
    identity_spread: float = 1.0
    identity_separation: float = 10.0
    num_cameras: int = 2
    seed: int = 0
    camera_bias: float = 0.0

    def __post_init__(self):
        spi = self.samples_per_identity
        spi = (int(spi),) * self.num_identities if np.isscalar(spi) else tuple(int(s) for s in spi)
        object.__setattr__(self, "samples_per_identity", spi)
        if self.num_identities < 1 or len(spi) != self.num_identities:
            raise ValueError("need one samples_per_identity entry per identity")
        if min(spi) < 1:
            raise ValueError("every identity needs at least one sample")
        if self.feature_dim < 1 or self.num_cameras < 1:
            raise ValueError("feature_dim and num_cameras must be positive")
        if not (self.identity_spread > 0 and self.identity_separation > 0):
            raise ValueError("spread and separation must be positive")

    @property
    def num_samples(self) -> int:
        return sum(self.samples_per_identity)


def uneven_counts(num_identities: int, low: int, high: int, seed: int) -> tuple:
    """Per-identity sample counts drawn uniformly from ``[low, high]``."""
    rng = np.random.default_rng([seed, 99])
    return tuple(int(c) for c in rng.integers(low, high + 1, size=num_identities))


def identity_centroids(spec: SynthSpec) -> np.ndarray:
    """Rejection-sample centroids at pairwise distance ``>= identity_separation``."""
    rng = np.random.default_rng([spec.seed, 0])
    d = spec.feature_dim
    # typical pairwise distance of this cloud is ~1.5x the separation
    scale = 1.5 * spec.identity_separation / math.sqrt(2 * d)
    centroids = []
    for i in range(spec.num_identities):
        for _ in range(MAX_PLACEMENT_TRIES):
            cand = rng.normal(0.0, scale, size=d)
            if all(np.linalg.norm(cand - c) >= spec.identity_separation for c in centroids):
                centroids.append(cand)
                break
        else:
            raise PlacementError(
                f"could not place identity {i} at separation {spec.identity_separation} in {d} dims"
            )
    return np.array(centroids)


def camera_offsets(spec: SynthSpec) -> np.ndarray:
    """One fixed additive bias per camera, of norm ``camera_bias``."""
    rng = np.random.default_rng([spec.seed, 1])
    dirs = rng.normal(size=(spec.num_cameras, spec.feature_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return spec.camera_bias * dirs


def generate_features(spec: SynthSpec, draw: int = 0):
    """Return ``(features, identity_labels, camera_ids)``.

    ``draw`` selects an independent sample stream around the same identity
    centroids and camera biases, e.g. ``draw=1`` for a held-out test set.
    Cameras are assigned round-robin within each identity.
    """
    centroids = identity_centroids(spec)
    offsets = camera_offsets(spec)
    rng = np.random.default_rng([spec.seed, 2, draw])
    feats, ids, cams = [], [], []
    for ident, count in enumerate(spec.samples_per_identity):
        cam = np.arange(count) % spec.num_cameras
        noise = rng.normal(0.0, spec.identity_spread, size=(count, spec.feature_dim))
        feats.append(centroids[ident] + noise + offsets[cam])
        ids.extend([ident] * count)
        cams.extend(cam.tolist())
    return np.vstack(feats), np.array(ids, dtype=np.int64), np.array(cams, dtype=np.int64)


# ---------------------------------------------------------------------------
# stick figures

# limb lengths and half-widths at a 128 x 64 reference canvas
_LENGTHS = {"head": 12.0, "torso": 36.0, "shoulder": 8.0, "hip": 5.0,
            "upper_arm": 16.0, "forearm": 14.0, "thigh": 24.0, "shin": 24.0}
PART_HALF_WIDTH = {
    "torso": 7.0, "head": 5.0,
    "l_thigh": 3.5, "r_thigh": 3.5, "l_shin": 3.0, "r_shin": 3.0,
    "l_upper_arm": 2.5, "r_upper_arm": 2.5, "l_forearm": 2.0, "r_forearm": 2.0,
}


def _direction(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def random_pose(rng, H: int, W: int) -> Pose:
    """Forward-kinematics stick pose; image y grows downward."""
    s = min(H / 128.0, W / 64.0) * rng.uniform(0.92, 1.05)
    L = {k: v * s for k, v in _LENGTHS.items()}
    kp = np.zeros((NUM_KEYPOINTS, 2))
    up = -math.pi / 2 + rng.normal(0.0, 0.06)
    down = up + math.pi
    kp[8] = (W / 2 + rng.normal(0.0, W * 0.03), H * 0.52 + rng.normal(0.0, H * 0.015))
    kp[1] = kp[8] + L["torso"] * _direction(up)
    kp[0] = kp[1] + L["head"] * _direction(up + rng.normal(0.0, 0.15))
    for side, (sh, el, wr, hip, kn, an) in ((-1, (2, 3, 4, 9, 10, 11)), (1, (5, 6, 7, 12, 13, 14))):
        lateral = up + side * math.pi / 2
        kp[sh] = kp[1] + L["shoulder"] * _direction(lateral)
        a_upper = down - side * abs(rng.normal(0.25, 0.3))
        kp[el] = kp[sh] + L["upper_arm"] * _direction(a_upper)
        kp[wr] = kp[el] + L["forearm"] * _direction(a_upper + rng.normal(0.0, 0.5))
        kp[hip] = kp[8] + L["hip"] * _direction(lateral)
        a_thigh = down - side * rng.normal(0.08, 0.15)
        kp[kn] = kp[hip] + L["thigh"] * _direction(a_thigh)
        kp[an] = kp[kn] + L["shin"] * _direction(a_thigh + rng.normal(0.0, 0.2))
    conf = rng.uniform(0.6, 1.0, size=(NUM_KEYPOINTS, 1))
    return Pose(np.hstack([kp, conf]))


def segment_polygon(a, b, half_width: float) -> np.ndarray:
    """Rectangle (as 4 ``(x, y)`` vertices) of the given half-width around segment ``a-b``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    v = b - a
    length = np.linalg.norm(v)
    if length == 0:
        raise ShapeError("zero-length limb")
    nrm = np.array([-v[1], v[0]]) / length * half_width
    return np.array([a + nrm, b + nrm, b - nrm, a - nrm])


def figure_polygons(pose: Pose, scale: float = 1.0) -> PartSet:
    """Polygon part set tracing every limb of ``pose``."""
    parts = []
    for name in PART_NAMES:
        ja, jb = PART_JOINTS[name]
        poly = segment_polygon(pose.point(ja), pose.point(jb), PART_HALF_WIDTH[name] * scale)
        parts.append(Part((ja, jb), polygon=poly))
    return PartSet(tuple(parts))


def render_figure(pose: Pose, colors: np.ndarray, H: int, W: int, background=(40, 40, 40), scale=1.0):
    """Draw limbs in part order; returns ``(raster, PartSet of masks)``.

    Each part's mask is exactly the pixel set its limb was drawn on.
    """
    img = np.empty((H, W, 3), dtype=np.uint8)
    img[:] = background
    parts = []
    for k, part in enumerate(figure_polygons(pose, scale)):
        mask = rasterize_polygon(part.polygon, (H, W))
        img[mask != 0] = colors[k]
        parts.append(Part(part.joint_pair, mask=mask))
    return img, PartSet(tuple(parts))


def generate_figures(spec: SynthSpec, H: int = 128, W: int = 64, draw: int = 0):
    """Return ``(rasters, poses, part_sets, identity_labels, camera_ids)``.

    Each identity owns one color per limb; every sample gets a fresh pose.
    ``draw`` selects an independent pose stream with the same identities.
    """
    if H < 64 or W < 64:
        raise ShapeError(f"figures need H, W >= 64, got {H} x {W}")
    rng_color = np.random.default_rng([spec.seed, 10])
    colors = rng_color.integers(60, 256, size=(spec.num_identities, len(PART_NAMES), 3)).astype(np.uint8)
    scale = min(H / 128.0, W / 64.0)
    rasters, poses, parts, ids, cams = [], [], [], [], []
    n = 0
    for ident, count in enumerate(spec.samples_per_identity):
        for j in range(count):
            rng = np.random.default_rng([spec.seed, 11, draw, n])
            pose = random_pose(rng, H, W)
            img, ps = render_figure(pose, colors[ident], H, W, scale=scale)
            rasters.append(img)
            poses.append(pose)
            parts.append(ps)
            ids.append(ident)
            cams.append(j % spec.num_cameras)
            n += 1
    return rasters, poses, parts, np.array(ids, dtype=np.int64), np.array(cams, dtype=np.int64)


def raster_features(image, grid=(16, 8)) -> np.ndarray:
    """Block-averaged RGB thumbnail scaled to ``[0, 1]``: a fixed stand-in feature extractor."""
    img = np.asarray(image, dtype=np.float64) / 255.0
    H, W, ch = img.shape
    gh, gw = grid
    rows = np.array_split(np.arange(H), gh)
    cols = np.array_split(np.arange(W), gw)
    out = np.empty((gh, gw, ch))
    for a, r in enumerate(rows):
        for b, c in enumerate(cols):
            out[a, b] = img[np.ix_(r, c)].mean(axis=(0, 1))
    return out.ravel()
