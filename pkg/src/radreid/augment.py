"""Plain image-level augmentation (the "AUG" arm): horizontal flips and feature jitter."""

from __future__ import annotations

import numpy as np

from .pose import KEYPOINT_NAMES, PART_NAMES, Part, PartSet, Pose


def _mirror_index(names, name):
    if name.startswith("l_"):
        return names.index("r_" + name[2:])
    if name.startswith("r_"):
        return names.index("l_" + name[2:])
    return names.index(name)


_KP_MIRROR = [_mirror_index(KEYPOINT_NAMES, n) for n in KEYPOINT_NAMES]
_PART_MIRROR = [_mirror_index(PART_NAMES, n) for n in PART_NAMES]


def hflip(image, pose: Pose, parts: PartSet):
    """Mirror an image with its pose and part masks; left/right labels swap."""
    image = np.asarray(image)
    W = image.shape[1]
    kp = pose.keypoints.copy()
    kp[:, 0] = W - 1 - kp[:, 0]
    kp = kp[_KP_MIRROR]
    flipped = []
    for k in range(len(PART_NAMES)):
        src = parts[_PART_MIRROR[k]]
        a, b = src.joint_pair
        pair = (_KP_MIRROR[a], _KP_MIRROR[b])
        if src.mask is not None:
            flipped.append(Part(pair, mask=src.mask[:, ::-1]))
        else:
            poly = src.polygon.copy()
            poly[:, 0] = W - 1 - poly[:, 0]
            flipped.append(Part(pair, polygon=poly))
    return image[:, ::-1].copy(), Pose(kp), PartSet(tuple(flipped))


def random_flips(images, poses, parts, seed: int):
    """Flip each item independently with probability 1/2."""
    rng = np.random.default_rng([seed, 20])
    coin = rng.random(len(images)) < 0.5
    out = ([], [], [])
    for i, flip in enumerate(coin):
        item = hflip(images[i], poses[i], parts[i]) if flip else (images[i], poses[i], parts[i])
        for bucket, value in zip(out, item):
            bucket.append(value)
    return out


def jitter_features(features, scale: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 21])
    feats = np.asarray(features, dtype=np.float64)
    return feats + rng.normal(0.0, scale, size=feats.shape) if scale > 0 else feats.copy()
