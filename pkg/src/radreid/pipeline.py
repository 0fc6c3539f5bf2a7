"""Data-directory layout and the in-memory steps behind each CLI subcommand."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augment
from .clustering import cluster_hierarchical, compute_geometry
from .config import RunConfig
from .dataset import (
    Origin,
    PTDataset,
    Sample,
    assign_pseudo_labels,
    drop_transformed,
    merge_pt,
    pt_from_samples,
    read_features_bin,
    read_manifest,
    samples_from_files,
    write_features_bin,
    write_manifest,
)
from .errors import DataError
from .evaluation import EvalReport, distance_matrix, evaluate, export_projection
from .pose import (
    generate_pt,
    generate_pt_features,
    read_keypoints,
    read_part_masks,
    read_sia_annotation,
    warp_sia_parts,
    write_keypoints,
    write_part_masks,
    write_sia_annotation,
)
from .synth import SynthSpec, figure_polygons, generate_features, generate_figures, raster_features, uneven_counts
from .trainer import EncoderParams, TrainConfig, forward, train_discriminative, train_init

log = logging.getLogger(__name__)

TRAIN_FEATURES = "train_features.bin"
TRAIN_MANIFEST = "train_manifest.jsonl"
PT_FEATURES = "pt_features.bin"
PT_MANIFEST = "pt_manifest.jsonl"
IMAGES_DIR = "images"
MASKS_DIR = "masks"
KEYPOINTS = "keypoints.jsonl"
SIA_FILE = "sia.json"


def split_files(name):
    return f"{name}_features.bin", f"{name}_manifest.jsonl"


def _require(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing input file: {path}")
    return path


# ---------------------------------------------------------------------------
# synthetic data


def synth_spec(cfg: RunConfig) -> SynthSpec:
    counts = uneven_counts(cfg.synth_identities, cfg.synth_min_samples, cfg.synth_max_samples, cfg.seed)
    return SynthSpec(cfg.synth_identities, counts, cfg.synth_dim, cfg.synth_spread, cfg.synth_separation,
                     cfg.synth_cameras, cfg.seed, cfg.synth_camera_bias)


@dataclass
class Split:
    """Features plus evaluation metadata (identity labels are ground truth)."""

    features: np.ndarray
    identities: np.ndarray
    cameras: np.ndarray


def query_gallery(features, identities, cameras) -> tuple:
    """First sample of each identity becomes the query; the rest form the gallery."""
    identities = np.asarray(identities)
    first = np.array([np.flatnonzero(identities == i)[0] for i in np.unique(identities)])
    rest = np.setdiff1d(np.arange(len(identities)), first)
    pick = lambda idx: Split(np.asarray(features)[idx], identities[idx], np.asarray(cameras)[idx])  # noqa: E731
    return pick(first), pick(rest)


def synthesize(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    spec = synth_spec(cfg)
    if cfg.synth_figures:
        H, W = cfg.synth_height, cfg.synth_width
        imgs, poses, parts, ids, cams = generate_figures(spec, H, W, draw=0)
        train_x = np.array([raster_features(im) for im in imgs])
        _write_figures(out, imgs, poses, parts, cams)
        scale = min(H / 128.0, W / 64.0)
        write_sia_annotation(out / SIA_FILE, figure_polygons(poses[0], scale), poses[0])
        t_imgs, _, _, test_ids, test_cams = generate_figures(spec, H, W, draw=1)
        test_x = np.array([raster_features(im) for im in t_imgs])
    else:
        train_x, ids, cams = generate_features(spec, draw=0)
        test_x, test_ids, test_cams = generate_features(spec, draw=1)

    write_features_bin(out / TRAIN_FEATURES, train_x)
    write_manifest(out / TRAIN_MANIFEST, assign_pseudo_labels(train_x, cams))
    query, gallery = query_gallery(test_x, test_ids, test_cams)
    offset = len(train_x)
    for name, split in (("query", query), ("gallery", gallery)):
        feat_file, man_file = split_files(name)
        write_features_bin(out / feat_file, split.features)
        samples = [Sample(offset + i, row, int(split.identities[i]), int(split.cameras[i]))
                   for i, row in enumerate(split.features)]
        write_manifest(out / man_file, samples)
        offset += len(samples)


def _write_figures(out: Path, images, poses, parts, cams) -> None:
    from PIL import Image

    (out / IMAGES_DIR).mkdir(exist_ok=True)
    (out / MASKS_DIR).mkdir(exist_ok=True)
    for i, (img, ps) in enumerate(zip(images, parts)):
        Image.fromarray(img).save(out / IMAGES_DIR / f"{i}.png")
        write_part_masks(out / MASKS_DIR, i, ps)
    write_keypoints(out / KEYPOINTS, poses, cameras=list(cams))


# ---------------------------------------------------------------------------
# loading


def load_originals(data: Path) -> list[Sample]:
    feats = read_features_bin(_require(data / TRAIN_FEATURES))
    return samples_from_files(feats, read_manifest(_require(data / TRAIN_MANIFEST)))


def load_pt(data: Path) -> PTDataset:
    feats = read_features_bin(_require(data / PT_FEATURES))
    return pt_from_samples(samples_from_files(feats, read_manifest(_require(data / PT_MANIFEST))))


def load_training_originals(data: Path) -> list[Sample]:
    """Originals for stage 2: from a PT directory when present, else the raw training split."""
    if (data / PT_MANIFEST).exists():
        return drop_transformed(load_pt(data))
    return load_originals(data)


def load_split(data: Path, name: str) -> Split:
    feat_file, man_file = split_files(name)
    feats = read_features_bin(_require(data / feat_file))
    records = read_manifest(_require(data / man_file))
    if len(records) != len(feats):
        raise DataError(f"{name}: {len(feats)} feature rows vs {len(records)} manifest records")
    cams = [r["camera"] for r in records]
    cams = None if any(c is None for c in cams) else np.array(cams)
    return Split(feats.astype(np.float64), np.array([r["label"] for r in records]), cams)


# ---------------------------------------------------------------------------
# PT generation


def build_pt(cfg: RunConfig, data: Path, image_out: Path | None = None) -> PTDataset:
    K, seed = cfg.train.K, cfg.seed
    originals = load_originals(data)
    if cfg.pt_mode == "features":
        x = np.vstack([s.features for s in originals])
        if cfg.aug_flips:
            x = augment.jitter_features(x, cfg.aug_jitter, seed)
            originals = [dataclasses.replace(s, features=row) for s, row in zip(originals, x)]
        feats, sources = generate_pt_features(x, K, seed, cfg.pt_jitter)
    else:
        images, poses, parts = _load_figures(cfg, data, len(originals))
        if cfg.aug_flips:
            images, poses, parts = augment.random_flips(images, poses, parts, seed)
            originals = [dataclasses.replace(s, features=raster_features(im)) for s, im in zip(originals, images)]
        rasters, sources = generate_pt(images, poses, parts, K, seed, cfg.conf_threshold)
        feats = np.array([raster_features(r) for r in rasters]).reshape(len(rasters), -1)
        if image_out is not None:
            _save_rasters(image_out, rasters, sources, K)
    ids = [s.sample_id for s in originals]
    transformed = [Sample(-1, f, 0, None, Origin.TRANSFORMED, ids[src]) for f, src in zip(feats, sources)]
    return merge_pt(originals, transformed, K)


def _load_figures(cfg: RunConfig, data: Path, n: int):
    from PIL import Image

    ids, _, poses = read_keypoints(_require(data / KEYPOINTS))
    if len(ids) != n:
        raise DataError(f"{len(ids)} poses for {n} training samples")
    images = [np.asarray(Image.open(_require(data / IMAGES_DIR / f"{i}.png")).convert("RGB")) for i in ids]
    if cfg.pt_mode == "pe":
        parts = [read_part_masks(data / MASKS_DIR, i) for i in ids]
    else:
        canon_parts, canon_pose = read_sia_annotation(_require(data / SIA_FILE))
        parts = [warp_sia_parts(canon_parts, canon_pose, p) for p in poses]
    return images, poses, parts


def _save_rasters(out: Path, rasters, sources, K) -> None:
    from PIL import Image

    out.mkdir(parents=True, exist_ok=True)
    for j, (r, src) in enumerate(zip(rasters, sources)):
        Image.fromarray(r).save(out / f"{src}_pt{j % K}.png")


def save_pt(out: Path, pt: PTDataset) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_features_bin(out / PT_FEATURES, pt.features)
    write_manifest(out / PT_MANIFEST, pt.samples)


# ---------------------------------------------------------------------------
# evaluation and diagnostics


def evaluate_params(params: EncoderParams, query: Split, gallery: Split, camera_filter: bool = True) -> EvalReport:
    dist = distance_matrix(forward(params, query.features), forward(params, gallery.features))
    return evaluate(dist, query.identities, gallery.identities, query.cameras, gallery.cameras, camera_filter)


def cluster_stats(params: EncoderParams, originals, C: int) -> dict:
    emb = forward(params, np.vstack([s.features for s in originals]))
    assignment = cluster_hierarchical(emb, C)
    geom = compute_geometry(emb, assignment)
    cents = geom.centroids
    diff = cents[:, None, :] - cents[None, :, :]
    cd = np.sqrt((diff * diff).sum(axis=2))
    np.fill_diagonal(cd, np.inf)
    return {
        "num_clusters": C,
        "num_samples": len(originals),
        "min_inter_centroid_distance": float(cd.min()) if C > 1 else None,
        "clusters": [
            {
                "cluster": c,
                "size": int((assignment.labels == c).sum()),
                "radius": float(geom.radii[c]),
                "centroid_norm": float(np.linalg.norm(cents[c])),
            }
            for c in range(C)
        ],
    }


def run_training(cfg: RunConfig, pt: PTDataset, train: TrainConfig | None = None):
    """Both stages in memory; returns ``(stage1_params, final_params, log_records)``."""
    train = cfg.train if train is None else train
    records = []
    p1 = train_init(pt, train, on_epoch=lambda r: records.append(r.to_json()))
    p2 = train_discriminative(drop_transformed(pt), p1, train, on_epoch=lambda r: records.append(r.to_json()))
    return p1, p2, records


def dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
