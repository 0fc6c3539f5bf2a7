"""Sample records, pseudo labels and the pose-transformed (PT) training set.

File formats handled here:

* binary features: ``b"RDF1"``, ``<u4`` rows, ``<u4`` dim, then row-major ``<f4``
* CSV features: header ``id,f0,...,f{D-1}`` with an optional ``camera`` column
* manifest: JSON lines ``{"id", "label", "camera", "origin", "source"}``
"""

from __future__ import annotations

import csv
import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CardinalityError, DataError, EmptyDataset, ProvenanceError, ShapeError

FEATURE_MAGIC = b"RDF1"


class Origin(str, enum.Enum):
    ORIGINAL = "original"
    TRANSFORMED = "transformed"


def as_feature_matrix(data, copy: bool = False) -> np.ndarray:
    """Validate ``data`` as an ``N x D`` matrix of finite floats."""
    mat = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
    if mat.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise DataError("feature matrix contains NaN or Inf")
    return mat


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Sample:
    sample_id: int
    features: np.ndarray = field(repr=False)
    pseudo_label: int
    camera_id: int | None = None
    origin: Origin = Origin.ORIGINAL
    source: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(self.features))
        object.__setattr__(self, "origin", Origin(self.origin))


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    query: tuple
    gallery: tuple

    def __post_init__(self):
        train_ids = {s.sample_id for s in self.train}
        for name in ("query", "gallery"):
            overlap = train_ids & {s.sample_id for s in getattr(self, name)}
            if overlap:
                raise DataError(f"{name} overlaps train on ids {sorted(overlap)[:5]}")


@dataclass(frozen=True)
class PTDataset:
    samples: tuple
    k_factor: int
    n_original: int

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        n, k = self.n_original, self.k_factor
        if k < 0:
            raise CardinalityError(f"K must be >= 0, got {k}")
        if len(self.samples) != (k + 1) * n:
            raise CardinalityError(
                f"PT dataset holds {len(self.samples)} samples, expected (K+1)*N = {(k + 1) * n}"
            )
        counts = np.bincount([s.pseudo_label for s in self.samples], minlength=n + 1)
        if counts[0] != 0 or len(counts) != n + 1 or np.any(counts[1:] != k + 1):
            raise CardinalityError("every label in 1..N must appear exactly K+1 times")

    @property
    def features(self) -> np.ndarray:
        return feature_matrix(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.pseudo_label for s in self.samples], dtype=np.int64)


def feature_matrix(samples: Sequence[Sample]) -> np.ndarray:
    if not samples:
        raise EmptyDataset("no samples")
    return np.vstack([s.features for s in samples])


def assign_pseudo_labels(features, cameras=None) -> list[Sample]:
    """One unique label per row: row ``i`` gets label ``i + 1``."""
    mat = as_feature_matrix(features)
    if mat.shape[0] == 0:
        raise EmptyDataset("cannot label an empty feature matrix")
    if cameras is not None and len(cameras) != mat.shape[0]:
        raise ShapeError("camera list length does not match feature rows")
    samples = []
    for i, row in enumerate(mat):
        cam = None if cameras is None or cameras[i] is None else int(cameras[i])
        samples.append(Sample(i, row, i + 1, cam))
    return samples


def merge_pt(original: Sequence[Sample], transformed: Sequence[Sample], K: int) -> PTDataset:
    """Build the PT dataset from originals and their ``K`` variants each.

    Each transformed sample names its original through ``source`` (an
    original ``sample_id``). Transformed samples inherit the source's pseudo
    label and camera, and are renumbered after the largest original id.
    """
    original = list(original)
    n = len(original)
    if K < 0 or len(transformed) != K * n:
        raise CardinalityError(f"expected K*N = {K * n} transformed samples, got {len(transformed)}")
    by_id = {s.sample_id: s for s in original}
    if len(by_id) != n:
        raise ProvenanceError("duplicate sample ids among originals")
    next_id = max(by_id, default=-1) + 1
    merged = list(original)
    per_source = dict.fromkeys(by_id, 0)
    for j, t in enumerate(transformed):
        src = by_id.get(t.source)
        if src is None:
            raise ProvenanceError(f"transformed sample {j} references unknown source {t.source}")
        per_source[t.source] += 1
        merged.append(
            Sample(next_id + j, t.features, src.pseudo_label, src.camera_id, Origin.TRANSFORMED, src.sample_id)
        )
    if any(c != K for c in per_source.values()):
        raise CardinalityError("every original must have exactly K transformed variants")
    return PTDataset(tuple(merged), K, n)


def drop_transformed(pt: PTDataset) -> list[Sample]:
    return [s for s in pt.samples if s.origin is Origin.ORIGINAL]


# ---------------------------------------------------------------------------
# file formats


def write_features_bin(path, features) -> None:
    mat = as_feature_matrix(features)
    rows, dim = mat.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", rows, dim))
        fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def read_features_bin(path) -> np.ndarray:
    """Read a binary feature file; values come back as float32."""
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise DataError(f"{path}: truncated header")
    rows, dim = struct.unpack("<II", raw[4:12])
    body = raw[12:]
    if len(body) != rows * dim * 4:
        raise DataError(f"{path}: expected {rows * dim * 4} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, dim).astype(np.float32)


def write_features_csv(path, features, ids=None, cameras=None) -> None:
    mat = as_feature_matrix(features)
    ids = range(mat.shape[0]) if ids is None else ids
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["id"] + [f"f{k}" for k in range(mat.shape[1])]
        if cameras is not None:
            header.append("camera")
        writer.writerow(header)
        for i, (sid, row) in enumerate(zip(ids, mat)):
            line = [int(sid)] + [repr(float(v)) for v in row]
            if cameras is not None:
                line.append("" if cameras[i] is None else int(cameras[i]))
            writer.writerow(line)


def read_features_csv(path):
    """Return ``(ids, features, cameras)``; cameras is None without the column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path}: empty CSV") from None
        if not header or header[0] != "id":
            raise DataError(f"{path}: first column must be 'id'")
        has_cam = header[-1] == "camera"
        fcols = header[1:-1] if has_cam else header[1:]
        if fcols != [f"f{k}" for k in range(len(fcols))]:
            raise DataError(f"{path}: feature columns must be f0..f{{D-1}}")
        ids, rows, cams = [], [], []
        for line in reader:
            if len(line) != len(header):
                raise DataError(f"{path}: row {len(ids) + 1} has {len(line)} fields")
            ids.append(int(line[0]))
            rows.append([float(v) for v in line[1 : 1 + len(fcols)]])
            if has_cam:
                cams.append(int(line[-1]) if line[-1] != "" else None)
    feats = as_feature_matrix(np.array(rows, dtype=np.float64).reshape(len(rows), len(fcols)))
    return np.array(ids, dtype=np.int64), feats, (cams if has_cam else None)


def write_manifest(path, samples: Iterable[Sample], labels=None) -> None:
    """Write one JSON object per sample. ``labels`` overrides ``pseudo_label``."""
    with open(path, "w") as fh:
        for i, s in enumerate(samples):
            rec = {
                "id": int(s.sample_id),
                "label": int(s.pseudo_label if labels is None else labels[i]),
                "camera": None if s.camera_id is None else int(s.camera_id),
                "origin": s.origin.value,
                "source": None if s.source is None else int(s.source),
            }
            fh.write(json.dumps(rec) + "\n")


def read_manifest(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            missing = {"id", "label", "camera", "origin", "source"} - rec.keys()
            if missing:
                raise DataError(f"{path}:{lineno}: missing keys {sorted(missing)}")
            if rec["origin"] not in ("original", "transformed"):
                raise DataError(f"{path}:{lineno}: bad origin {rec['origin']!r}")
            records.append(rec)
    return records


def samples_from_files(features, records: Sequence[dict]) -> list[Sample]:
    """Pair manifest records with feature rows (same order)."""
    mat = as_feature_matrix(features)
    if mat.shape[0] != len(records):
        raise CardinalityError(f"{mat.shape[0]} feature rows vs {len(records)} manifest records")
    return [
        Sample(r["id"], row, r["label"], r["camera"], Origin(r["origin"]), r["source"])
        for r, row in zip(records, mat)
    ]


def pt_from_samples(samples: Sequence[Sample]) -> PTDataset:
    """Re-assemble a PTDataset from a flat sample list (e.g. loaded from a manifest)."""
    originals = [s for s in samples if s.origin is Origin.ORIGINAL]
    transformed = [s for s in samples if s.origin is Origin.TRANSFORMED]
    n = len(originals)
    if n == 0:
        raise EmptyDataset("no original samples")
    if len(transformed) % n:
        raise CardinalityError(f"{len(transformed)} transformed samples is not a multiple of N={n}")
    labels = {s.sample_id: s.pseudo_label for s in originals}
    for t in transformed:
        if t.source not in labels:
            raise ProvenanceError(f"sample {t.sample_id} references unknown source {t.source}")
        if labels[t.source] != t.pseudo_label:
            raise ProvenanceError(f"sample {t.sample_id} does not carry its source's label")
    return PTDataset(tuple(originals) + tuple(transformed), len(transformed) // n, n)
