"""Query/gallery ranking metrics (CMC, mAP) and a 2-D projection exporter."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import as_feature_matrix
from .errors import ShapeError

DEFAULT_RANKS = (1, 5, 10, 20)


@dataclass
class EvalReport:
    cmc: dict
    map_score: float
    num_queries_evaluated: int
    num_queries_excluded: int = 0
    average_precision: np.ndarray = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "rank1": self.cmc.get(1),
            "rank5": self.cmc.get(5),
            "rank10": self.cmc.get(10),
            "map": self.map_score,
            "queries_evaluated": self.num_queries_evaluated,
        }


def distance_matrix(queries, gallery) -> np.ndarray:
    q = as_feature_matrix(queries)
    g = as_feature_matrix(gallery)
    if q.shape[1] != g.shape[1]:
        raise ShapeError(f"query dim {q.shape[1]} != gallery dim {g.shape[1]}")
    return cdist(q, g, metric="euclidean")


def evaluate(dist, query_ids, gallery_ids, query_cams=None, gallery_cams=None,
             camera_filter: bool = True, ranks=DEFAULT_RANKS) -> EvalReport:
    """Single-query CMC and mAP.

    With ``camera_filter`` (and camera ids on both sides) a gallery entry
    sharing both identity and camera with the query is removed before
    scoring. Queries left without any correct match are excluded.
    """
    dist = np.asarray(dist, dtype=np.float64)
    q_ids, g_ids = np.asarray(query_ids), np.asarray(gallery_ids)
    if dist.shape != (len(q_ids), len(g_ids)):
        raise ShapeError(f"distance matrix {dist.shape} vs {len(q_ids)} queries, {len(g_ids)} gallery")
    use_cams = camera_filter and query_cams is not None and gallery_cams is not None
    if use_cams:
        q_cams, g_cams = np.asarray(query_cams), np.asarray(gallery_cams)

    hits_at = np.zeros(max(ranks), dtype=np.int64)
    aps = []
    excluded = 0
    for q in range(len(q_ids)):
        order = np.argsort(dist[q], kind="stable")
        if use_cams:
            keep = ~((g_ids[order] == q_ids[q]) & (g_cams[order] == q_cams[q]))
            order = order[keep]
        match = g_ids[order] == q_ids[q]
        if not match.any():
            excluded += 1
            continue
        pos = np.flatnonzero(match)
        if pos[0] < len(hits_at):
            hits_at[pos[0] :] += 1
        aps.append(np.mean(np.arange(1, len(pos) + 1) / (pos + 1)))

    n_eval = len(aps)
    cmc = {k: (float(hits_at[k - 1]) / n_eval if n_eval else 0.0) for k in ranks}
    mean_ap = float(np.mean(aps)) if n_eval else 0.0
    return EvalReport(cmc, mean_ap, n_eval, excluded, np.array(aps))


def write_report(path, report: EvalReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def export_projection(embeddings, labels) -> list[tuple]:
    """Project onto the top two principal axes; returns ``(x, y, label)`` rows.

    Each axis is signed so that its first non-negligible loading is positive.
    Missing axes (rank < 2) come out as zeros.
    """
    x = as_feature_matrix(embeddings)
    if x.shape[0] < 2:
        raise ShapeError("projection needs at least two points")
    if len(labels) != x.shape[0]:
        raise ShapeError("one label per embedding row required")
    centered = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = max(x.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    coords = np.zeros((x.shape[0], 2))
    for k in range(min(2, len(s))):
        if s[k] <= tol or s[k] == 0:
            continue
        axis = vt[k]
        lead = np.flatnonzero(np.abs(axis) > 1e-12)
        if lead.size and axis[lead[0]] < 0:
            axis = -axis
        coords[:, k] = centered @ axis
    return [(float(a), float(b), lab) for (a, b), lab in zip(coords, labels)]


def write_projection_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label"])
        for x, y, lab in rows:
            writer.writerow([repr(x), repr(y), lab])
