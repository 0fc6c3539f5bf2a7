"""Training objectives with closed-form gradients.

* ``loss_cls``: mean cross-entropy over identity logits.
* ``loss_triplet_softmax``: softmax weight on the positive distance,
  ``e^{d+} / (e^{d+} + e^{d-})`` with ``d = ||a - x|| / tau``; the
  ``"logsoftmax"`` variant returns ``-log softmax(-d)[positive]`` instead.
* ``loss_radial``: hinge ``max(0, r_l + gamma - ||c_l - f_i||)`` summed over
  every sample and every cluster other than its own, against frozen
  centroids ``c_l`` and radii ``r_l``.
* ``loss_combined``: ``cls + lambda_tri * tri + lambda_rd * rd``.

Every loss returns a :class:`LossValue` whose ``grads`` dict is keyed by
input name and mirrors each input's shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .clustering import ClusterAssignment, ClusterGeometry
from .errors import LabelError, ParamError, ShapeError

TRIPLET_VARIANTS = ("literal", "logsoftmax")


@dataclass
class LossValue:
    value: float
    grads: dict = field(default_factory=dict)
    per_item: np.ndarray | None = None


def loss_cls(logits, labels) -> LossValue:
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if z.ndim != 2 or y.shape != (z.shape[0],):
        raise ShapeError(f"logits {z.shape} and labels {y.shape} disagree")
    B, M = z.shape
    if y.size and (y.min() < 0 or y.max() >= M):
        raise LabelError(f"labels must lie in [0, {M})")
    y = y.astype(np.intp)
    rows = np.arange(B)
    nll = -log_softmax(z, axis=1)[rows, y]
    grad = softmax(z, axis=1)
    grad[rows, y] -= 1.0
    return LossValue(float(nll.mean()), {"logits": grad / B}, nll)


def _dist_and_unit(a: np.ndarray, b: np.ndarray):
    """Row distances ``||a - b||`` and unit vectors ``(a - b) / ||a - b||`` (0 where coincident)."""
    diff = a - b
    d = np.sqrt((diff * diff).sum(axis=1))
    unit = np.zeros_like(diff)
    nz = d > 0
    unit[nz] = diff[nz] / d[nz, None]
    return d, unit


def loss_triplet_softmax(anchor, positive, negative, tau: float = 1.0, variant: str = "literal") -> LossValue:
    """Softmax-triplet loss, averaged over triplets (rows)."""
    if not tau > 0:
        raise ParamError(f"tau must be positive, got {tau}")
    if variant not in TRIPLET_VARIANTS:
        raise ParamError(f"unknown triplet variant {variant!r}")
    a, p, n = (np.asarray(v, dtype=np.float64) for v in (anchor, positive, negative))
    if not a.shape == p.shape == n.shape:
        raise ShapeError(f"triplet shapes differ: {a.shape}, {p.shape}, {n.shape}")
    single = a.ndim == 1
    if single:
        a, p, n = a[None], p[None], n[None]
    T = a.shape[0]

    dp, up = _dist_and_unit(a, p)
    dn, un = _dist_and_unit(a, n)
    gap = (dp - dn) / tau
    if variant == "literal":
        per = expit(gap)
        slope = per * (1.0 - per)
    else:
        per = np.logaddexp(0.0, gap)
        slope = expit(gap)
    # d per / d dp = slope / tau ; d per / d dn = -slope / tau
    w = (slope / (tau * T))[:, None]
    g_p = -w * up
    g_n = w * un
    g_a = -(g_p + g_n)
    grads = {"anchor": g_a, "positive": g_p, "negative": g_n}
    if single:
        grads = {k: v[0] for k, v in grads.items()}
    return LossValue(float(per.mean()), grads, per)


def loss_radial(embeddings, assignment, geometry: ClusterGeometry, gamma: float) -> LossValue:
    """Radial distance hinge against a frozen cluster snapshot.

    ``assignment`` may be a :class:`ClusterAssignment` or a plain array of
    cluster indices (a mini-batch need not cover every cluster).
    """
    f = np.asarray(embeddings, dtype=np.float64)
    labels = assignment.labels if isinstance(assignment, ClusterAssignment) else np.asarray(assignment)
    if f.ndim != 2 or labels.shape != (f.shape[0],):
        raise ShapeError(f"embeddings {f.shape} and labels {labels.shape} disagree")
    C = geometry.num_clusters
    if f.shape[1] != geometry.centroids.shape[1]:
        raise ShapeError("embedding dim differs from centroid dim")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ShapeError(f"cluster labels must lie in [0, {C})")
    if gamma < 0:
        raise ParamError(f"gamma must be >= 0, got {gamma}")

    diff = geometry.centroids[None, :, :] - f[:, None, :]  # (N, C, D): c_l - f_i
    d = np.sqrt((diff * diff).sum(axis=2))
    slack = geometry.radii[None, :] + gamma - d
    foreign = np.ones_like(d, dtype=bool)
    foreign[np.arange(f.shape[0]), labels.astype(np.intp)] = False
    violated = foreign & (slack > 0)
    value = float(slack[violated].sum())

    # d/df of (r + gamma - ||c - f||) = (c - f) / ||c - f||
    coef = np.zeros_like(d)
    ok = violated & (d > 0)
    coef[ok] = 1.0 / d[ok]
    grad = (coef[:, :, None] * diff).sum(axis=1)
    return LossValue(value, {"embeddings": grad}, np.where(violated, slack, 0.0).sum(axis=1))


def loss_combined(cls: LossValue, tri: LossValue, rd: LossValue,
                  lambda_tri: float = 1.0, lambda_rd: float = 1.0) -> LossValue:
    value = cls.value + lambda_tri * tri.value + lambda_rd * rd.value
    grads: dict = {}
    for weight, part in ((1.0, cls), (lambda_tri, tri), (lambda_rd, rd)):
        for key, g in part.grads.items():
            grads[key] = grads[key] + weight * g if key in grads else weight * np.asarray(g, dtype=np.float64)
    return LossValue(value, grads)
