"""Encoder, Adam, P x M batch sampling and the two training stages.

Stage 1 (``train_init``) fits the encoder on the PT dataset with the
classification and softmax-triplet losses over per-image pseudo labels.
Stage 2 (``train_discriminative``) re-clusters the original samples before
every epoch, freezes the cluster geometry for that epoch, and adds the
radial distance loss, using cluster indices as labels.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .clustering import (
    ClusterAssignment,
    ClusterGeometry,
    cluster_hierarchical,
    cluster_schedule,
    compute_geometry,
)
from .dataset import Origin, PTDataset, Sample, as_feature_matrix, feature_matrix
from .errors import DataError, NumericsError, SamplerError, ShapeError, StageViolation
from .losses import LossValue, loss_cls, loss_combined, loss_radial, loss_triplet_softmax

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RDC1"


@dataclass
class TrainConfig:
    epochs_init: int = 40
    epochs_cluster: int = 40
    lr: float = 3.5e-4
    weight_decay: float = 5e-4
    batch_p: int = 16
    batch_m: int = 4
    tau: float = 1.0
    gamma: float = 0.5
    lambda_tri: float = 1.0
    lambda_rd: float = 1.0
    K: int = 3
    clusters_start: int = 20
    clusters_end: int = 20
    seed: int = 0
    embed_dim: int = 64
    hidden_dim: int = 128
    normalize_output: bool = True
    triplet_variant: str = "literal"
    mining: str = "hard"
    batches_per_epoch: int = 0

    def __post_init__(self):
        for name in ("batch_p", "batch_m", "embed_dim", "hidden_dim", "clusters_start", "clusters_end", "lr", "tau"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("epochs_init", "epochs_cluster", "weight_decay", "gamma", "lambda_tri", "lambda_rd", "K",
                     "batches_per_epoch"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.triplet_variant not in ("literal", "logsoftmax"):
            raise ValueError(f"unknown triplet variant {self.triplet_variant!r}")
        if self.mining not in ("hard", "random"):
            raise ValueError(f"unknown mining mode {self.mining!r}")

    @property
    def batch_size(self) -> int:
        return self.batch_p * self.batch_m


# ---------------------------------------------------------------------------
# encoder


@dataclass(frozen=True, eq=False)
class EncoderParams:
    """Affine layers with ``tanh`` between them; optional L2-normalised output."""

    layers: tuple
    normalize_output: bool = True

    def __post_init__(self):
        layers = tuple((np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)) for w, b in self.layers)
        for k, (w, b) in enumerate(layers):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k and w.shape[0] != layers[k - 1][0].shape[1]:
                raise ShapeError(f"layer {k} input dim does not chain")
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def tensors(self) -> list:
        return [t for layer in self.layers for t in layer]

    def with_tensors(self, tensors: Sequence[np.ndarray]) -> "EncoderParams":
        it = iter(tensors)
        return EncoderParams(tuple((next(it), next(it)) for _ in self.layers), self.normalize_output)


def init_encoder(in_dim: int, config: TrainConfig, rng=None) -> EncoderParams:
    rng = np.random.default_rng([config.seed, 0]) if rng is None else rng
    dims = [in_dim, config.hidden_dim, config.embed_dim] if config.hidden_dim > 0 else [in_dim, config.embed_dim]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        layers.append((rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)), np.zeros(fan_out)))
    return EncoderParams(tuple(layers), config.normalize_output)


def _forward_cached(params: EncoderParams, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"features {x.shape} do not match encoder input dim {params.in_dim}")
    acts = [x]
    h = x
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        h = h @ w + b
        if k < last:
            h = np.tanh(h)
        acts.append(h)
    norm = None
    if params.normalize_output:
        norm = np.maximum(np.sqrt((h * h).sum(axis=1, keepdims=True)), 1e-12)
        h = h / norm
    return h, (acts, norm)


def forward(params: EncoderParams, features) -> np.ndarray:
    return _forward_cached(params, as_feature_matrix(features))[0]


def _backward(params: EncoderParams, cache, out: np.ndarray, grad_out: np.ndarray) -> list:
    acts, norm = cache
    g = grad_out
    if params.normalize_output:
        g = (g - out * (g * out).sum(axis=1, keepdims=True)) / norm
    grads = []
    last = len(params.layers) - 1
    for k in range(last, -1, -1):
        w, _ = params.layers[k]
        if k < last:
            g = g * (1.0 - acts[k + 1] ** 2)
        grads.append((acts[k].T @ g, g.sum(axis=0)))
        g = g @ w.T
    return [t for pair in reversed(grads) for t in pair]


def init_head(in_dim: int, num_classes: int, rng) -> list:
    return [rng.normal(0.0, 1.0 / math.sqrt(in_dim), size=(in_dim, num_classes)), np.zeros(num_classes)]


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, tensors: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(t) for t in tensors], [np.zeros_like(t) for t in tensors], **kw)


def adam_step(params, grads, state: AdamState, lr: float, weight_decay: float, batch_index=None):
    """One Adam update with bias correction and decoupled weight decay.

    ``params`` is an :class:`EncoderParams` or a list of arrays; the same kind
    is returned together with the advanced state. Inputs are not mutated.
    """
    is_encoder = isinstance(params, EncoderParams)
    tensors = params.tensors() if is_encoder else list(params)
    grads = list(grads)
    if len(grads) != len(tensors) or len(state.first_moment) != len(tensors):
        raise ShapeError("params, grads and optimiser state have different lengths")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericsError("non-finite gradient", batch_index)

    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    t = state.step_count + 1
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(tensors, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        p = p - lr * weight_decay * p
        p = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_p.append(p)
        new_m.append(m)
        new_v.append(v)
    for p in new_p:
        if not np.all(np.isfinite(p)):
            raise NumericsError("parameters became non-finite", batch_index)
    new_state = dataclasses.replace(state, first_moment=new_m, second_moment=new_v, step_count=t)
    return (params.with_tensors(new_p) if is_encoder else new_p), new_state


# ---------------------------------------------------------------------------
# batches


def _group_by_label(labels) -> dict:
    labels = np.asarray(labels)
    order = np.argsort(labels, kind="stable")
    keys, starts = np.unique(labels[order], return_index=True)
    return dict(zip(keys.tolist(), np.split(order, starts[1:])))


def _pk_from_groups(groups: dict, P: int, M: int, rng) -> np.ndarray:
    keys = list(groups)
    if len(keys) < P:
        raise SamplerError(f"need {P} distinct labels, only {len(keys)} present")
    chosen = rng.choice(len(keys), size=P, replace=False)
    out = []
    for c in chosen:
        members = groups[keys[c]]
        out.append(rng.choice(members, size=M, replace=len(members) < M))
    return np.concatenate(out)


def sample_pk_batch(labels, P: int, M: int, rng) -> np.ndarray:
    """``P`` distinct labels, ``M`` samples each (with replacement only when short)."""
    return _pk_from_groups(_group_by_label(labels), P, M, rng)


def mine_triplets(emb: np.ndarray, labels: np.ndarray, mining: str = "hard", rng=None):
    """``(anchor, positive, negative)`` row indices; anchors lacking either side are skipped."""
    diff = emb[:, None, :] - emb[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    same = labels[:, None] == labels[None, :]
    n = len(labels)
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    anchors = np.flatnonzero(pos_mask.any(axis=1) & neg_mask.any(axis=1))
    if mining == "hard":
        pos = np.where(pos_mask, dist, -np.inf).argmax(axis=1)[anchors]
        neg = np.where(neg_mask, dist, np.inf).argmin(axis=1)[anchors]
    else:
        pos = np.array([rng.choice(np.flatnonzero(pos_mask[a])) for a in anchors], dtype=np.int64)
        neg = np.array([rng.choice(np.flatnonzero(neg_mask[a])) for a in anchors], dtype=np.int64)
    return anchors, pos, neg


@dataclass
class BatchLoss:
    total: float
    cls: float
    tri: float
    rd: float
    encoder_grads: list
    head_grads: list
    embeddings: np.ndarray


def batch_objective(params: EncoderParams, head: Sequence[np.ndarray], x: np.ndarray, labels: np.ndarray,
                    config: TrainConfig, geometry: ClusterGeometry | None = None, rng=None) -> BatchLoss:
    """Combined loss on one batch and its gradients w.r.t. encoder and head.

    ``labels`` index the head's classes (0-based). With ``geometry`` the
    labels are also the samples' own cluster indices for the radial term,
    which enters as a per-sample mean.
    """
    emb, cache = _forward_cached(params, x)
    w_h, b_h = head
    B = emb.shape[0]

    logits = emb @ w_h + b_h
    cls = loss_cls(logits, labels)

    a, p, n = mine_triplets(emb, labels, config.mining, rng)
    g_tri = np.zeros_like(emb)
    if a.size:
        tri = loss_triplet_softmax(emb[a], emb[p], emb[n], config.tau, config.triplet_variant)
        np.add.at(g_tri, a, tri.grads["anchor"])
        np.add.at(g_tri, p, tri.grads["positive"])
        np.add.at(g_tri, n, tri.grads["negative"])
        tri = LossValue(tri.value, {"embeddings": g_tri})
    else:
        tri = LossValue(0.0, {"embeddings": g_tri})

    if geometry is not None and config.lambda_rd != 0:
        rd = loss_radial(emb, labels, geometry, config.gamma)
        rd = LossValue(rd.value / B, {"embeddings": rd.grads["embeddings"] / B})
    else:
        rd = LossValue(0.0, {"embeddings": np.zeros_like(emb)})

    total = loss_combined(cls, tri, rd, config.lambda_tri, config.lambda_rd if geometry is not None else 0.0)
    d_logits = total.grads["logits"]
    d_emb = total.grads["embeddings"] + d_logits @ w_h.T
    head_grads = [emb.T @ d_logits, d_logits.sum(axis=0)]
    enc_grads = _backward(params, cache, emb, d_emb)
    return BatchLoss(total.value, cls.value, tri.value, rd.value, enc_grads, head_grads, emb)


# ---------------------------------------------------------------------------
# training loops


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    loss_cls: float
    loss_tri: float
    loss_rd: float
    num_clusters: int | None = None
    mean_radius: float | None = None
    loss_total: float = 0.0
    assignment: ClusterAssignment | None = field(default=None, repr=False)
    geometry: ClusterGeometry | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "stage": self.stage,
            "loss_cls": float(self.loss_cls),
            "loss_tri": float(self.loss_tri),
            "loss_rd": float(self.loss_rd),
            "num_clusters": self.num_clusters,
            "mean_radius": self.mean_radius,
        }


@dataclass
class BatchContext:
    epoch: int
    batch_index: int
    indices: np.ndarray
    geometry: ClusterGeometry
    embeddings: np.ndarray
    params: EncoderParams


def _batches_per_epoch(n: int, config: TrainConfig) -> int:
    if config.batches_per_epoch > 0:
        return config.batches_per_epoch
    return max(1, math.ceil(n / config.batch_size))


def _run_epoch(params, head, adam, x, labels, groups, config, P, rng, geometry=None, epoch=0, on_batch=None,
               check=None):
    sums = np.zeros(4)
    nb = _batches_per_epoch(len(labels), config)
    for b in range(nb):
        idx = _pk_from_groups(groups, P, config.batch_m, rng)
        if check is not None:
            check(idx)
        res = batch_objective(params, head, x[idx], labels[idx], config, geometry, rng)
        if on_batch is not None:
            on_batch(BatchContext(epoch, b, idx, geometry, res.embeddings, params))
        tensors, adam = adam_step(params.tensors() + list(head), res.encoder_grads + res.head_grads, adam,
                                  config.lr, config.weight_decay, batch_index=b)
        n_enc = len(params.tensors())
        params = params.with_tensors(tensors[:n_enc])
        head = tensors[n_enc:]
        sums += (res.total, res.cls, res.tri, res.rd)
    return params, head, adam, sums / nb


def train_init(pt: PTDataset, config: TrainConfig, params: EncoderParams | None = None,
               on_epoch: Callable[[EpochRecord], None] | None = None) -> EncoderParams:
    """Initialisation stage on the PT dataset (classification + triplet)."""
    x = pt.features
    labels = pt.labels - 1
    if params is None:
        params = init_encoder(x.shape[1], config)
    if config.epochs_init <= 0:
        return params
    rng = np.random.default_rng([config.seed, 2])
    head = init_head(params.out_dim, pt.n_original, np.random.default_rng([config.seed, 1]))
    adam = AdamState.zeros_like(params.tensors() + head)
    groups = _group_by_label(labels)
    for epoch in range(config.epochs_init):
        params, head, adam, means = _run_epoch(params, head, adam, x, labels, groups, config, config.batch_p, rng)
        rec = EpochRecord(epoch, "init", means[1], means[2], 0.0, loss_total=means[0])
        log.info("init epoch %d: loss %.5f (cls %.5f, tri %.5f)", epoch, means[0], means[1], means[2])
        if on_epoch is not None:
            on_epoch(rec)
    return params


def train_discriminative(originals: Sequence[Sample], params: EncoderParams, config: TrainConfig,
                         on_epoch: Callable[[EpochRecord], None] | None = None,
                         on_batch: Callable[[BatchContext], None] | None = None) -> EncoderParams:
    """Discriminative clustering stage on original samples only."""
    originals = list(originals)
    if any(s.origin is not Origin.ORIGINAL for s in originals):
        raise StageViolation("pose-transformed samples must be dropped before discriminative clustering")
    if config.epochs_cluster <= 0:
        return params
    x = feature_matrix(originals)
    is_original = np.array([s.origin is Origin.ORIGINAL for s in originals])

    def check(idx):
        if not is_original[idx].all():
            raise StageViolation("batch contains a transformed sample")

    rng = np.random.default_rng([config.seed, 3])
    schedule = cluster_schedule(config.clusters_start, config.clusters_end, config.epochs_cluster)
    enc_state = AdamState.zeros_like(params.tensors())
    n_enc = len(enc_state.first_moment)
    for epoch, C in enumerate(schedule):
        emb = forward(params, x)
        assignment = cluster_hierarchical(emb, C)
        geometry = compute_geometry(emb, assignment, epoch)
        labels = assignment.labels
        head = init_head(params.out_dim, C, np.random.default_rng([config.seed, 4, epoch]))
        # head moments restart with every re-clustering; encoder moments carry over
        head_state = AdamState.zeros_like(head)
        adam = dataclasses.replace(
            enc_state,
            first_moment=enc_state.first_moment + head_state.first_moment,
            second_moment=enc_state.second_moment + head_state.second_moment,
        )
        P = min(config.batch_p, C)
        params, head, adam, means = _run_epoch(params, head, adam, x, labels, _group_by_label(labels), config, P,
                                               rng, geometry, epoch, on_batch, check)
        enc_state = dataclasses.replace(adam, first_moment=adam.first_moment[:n_enc],
                                        second_moment=adam.second_moment[:n_enc])
        rec = EpochRecord(epoch, "cluster", means[1], means[2], means[3], C, float(geometry.radii.mean()),
                          means[0], assignment, geometry)
        log.info("cluster epoch %d: C=%d loss %.5f (cls %.5f, tri %.5f, rd %.5f)", epoch, C, *means)
        if on_epoch is not None:
            on_epoch(rec)
    return params


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: EncoderParams, config: dict | None = None) -> None:
    """``RDC1`` | u32 header length | JSON header | per tensor: u32 ndim, u32 dims, <f4 data."""
    tensors = params.tensors()
    header = json.dumps(
        {"config": config or {}, "normalize_output": params.normalize_output, "num_layers": len(params.layers)},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for t in tensors:
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Return ``(params, config_echo)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    try:
        (hlen,) = struct.unpack_from("<I", raw, 4)
        header = json.loads(raw[8 : 8 + hlen])
        pos = 8 + hlen
        tensors = []
        for _ in range(2 * header["num_layers"]):
            (ndim,) = struct.unpack_from("<I", raw, pos)
            shape = struct.unpack_from(f"<{ndim}I", raw, pos + 4)
            pos += 4 + 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            tensors.append(np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float64))
            pos += 4 * count
    except (struct.error, ValueError, KeyError) as exc:
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from None
    if pos != len(raw):
        raise DataError(f"{path}: {len(raw) - pos} trailing bytes")
    it = iter(tensors)
    layers = tuple((next(it), next(it)) for _ in range(header["num_layers"]))
    return EncoderParams(layers, header["normalize_output"]), header["config"]
