"""Margin-softmax and embedding objectives in conventional and queue form.

Conventional classification scores unit features against a learned prototype
matrix.  The queue form scores each probe feature against its own gallery
feature (positive) and the gallery queue (negatives, same-id entries masked).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .queue import GalleryQueue
from .tensor import (
    ContractError,
    DimensionError,
    Tensor,
    add,
    arccos,
    concat,
    cos,
    l2_normalize,
    log_softmax,
    matmul,
    minimum,
    mul,
    norm,
    relu,
    reshape,
    scale,
    scatter,
    sqrt,
    square,
    sub,
    take,
    tmean,
    transpose,
    tsum,
    where,
)

CLASSIFICATION_KINDS = (
    "softmax",
    "a_softmax",
    "am_softmax",
    "arc_softmax",
    "proto_constraint_softmax",
)
EMBEDDING_KINDS = ("contrastive", "triplet", "npairs")
ALL_KINDS = CLASSIFICATION_KINDS + EMBEDDING_KINDS

DEFAULT_MARGIN = {
    "softmax": 0.0,
    "proto_constraint_softmax": 0.0,
    "a_softmax": 2.0,
    "am_softmax": 0.35,
    "arc_softmax": 0.5,
    "contrastive": 1.0,
    "triplet": 1.0,
    "npairs": 0.0,
}


class LossConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    kind: str = "softmax"
    s: float = 30.0
    margin: float | None = None
    alpha: float = 1.0
    beta: float = 0.1

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise LossConfigError(f"unknown loss kind {self.kind!r}; expected one of {ALL_KINDS}")
        if self.margin is None:
            object.__setattr__(self, "margin", DEFAULT_MARGIN[self.kind])
        if self.s <= 0:
            raise LossConfigError(f"scale s must be positive, got {self.s}")
        if self.margin < 0:
            raise LossConfigError(f"margin must be >= 0, got {self.margin}")
        if self.kind == "arc_softmax" and self.margin >= math.pi / 2:
            raise LossConfigError("arc margin must be below pi/2")
        if self.kind == "a_softmax" and self.margin != 2:
            raise LossConfigError("a_softmax supports only the multiplicative margin 2")
        if self.alpha <= 0 or self.beta < 0:
            raise LossConfigError("need alpha > 0 and beta >= 0")

    @property
    def is_classification(self) -> bool:
        return self.kind in CLASSIFICATION_KINDS


class PrototypeMatrix:
    """Learned class prototypes; rows are normalized at every use."""

    def __init__(self, n_classes: int, dim: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.W = Tensor(rng.standard_normal((n_classes, dim)) / np.sqrt(dim), requires_grad=True)

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    def normalized(self) -> Tensor:
        return l2_normalize(self.W, axis=1)

    def unit_rows(self) -> np.ndarray:
        w = self.W.data
        return w / np.linalg.norm(w, axis=1, keepdims=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _prototypes(W) -> Tensor:
    if isinstance(W, PrototypeMatrix):
        return W.normalized()
    return l2_normalize(_as_tensor(W), axis=1)


def logits_conventional(features: Tensor, W) -> Tensor:
    """B x n cosine matrix between unit features and normalized prototypes."""
    features = _as_tensor(features)
    protos = _prototypes(W)
    if features.ndim != 2 or features.shape[1] != protos.shape[1]:
        raise DimensionError(f"features {features.shape} do not match prototypes {protos.shape}")
    return matmul(features, transpose(protos))


def margin_transform(cos_pos, kind: str, margin: float | None = None) -> Tensor:
    """Positive-logit transform applied before scaling by s."""
    c = _as_tensor(cos_pos)
    if margin is None:
        margin = DEFAULT_MARGIN.get(kind, 0.0)
    if kind in ("softmax", "proto_constraint_softmax"):
        return c
    if kind == "am_softmax":
        return sub(c, margin)
    if kind == "arc_softmax":
        return cos(minimum(add(arccos(c), margin), math.pi))
    if kind == "a_softmax":
        # psi(theta) = (-1)^k cos(2 theta) - 2k with k = 0 on [0, pi/2], 1 beyond
        c2 = scale(square(c), 2.0)
        return where(c.data >= 0.0, sub(c2, 1.0), sub(scale(c2, -1.0), 1.0))
    raise LossConfigError(f"no margin transform for loss kind {kind!r}")


def _nll_first_column(pos: Tensor, neg: Tensor, s: float, mask=None) -> Tensor:
    """Mean of -log softmax([s*pos_i, s*neg_i...])[0] over rows."""
    B = pos.shape[0]
    logits = scale(concat([reshape(pos, (B, 1)), neg], axis=1), s)
    full_mask = None
    if mask is not None:
        full_mask = np.concatenate([np.zeros((B, 1), dtype=bool), np.asarray(mask, dtype=bool)], axis=1)
    lp = log_softmax(logits, full_mask)
    return scale(tmean(take(lp, (slice(None), 0))), -1.0)


def prototype_penalty(W: PrototypeMatrix, labels, cfg: LossConfig) -> Tensor:
    """Batch mean of beta * (alpha - ||w_y||), no hinge."""
    rows = take(W.W, np.asarray(labels))
    norms = sqrt(tsum(square(rows), axis=1))
    return scale(tmean(sub(cfg.alpha, norms)), cfg.beta)


def classification_loss(features, labels, W, cfg: LossConfig, proto_constraint: bool | None = None) -> Tensor:
    """Margin softmax cross-entropy over the full prototype matrix."""
    features = _as_tensor(features)
    labels = np.asarray(labels, dtype=np.int64)
    cosines = logits_conventional(features, W)
    B, n = cosines.shape
    if labels.shape != (B,):
        raise ContractError(f"expected {B} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise ContractError(f"labels must lie in [0, {n}), got range [{labels.min()}, {labels.max()}]")
    rows = np.arange(B)
    pos = take(cosines, (rows, labels))
    delta = sub(margin_transform(pos, cfg.kind, cfg.margin), pos)
    logits = scale(add(cosines, scatter(delta, (rows, labels), (B, n))), cfg.s)
    lp = log_softmax(logits)
    loss = scale(tmean(take(lp, (rows, labels))), -1.0)
    if proto_constraint is None:
        proto_constraint = cfg.kind == "proto_constraint_softmax"
    if proto_constraint:
        if not isinstance(W, PrototypeMatrix):
            W = _wrap(W)
        loss = add(loss, prototype_penalty(W, labels, cfg))
    return loss


def _wrap(W) -> PrototypeMatrix:
    pm = PrototypeMatrix.__new__(PrototypeMatrix)
    pm.W = _as_tensor(W)
    return pm


def softmax_probs(features, W, cfg: LossConfig, labels) -> np.ndarray:
    """Row-stochastic prediction matrix matching ``classification_loss``."""
    labels = np.asarray(labels)
    cosines = logits_conventional(features, W).data
    rows = np.arange(len(labels))
    pos = cosines[rows, labels]
    logits = cosines.copy()
    logits[rows, labels] = margin_transform(Tensor(pos), cfg.kind, cfg.margin).data
    logits *= cfg.s
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def _queue_arrays(queue) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(queue, GalleryQueue):
        return queue.features, queue.ids
    feats, ids = queue
    return np.asarray(feats, dtype=np.float64), np.asarray(ids, dtype=np.int64)


def sst_loss(probe_feats, gallery_feats, ids, queue, cfg: LossConfig) -> Tensor:
    """Margin softmax with the gallery feature as positive prototype.

    Negatives are the queue entries whose id differs from the sample's id.
    ``queue`` is a GalleryQueue or a (features, ids) pair.  Gallery features
    are treated as constants.
    """
    probe = _as_tensor(probe_feats)
    gallery = np.asarray(getattr(gallery_feats, "data", gallery_feats))
    ids = np.asarray(ids, dtype=np.int64)
    qf, qid = _queue_arrays(queue)
    if probe.shape != gallery.shape:
        raise DimensionError(f"probe {probe.shape} and gallery {gallery.shape} features differ")
    if qf.shape[1] != probe.shape[1]:
        raise DimensionError(f"queue dim {qf.shape[1]} != feature dim {probe.shape[1]}")
    pos = tsum(mul(probe, Tensor(gallery)), axis=1)
    pos = margin_transform(pos, cfg.kind, cfg.margin)
    neg = matmul(probe, Tensor(qf.T))
    mask = qid[None, :] == ids[:, None]
    return _nll_first_column(pos, neg, cfg.s, mask)


# ------------------------------------------------------------ embedding losses

def _sq_dist(a: Tensor, b: Tensor) -> Tensor:
    return tsum(square(sub(a, b)), axis=1)


def contrastive_loss(anchor_feats, pair_feats, same_id_flags, margin: float = 1.0) -> Tensor:
    """Mean of d^2 over same-id pairs and max(0, margin - d)^2 over the rest."""
    a, p = _as_tensor(anchor_feats), _as_tensor(pair_feats)
    flags = np.asarray(same_id_flags, dtype=bool)
    if a.shape != p.shape:
        raise DimensionError(f"anchor {a.shape} and pair {p.shape} features differ")
    if flags.shape != (a.shape[0],):
        raise ContractError(f"expected {a.shape[0]} flags, got {flags.shape}")
    d2 = _sq_dist(a, p)
    d = sqrt(d2, eps=1e-12)
    hinge = square(relu(sub(margin, d)))
    return tmean(where(flags, d2, hinge))


def triplet_loss(anchor, positive, negative, margin: float = 1.0) -> Tensor:
    a, p, n = _as_tensor(anchor), _as_tensor(positive), _as_tensor(negative)
    if not (a.shape == p.shape == n.shape):
        raise DimensionError(f"triplet shapes differ: {a.shape}, {p.shape}, {n.shape}")
    return tmean(relu(add(sub(_sq_dist(a, p), _sq_dist(a, n)), margin)))


def npairs_loss(anchors, positives, s: float = 1.0, extra_negatives=None, extra_mask=None) -> Tensor:
    """Cross-entropy over similarities to all in-batch positives, target i.

    ``extra_negatives`` (K x d) are appended as additional columns; entries
    flagged in ``extra_mask`` (B x K) are excluded.
    """
    a, p = _as_tensor(anchors), _as_tensor(positives)
    if a.shape != p.shape:
        raise DimensionError(f"anchors {a.shape} and positives {p.shape} differ")
    B = a.shape[0]
    if extra_negatives is None and B < 2:
        raise ContractError("npairs needs at least two rows for in-batch negatives")
    sims = matmul(a, transpose(p))
    mask = None
    if extra_negatives is not None:
        extra = _as_tensor(extra_negatives)
        sims = concat([sims, matmul(a, transpose(extra))], axis=1)
        if extra_mask is not None:
            mask = np.concatenate([np.zeros((B, B), dtype=bool), np.asarray(extra_mask, dtype=bool)], axis=1)
    lp = log_softmax(scale(sims, s), mask)
    rows = np.arange(B)
    return scale(tmean(take(lp, (rows, rows))), -1.0)


def _hardest(scores: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Column of the most similar valid entry per row."""
    return np.where(valid, scores, -np.inf).argmax(axis=1)


def embedding_loss_conventional(kind: str, probe: Tensor, gallery: Tensor, cfg: LossConfig) -> Tensor:
    """Embedding objectives with in-batch negatives (probe anchors, gallery pairs)."""
    B = probe.shape[0]
    if kind == "npairs":
        return npairs_loss(probe, gallery, cfg.s)
    if B < 2:
        raise ContractError(f"{kind} needs at least two rows for in-batch negatives")
    valid = ~np.eye(B, dtype=bool)
    hard = _hardest(probe.data @ gallery.data.T, valid)
    neg = take(gallery, hard)
    if kind == "triplet":
        return triplet_loss(probe, gallery, neg, cfg.margin)
    if kind == "contrastive":
        anchors = concat([probe, probe], axis=0)
        pairs = concat([gallery, neg], axis=0)
        flags = np.r_[np.ones(B, bool), np.zeros(B, bool)]
        return contrastive_loss(anchors, pairs, flags, cfg.margin)
    raise LossConfigError(f"{kind!r} is not an embedding loss")


def embedding_loss_sst(kind: str, probe: Tensor, gallery_feats, ids, queue, cfg: LossConfig) -> Tensor:
    """Embedding objectives with gallery positives and queue negatives."""
    gallery = Tensor(np.asarray(getattr(gallery_feats, "data", gallery_feats)))
    ids = np.asarray(ids, dtype=np.int64)
    qf, qid = _queue_arrays(queue)
    same = qid[None, :] == ids[:, None]
    if kind == "npairs":
        return npairs_loss(probe, gallery, cfg.s, Tensor(qf), same)
    valid = ~same
    if not valid.any(axis=1).all():
        raise ContractError("a probe has no valid queue negative")
    neg = Tensor(qf[_hardest(probe.data @ qf.T, valid)])
    if kind == "triplet":
        return triplet_loss(probe, gallery, neg, cfg.margin)
    if kind == "contrastive":
        B = probe.shape[0]
        anchors = concat([probe, probe], axis=0)
        pairs = concat([gallery, neg], axis=0)
        flags = np.r_[np.ones(B, bool), np.zeros(B, bool)]
        return contrastive_loss(anchors, pairs, flags, cfg.margin)
    raise LossConfigError(f"{kind!r} is not an embedding loss")
