"""Open-set verification and identification metrics on held-out identities."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import GALLERY, PROBE, TEST, TRAIN, ShallowDataset
from .encoder import Encoder, forward
from .tensor import ContractError

DESK_FAR_LEVELS = (1e-1, 1e-2, 1e-3)


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray
    genuine_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    impostor_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64)
        self.impostor = np.asarray(self.impostor, dtype=np.float64)

    def labelled(self) -> tuple[np.ndarray, np.ndarray]:
        scores = np.concatenate([self.genuine, self.impostor])
        same = np.r_[np.ones(len(self.genuine), bool), np.zeros(len(self.impostor), bool)]
        return scores, same


def probe_encoder(model) -> Encoder:
    """The network used for evaluation: always the probe-set network."""
    if isinstance(model, Encoder):
        return model
    for attr in ("probe_net",):
        if hasattr(model, attr):
            return getattr(model, attr)
    raise TypeError(f"cannot find a probe network on {type(model).__name__}")


def extract_features(model, vectors) -> np.ndarray:
    return forward(probe_encoder(model), np.asarray(vectors), grad=False).data


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def build_pairs(features, ids, roles, max_impostors: int = 50_000, seed: int = 0) -> ScoreSet:
    """Genuine: every same-id (gallery, probe) pair.  Impostor: a seeded sample
    of cross-id (gallery, probe) pairs, all of them if fewer than the cap."""
    feats = _unit(np.asarray(features, dtype=np.float64))
    ids = np.asarray(ids)
    roles = np.asarray(roles)
    if len(np.unique(ids)) < 2:
        raise ContractError("need at least two identities to build impostor pairs")
    g = np.flatnonzero(roles == GALLERY)
    p = np.flatnonzero(roles == PROBE)
    same = ids[g][:, None] == ids[p][None, :]
    gi, pi = np.nonzero(same)
    genuine_pairs = np.stack([g[gi], p[pi]], axis=1)
    di, dj = np.nonzero(~same)
    n_cross = len(di)
    if n_cross > max_impostors:
        pick = np.sort(np.random.default_rng(seed).choice(n_cross, size=max_impostors, replace=False))
        di, dj = di[pick], dj[pick]
    impostor_pairs = np.stack([g[di], p[dj]], axis=1)

    def score(pairs):
        return np.einsum("ij,ij->i", feats[pairs[:, 0]], feats[pairs[:, 1]])

    return ScoreSet(score(genuine_pairs), score(impostor_pairs), genuine_pairs, impostor_pairs)


@dataclass(frozen=True)
class FarPoint:
    far: float
    tpr: float
    threshold: float
    low_confidence: bool


def tpr_at_far(scores: ScoreSet, far_levels=DESK_FAR_LEVELS) -> list[FarPoint]:
    """Accept when score >= threshold.

    The threshold is the smallest value that lets at most floor(far * n)
    impostors through: just above the (k+1)-th highest impostor score.
    """
    gen, imp = scores.genuine, scores.impostor
    if len(gen) == 0 or len(imp) == 0:
        raise ContractError("tpr_at_far needs non-empty genuine and impostor scores")
    desc = np.sort(imp)[::-1]
    n = len(desc)
    out = []
    for far in far_levels:
        k = int(math.floor(far * n + 1e-9))
        if k >= n:
            thr = float(desc[-1])
        else:
            thr = float(np.nextafter(desc[k], np.inf))
        tpr = float(np.mean(gen >= thr))
        out.append(FarPoint(float(far), tpr, thr, n < 1.0 / far))
    return out


def _best_cut(scores: np.ndarray, same: np.ndarray) -> float:
    """Smallest cut c maximizing accuracy of the rule score > c."""
    order = np.argsort(scores, kind="stable")
    s, y = scores[order], same[order]
    cuts = np.r_[-np.inf, np.unique(s)]
    n_rejected = np.searchsorted(s, cuts, side="right")
    gen_below = np.r_[0, np.cumsum(y)]
    imp_below = np.r_[0, np.cumsum(~y)]
    # correct = genuine above the cut + impostors at or below it
    correct = (gen_below[-1] - gen_below[n_rejected]) + imp_below[n_rejected]
    return float(cuts[int(np.argmax(correct))])


def tenfold_accuracy(scores, same, folds=None, n_folds: int = 10) -> float:
    """Mean held-out accuracy with each fold's threshold tuned on the others."""
    scores = np.asarray(scores, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    if same.sum() < n_folds or (~same).sum() < n_folds:
        raise ContractError(f"need >= {n_folds} genuine and impostor pairs")
    if folds is None:
        folds = np.arange(len(scores)) % n_folds
    folds = np.asarray(folds)
    accs = []
    for f in range(n_folds):
        test = folds == f
        cut = _best_cut(scores[~test], same[~test])
        pred = scores[test] > cut
        accs.append(float(np.mean(pred == same[test])))
    return float(np.mean(accs))


def balanced_folds(same, n_folds: int = 10, seed: int = 0) -> np.ndarray:
    """Fold ids that spread genuine and impostor pairs evenly."""
    same = np.asarray(same, dtype=bool)
    rng = np.random.default_rng(seed)
    folds = np.empty(len(same), dtype=np.int64)
    for flag in (True, False):
        idx = np.flatnonzero(same == flag)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = np.arange(len(idx)) % n_folds
    return folds


def rank1_identification(gallery_feats, gallery_ids, probe_feats, probe_ids) -> float:
    """Share of probes whose most similar gallery entry has their id.

    Ties go to the lowest gallery index.
    """
    gallery_ids = np.asarray(gallery_ids)
    probe_ids = np.asarray(probe_ids)
    missing = set(probe_ids.tolist()) - set(gallery_ids.tolist())
    if missing:
        raise ContractError(f"probe ids absent from gallery: {sorted(missing)[:5]}")
    sims = _unit(np.asarray(probe_feats, dtype=np.float64)) @ _unit(np.asarray(gallery_feats, dtype=np.float64)).T
    best = np.argmax(sims, axis=1)
    return float(np.mean(gallery_ids[best] == probe_ids))


def split_rank1(model, ds: ShallowDataset, split: int) -> float:
    sel = ds.splits == split
    feats = extract_features(model, ds.vectors[sel])
    ids, roles = ds.ids[sel], ds.roles[sel]
    g, p = roles == GALLERY, roles == PROBE
    return rank1_identification(feats[g], ids[g], feats[p], ids[p])


def evaluate(model, ds: ShallowDataset, far_levels=DESK_FAR_LEVELS, max_impostors: int = 50_000,
             seed: int = 0) -> dict:
    """All open-set metrics on the test split, using the probe-set network."""
    sel = ds.splits == TEST
    feats = extract_features(model, ds.vectors[sel])
    ids, roles = ds.ids[sel], ds.roles[sel]
    scores = build_pairs(feats, ids, roles, max_impostors, seed)
    # verification accuracy on a balanced subset, one impostor per genuine pair
    n_gen = len(scores.genuine)
    pick = np.random.default_rng(seed + 1).choice(len(scores.impostor), size=min(n_gen, len(scores.impostor)), replace=False)
    s = np.r_[scores.genuine, scores.impostor[np.sort(pick)]]
    same = np.r_[np.ones(n_gen, bool), np.zeros(len(pick), bool)]
    folds = balanced_folds(same, seed=seed)
    g, p = roles == GALLERY, roles == PROBE
    report = {
        "n_test_ids": int(len(np.unique(ids))),
        "n_genuine": int(len(scores.genuine)),
        "n_impostor": int(len(scores.impostor)),
        "tenfold_accuracy": tenfold_accuracy(s, same, folds),
        "rank1": rank1_identification(feats[g], ids[g], feats[p], ids[p]),
        "eval_seed": seed,
    }
    for pt in tpr_at_far(scores, far_levels):
        report[f"tpr@far={pt.far:g}"] = pt.tpr
        report[f"threshold@far={pt.far:g}"] = pt.threshold
        report[f"low_confidence@far={pt.far:g}"] = pt.low_confidence
    return report


def train_rank1(result, ds: ShallowDataset) -> float:
    """Rank-1 on the training identities.

    Variants with a learned prototype matrix are scored closed-set: each train
    probe against every class prototype.  The others have no prototypes, so
    their train probes are matched against the train gallery features.
    """
    protos = getattr(result, "prototypes", None)
    if protos is None:
        return split_rank1(result, ds, TRAIN)
    feats = _unit(extract_features(result, ds.vectors[ds.probe_idx]))
    pred = np.argmax(feats @ protos.unit_rows().T, axis=1)
    return float(np.mean(pred == np.arange(ds.n_train_ids)))
