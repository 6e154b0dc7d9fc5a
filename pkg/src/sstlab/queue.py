"""Fixed-capacity FIFO of gallery features used as negative prototypes."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .tensor import ContractError

SENTINEL_ID = -1


class GalleryQueue:
    """Ring buffer of (unit feature, identity) entries.

    Starts full of random unit vectors tagged ``SENTINEL_ID``; real identities
    are non-negative so the sentinel never matches a probe.
    """

    def __init__(self, capacity: int, dim: int, seed: int = 0):
        if capacity < 1:
            raise ValueError(f"queue capacity must be >= 1, got {capacity}")
        if dim < 2:
            raise ValueError(f"feature dim must be >= 2, got {dim}")
        rng = np.random.default_rng(seed)
        feats = rng.standard_normal((capacity, dim))
        self.capacity = capacity
        self.dim = dim
        self.features = feats / np.linalg.norm(feats, axis=1, keepdims=True)
        self.ids = np.full(capacity, SENTINEL_ID, dtype=np.int64)
        self.cursor = 0
        self.filled = capacity
        self.total_enqueued = 0

    def __len__(self) -> int:
        return self.filled

    def enqueue(self, feats, ids) -> None:
        feats = np.asarray(getattr(feats, "data", feats), dtype=np.float64)
        ids = np.asarray(ids, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[1] != self.dim or len(ids) != feats.shape[0]:
            raise ContractError(f"expected ({len(ids)}, {self.dim}) features, got {feats.shape}")
        norms = np.linalg.norm(feats, axis=1)
        bad = np.abs(norms - 1.0) > 1e-6
        if bad.any():
            raise ContractError(f"non-unit feature rows at {np.flatnonzero(bad).tolist()}")
        for row, ident in zip(feats, ids):
            self.features[self.cursor] = row
            self.ids[self.cursor] = ident
            self.cursor = (self.cursor + 1) % self.capacity
        self.filled = min(self.capacity, self.filled + len(ids))
        self.total_enqueued += len(ids)

    def ordered(self) -> tuple[np.ndarray, np.ndarray]:
        """Entries oldest first."""
        order = np.roll(np.arange(self.capacity), -self.cursor)
        return self.features[order].copy(), self.ids[order].copy()

    def negative_mask(self, probe_ids) -> np.ndarray:
        """B x K boolean, True where entry j is a valid negative for probe i."""
        return self.ids[None, :] != np.asarray(probe_ids, dtype=np.int64)[:, None]

    def negatives_for(self, probe_id: int) -> np.ndarray:
        return self.features[self.ids != probe_id].copy()

    def snapshot(self) -> np.ndarray:
        return self.features.copy()

    def dump_csv(self, path) -> None:
        """Debug dump: slot, id, feature values."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "id", *[f"f{i}" for i in range(self.dim)]])
            for slot in range(self.capacity):
                w.writerow([slot, int(self.ids[slot]), *[repr(float(v)) for v in self.features[slot]]])


def init_queue(capacity: int, dim: int, seed: int = 0) -> GalleryQueue:
    return GalleryQueue(capacity, dim, seed)


def enqueue_batch(q: GalleryQueue, feats, ids) -> None:
    q.enqueue(feats, ids)


def negatives_for(q: GalleryQueue, probe_id: int) -> np.ndarray:
    return q.negatives_for(probe_id)


def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.reader(Path(path).read_text().splitlines()))[1:]
    ids = np.array([int(r[1]) for r in rows], dtype=np.int64)
    feats = np.array([[float(v) for v in r[2:]] for r in rows])
    return feats, ids
