"""Synthetic identity datasets with gallery/probe roles and an open-set split."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .tensor import ContractError

GALLERY, PROBE = 0, 1
TRAIN, TEST = 0, 1
ROLE_NAMES = {GALLERY: "gallery", PROBE: "probe"}
SPLIT_NAMES = {TRAIN: "train", TEST: "test"}
FORMAT_VERSION = "v1"


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GenSpec:
    n_ids: int = 1200
    depth: int = 2
    input_dim: int = 32
    class_separation: float = 1.0
    sigma_intra: float = 0.25
    shift_strength: float = 0.15
    test_fraction: float = 1 / 6
    seed: int = 0

    def __post_init__(self):
        if self.n_ids < 2:
            raise ValueError("need at least two identities")
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.class_separation <= 0 or self.sigma_intra < 0 or self.shift_strength < 0:
            raise ValueError("class_separation > 0, sigma_intra >= 0, shift_strength >= 0 required")


@dataclass
class ShallowDataset:
    ids: np.ndarray
    roles: np.ndarray
    splits: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self._index()

    def _index(self) -> None:
        train = self.splits == TRAIN
        self.train_ids = np.unique(self.ids[train])
        self.test_ids = np.unique(self.ids[~train])
        self.class_of = {int(i): c for c, i in enumerate(self.train_ids)}
        self._records = {int(i): np.flatnonzero(self.ids == i) for i in np.unique(self.ids)}
        self.depth = max(len(v) for v in self._records.values())
        # first gallery / first probe record per train id, in class order
        self.gallery_idx = np.array([self._first(i, GALLERY) for i in self.train_ids])
        self.probe_idx = np.array([self._first(i, PROBE) for i in self.train_ids])

    def _first(self, ident, role) -> int:
        recs = self._records[int(ident)]
        hits = recs[self.roles[recs] == role]
        if len(hits) == 0:
            raise ContractError(f"identity {ident} has no {ROLE_NAMES[role]} record")
        return int(hits[0])

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def input_dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_train_ids(self) -> int:
        return len(self.train_ids)

    def records_of(self, ident: int) -> np.ndarray:
        return self._records[int(ident)]

    def labels(self, ids) -> np.ndarray:
        """Contiguous class index in [0, n_train_ids) for each train id."""
        return np.array([self.class_of[int(i)] for i in ids], dtype=np.int64)

    def split_view(self, split: int) -> dict[str, np.ndarray]:
        sel = self.splits == split
        return {"ids": self.ids[sel], "roles": self.roles[sel], "vectors": self.vectors[sel]}


def generate(spec: GenSpec) -> ShallowDataset:
    """Gaussian identity clusters; probe-role samples pass through a global shift map."""
    rng = np.random.default_rng(spec.seed)
    D = spec.input_dim
    A = rng.standard_normal((D, D)) / np.sqrt(D)
    b = rng.standard_normal(D) * spec.class_separation
    centers = rng.standard_normal((spec.n_ids, D)) * spec.class_separation
    noise = rng.standard_normal((spec.n_ids, spec.depth, D)) * spec.sigma_intra
    samples = centers[:, None, :] + noise
    roles = np.full((spec.n_ids, spec.depth), PROBE)
    roles[:, 0] = GALLERY
    shifted = samples @ A.T + b
    k = spec.shift_strength
    samples = np.where((roles == PROBE)[..., None], (1 - k) * samples + k * shifted, samples)
    n_test = max(1, int(round(spec.n_ids * spec.test_fraction)))
    test_ids = rng.choice(spec.n_ids, size=n_test, replace=False)
    split_of = np.full(spec.n_ids, TRAIN)
    split_of[test_ids] = TEST
    ids = np.repeat(np.arange(spec.n_ids), spec.depth)
    return ShallowDataset(
        ids=ids.astype(np.int64),
        roles=roles.ravel().astype(np.int64),
        splits=split_of[ids].astype(np.int64),
        vectors=samples.reshape(-1, D),
    )


def sample_batch(ds: ShallowDataset, batch_size: int, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``batch_size`` distinct train ids and one (gallery, probe) pair each.

    Depth-2 data always routes the gallery-role record to the gallery slot.
    Deeper data picks two distinct records and the role is a fair coin.
    ``rng`` is a numpy Generator or an integer seed.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n = ds.n_train_ids
    if batch_size > n:
        raise ContractError(f"batch of {batch_size} exceeds {n} training identities")
    cls = rng.choice(n, size=batch_size, replace=False)
    ids = ds.train_ids[cls]
    if ds.depth == 2:
        g_idx, p_idx = ds.gallery_idx[cls], ds.probe_idx[cls]
    else:
        g_idx = np.empty(batch_size, dtype=np.int64)
        p_idx = np.empty(batch_size, dtype=np.int64)
        for k, ident in enumerate(ids):
            a, b = rng.choice(ds.records_of(ident), size=2, replace=False)
            g_idx[k], p_idx[k] = a, b
    return ds.vectors[g_idx], ds.vectors[p_idx], ids


# ------------------------------------------------------------------------- io

def dumps(ds: ShallowDataset, comments=()) -> str:
    """Header line, optional ``#`` comment lines, then one CSV row per record."""
    lines = [f"sstdata {FORMAT_VERSION} {len(ds)} {ds.input_dim}"]
    lines += [f"# {c}" for c in comments]
    for i, r, s, v in zip(ds.ids, ds.roles, ds.splits, ds.vectors):
        vals = ",".join(repr(float(x)) for x in v)
        lines.append(f"{int(i)},{ROLE_NAMES[int(r)]},{SPLIT_NAMES[int(s)]},{vals}")
    return "\n".join(lines) + "\n"


def save(ds: ShallowDataset, path, comments=()) -> None:
    Path(path).write_text(dumps(ds, comments))


def loads(text: str) -> ShallowDataset:
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("line 1: empty file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "sstdata":
        raise DatasetFormatError(f"line 1: bad header {lines[0]!r}")
    if head[1] != FORMAT_VERSION:
        raise DatasetFormatError(f"line 1: unsupported version {head[1]!r}")
    try:
        n, dim = int(head[2]), int(head[3])
    except ValueError as exc:
        raise DatasetFormatError(f"line 1: bad counts in header {lines[0]!r}") from exc
    body = [(k, line) for k, line in enumerate(lines[1:], start=2) if not line.startswith("#")]
    if len(body) != n:
        raise DatasetFormatError(f"line {len(lines) + 1}: expected {n} records, found {len(body)}")
    role_code = {v: k for k, v in ROLE_NAMES.items()}
    split_code = {v: k for k, v in SPLIT_NAMES.items()}
    ids = np.empty(n, dtype=np.int64)
    roles = np.empty(n, dtype=np.int64)
    splits = np.empty(n, dtype=np.int64)
    vecs = np.empty((n, dim))
    for k, (lineno, line) in enumerate(body):
        fields = line.split(",")
        if len(fields) != dim + 3:
            raise DatasetFormatError(f"line {lineno}: expected {dim + 3} fields, got {len(fields)}")
        try:
            ids[k] = int(fields[0])
            roles[k] = role_code[fields[1]]
            splits[k] = split_code[fields[2]]
            vecs[k] = [float(x) for x in fields[3:]]
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from exc
    return ShallowDataset(ids, roles, splits, vecs)


def load(path) -> ShallowDataset:
    return loads(Path(path).read_text())


def spec_dict(spec: GenSpec) -> dict:
    return asdict(spec)
