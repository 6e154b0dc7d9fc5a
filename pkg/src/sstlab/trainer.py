"""Training loop for the six ablation variants plus loss-curve and collapse diagnostics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import ShallowDataset, sample_batch
from .encoder import Encoder, EncoderConfig, forward, init_encoder, param_distance
from .losses import (
    LossConfig,
    PrototypeMatrix,
    classification_loss,
    embedding_loss_conventional,
    embedding_loss_sst,
    sst_loss,
)
from .queue import SENTINEL_ID, GalleryQueue
from .siamese import (
    FullySiamese,
    MovingAverage,
    NetworkConstraint,
    SiamesePair,
    apply_update,
    constraint_penalty,
    encode_pair,
    make_pair,
)
from .tensor import SGD, ContractError, Tensor, add, backward, concat

VARIANTS = ("Org", "A", "B", "C", "D", "SST")
QUEUE_VARIANTS = ("C", "D", "SST")
PAIR_VARIANTS = ("B", "C", "D", "SST")


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"loss became {value} at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "SST"
    loss: LossConfig = field(default_factory=LossConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    batch_size: int = 128
    lr: float = 0.05
    milestones: tuple[int, ...] = (1800, 2700)
    lr_factor: float = 0.1
    total_steps: int = 3000
    momentum: float = 0.9
    weight_decay: float = 5e-4
    queue_size: int = 512
    m: float = 0.999
    lam: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "A" and not self.loss.is_classification:
            raise ValueError("variant A (prototype constraint) needs a classification loss")
        if self.batch_size < 1 or self.total_steps < 0 or self.queue_size < 1:
            raise ValueError("batch_size, queue_size must be positive and total_steps >= 0")
        object.__setattr__(self, "milestones", tuple(int(x) for x in self.milestones))

    def lr_at(self, step: int) -> float:
        passed = sum(1 for ms in self.milestones if step >= ms)
        return self.lr * self.lr_factor ** passed

    def update_mode(self):
        if self.variant in ("B", "D"):
            return NetworkConstraint(self.lam)
        if self.variant == "C":
            return FullySiamese()
        if self.variant == "SST":
            return MovingAverage(self.m)
        return None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        d["encoder"]["hidden_dims"] = list(self.encoder.hidden_dims)
        return d


@dataclass
class MetricsLog:
    steps: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    histograms: dict[str, dict] = field(default_factory=dict)

    def record(self, rec: dict) -> None:
        if self.steps and rec["step"] <= self.steps[-1]["step"]:
            raise ContractError("step index must increase")
        self.steps.append(rec)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r["loss"] for r in self.steps])

    def write_jsonl(self, path, header: dict | None = None) -> None:
        with open(path, "w") as fh:
            if header is not None:
                fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
            for rec in self.steps:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass
class TrainResult:
    config: TrainConfig
    probe_net: Encoder
    log: MetricsLog
    pair: SiamesePair | None = None
    prototypes: PrototypeMatrix | None = None
    queue: GalleryQueue | None = None


def _seeds(seed: int) -> dict[str, int]:
    ss = np.random.SeedSequence(seed)
    enc, proto, queue, batches = (int(c.generate_state(1)[0]) for c in ss.spawn(4))
    return {"encoder": enc, "prototypes": proto, "queue": queue, "batches": batches}


def train(cfg: TrainConfig, ds: ShallowDataset) -> TrainResult:
    """Run ``cfg.total_steps`` SGD steps under the variant's wiring.

    Org/A: one shared encoder and a learned prototype matrix (A adds the
    prototype-norm penalty).  B: prototype matrix with a network-constrained
    pair.  C/D/SST: gallery-feature positives with queue negatives, pair kept
    identical (C), constrained (D) or moving-averaged (SST).
    """
    if ds.n_train_ids == 0:
        raise ContractError("dataset has no training identities")
    if cfg.encoder.input_dim != ds.input_dim:
        raise ContractError(f"encoder input_dim {cfg.encoder.input_dim} != data dim {ds.input_dim}")
    seeds = _seeds(cfg.seed)
    enc = init_encoder(replace(cfg.encoder, seed=seeds["encoder"]))
    rng = np.random.default_rng(seeds["batches"])
    v = cfg.variant
    use_queue = v in QUEUE_VARIANTS
    use_protos = not use_queue and cfg.loss.is_classification

    pair = make_pair(enc, cfg.update_mode(), cfg.momentum, cfg.weight_decay) if v in PAIR_VARIANTS else None
    protos = PrototypeMatrix(ds.n_train_ids, cfg.encoder.embed_dim, seeds["prototypes"]) if use_protos else None
    queue = GalleryQueue(cfg.queue_size, cfg.encoder.embed_dim, seeds["queue"]) if use_queue else None

    opt_params, opt_names = [], []
    if pair is None:
        opt_params += enc.params
        opt_names += enc.names
    if protos is not None:
        opt_params.append(protos.W)
        opt_names.append("prototypes")
    opt = SGD(opt_params, opt_names, cfg.momentum, cfg.weight_decay) if opt_params else None

    log = MetricsLog()
    for step in range(cfg.total_steps):
        lr = cfg.lr_at(step)
        g_batch, p_batch, ids = sample_batch(ds, cfg.batch_size, rng)
        if pair is None:
            fg = forward(enc, g_batch)
            fp = forward(enc, p_batch)
        else:
            fg, fp = encode_pair(pair, g_batch, p_batch)
        loss = _task_loss(cfg, ds, fg, fp, ids, protos, queue)
        if isinstance(pair.mode if pair else None, NetworkConstraint):
            loss = add(loss, constraint_penalty(pair))
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(step, value)
        backward(loss)
        if pair is not None:
            apply_update(pair, lr)
        if opt is not None:
            opt.step(lr)
            opt.zero_grad()
        if queue is not None:
            queue.enqueue(fg.data, ids)
        rec = {"step": step, "loss": value, "lr": lr}
        if pair is not None:
            rec["param_distance"] = param_distance(pair.probe_net, pair.gallery_net)
        if queue is not None:
            rec["queue_filled"] = queue.filled
            rec["queue_real"] = int(np.sum(queue.ids != SENTINEL_ID))
        log.record(rec)

    probe_net = pair.probe_net if pair is not None else enc
    result = TrainResult(cfg, probe_net, log, pair, protos, queue)
    source = protos if protos is not None else queue
    if source is not None and cfg.total_steps > 0:
        log.histograms["prototypes"] = prototype_histogram(source)
    return result


def _task_loss(cfg, ds, fg: Tensor, fp: Tensor, ids, protos, queue) -> Tensor:
    kind = cfg.loss.kind
    if queue is not None:
        if cfg.loss.is_classification:
            return sst_loss(fp, fg, ids, queue, cfg.loss)
        return embedding_loss_sst(kind, fp, fg, ids, queue, cfg.loss)
    if protos is not None:
        labels = ds.labels(ids)
        return classification_loss(
            concat([fg, fp], axis=0),
            np.r_[labels, labels],
            protos,
            cfg.loss,
            proto_constraint=(cfg.variant == "A" or kind == "proto_constraint_softmax"),
        )
    return embedding_loss_conventional(kind, fp, fg, cfg.loss)


# ---------------------------------------------------------------- diagnostics

def oscillation_metric(loss_history, window: int = 50) -> float:
    """Mean within-window standard deviation over all sliding windows."""
    if window < 2:
        raise ContractError(f"window must be >= 2, got {window}")
    x = np.asarray(loss_history, dtype=np.float64)
    if len(x) < window:
        raise ContractError(f"history of {len(x)} is shorter than window {window}")
    windows = np.lib.stride_tricks.sliding_window_view(x, window)
    return float(windows.std(axis=1).mean())


ZERO_CUTOFF = 1e-2


def _entries(source) -> np.ndarray:
    if isinstance(source, PrototypeMatrix):
        return source.unit_rows()
    if isinstance(source, GalleryQueue):
        return source.features
    return np.asarray(getattr(source, "data", source), dtype=np.float64)


def prototype_histogram(source, bins: int = 41, range_: tuple[float, float] = (-0.5, 0.5)) -> dict:
    """Density histogram of prototype entry values plus the near-zero share.

    Prototype matrices are read through their normalized rows, the vectors the
    loss actually scores against; queues contribute their stored features.
    """
    if bins < 3:
        raise ContractError(f"need at least 3 bins, got {bins}")
    values = _entries(source).ravel()
    if values.size == 0:
        raise ContractError("empty prototype source")
    density, edges = np.histogram(values, bins=bins, range=range_, density=True)
    return {
        "edges": edges.tolist(),
        "density": density.tolist(),
        "zero_fraction": float(np.mean(np.abs(values) < ZERO_CUTOFF)),
        "rms": float(np.sqrt(np.mean(values ** 2))),
    }


def write_histogram_csv(hist: dict, path, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment is not None:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "density"])
        edges = hist["edges"]
        for lo, hi, d in zip(edges[:-1], edges[1:], hist["density"]):
            w.writerow([repr(lo), repr(hi), repr(d)])
