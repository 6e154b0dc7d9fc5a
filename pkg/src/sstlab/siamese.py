"""Probe/gallery encoder pair and its three update rules."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .encoder import Encoder, clone, forward, load_encoder, save_encoder
from .tensor import SGD, ContractError, Tensor, add, scale, sqrt, square, sub, tsum


@dataclass(frozen=True)
class FullySiamese:
    """Gallery net is a copy of the probe net after every step."""


@dataclass(frozen=True)
class NetworkConstraint:
    lam: float = 1e-3

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class MovingAverage:
    m: float = 0.999

    def __post_init__(self):
        if not 0.0 <= self.m <= 1.0:
            raise ValueError(f"moving-average weight must lie in [0, 1], got {self.m}")


UpdateMode = Union[FullySiamese, NetworkConstraint, MovingAverage]


@dataclass
class SiamesePair:
    probe_net: Encoder
    gallery_net: Encoder
    mode: UpdateMode
    probe_opt: SGD | None = field(default=None, repr=False)
    gallery_opt: SGD | None = field(default=None, repr=False)

    def configure_sgd(self, momentum: float = 0.9, weight_decay: float = 0.0) -> None:
        self.probe_opt = SGD(self.probe_net.params, self.probe_net.names, momentum, weight_decay)
        self.gallery_opt = SGD(self.gallery_net.params, self.gallery_net.names, momentum, weight_decay)
        # gallery params only need grads under the constraint variant
        for p in self.gallery_net.params:
            p.requires_grad = isinstance(self.mode, NetworkConstraint)

    def zero_grad(self) -> None:
        self.probe_net.zero_grad()
        self.gallery_net.zero_grad()


def make_pair(enc: Encoder, mode: UpdateMode, momentum: float = 0.9, weight_decay: float = 0.0) -> SiamesePair:
    pair = SiamesePair(probe_net=enc, gallery_net=clone(enc), mode=mode)
    pair.configure_sgd(momentum, weight_decay)
    return pair


def encode_pair(pair: SiamesePair, gallery_batch, probe_batch) -> tuple[Tensor, Tensor]:
    """Gallery features come back detached; probe features carry the tape."""
    g = np.asarray(getattr(gallery_batch, "data", gallery_batch))
    p = np.asarray(getattr(probe_batch, "data", probe_batch))
    if g.shape[0] != p.shape[0]:
        raise ContractError(f"gallery batch has {g.shape[0]} rows, probe batch {p.shape[0]}")
    return forward(pair.gallery_net, g, grad=False), forward(pair.probe_net, p, grad=True)


def constraint_penalty(pair: SiamesePair) -> Tensor:
    """lambda * ||phi_g - phi_p||, differentiable in both nets."""
    if not isinstance(pair.mode, NetworkConstraint):
        raise ContractError(f"constraint penalty requires NetworkConstraint mode, got {pair.mode!r}")
    sq = None
    for pg, pp in zip(pair.gallery_net.params, pair.probe_net.params):
        term = tsum(square(sub(pg, pp)))
        sq = term if sq is None else add(sq, term)
    return scale(sqrt(sq), pair.mode.lam)


def moving_average(gallery: Encoder, probe: Encoder, m: float) -> None:
    for pg, pp in zip(gallery.params, probe.params):
        pg.data = m * pg.data + (1.0 - m) * pp.data


def apply_update(pair: SiamesePair, lr: float) -> None:
    """SGD on the probe net, then the mode's gallery rule."""
    if pair.probe_opt is None:
        pair.configure_sgd()
    if all(p.grad is None for p in pair.probe_net.params):
        raise ContractError("probe net has no gradients; call backward first")
    pair.probe_opt.step(lr)
    mode = pair.mode
    if isinstance(mode, FullySiamese):
        for pg, pp in zip(pair.gallery_net.params, pair.probe_net.params):
            pg.data = pp.data.copy()
    elif isinstance(mode, MovingAverage):
        moving_average(pair.gallery_net, pair.probe_net, mode.m)
    else:
        pair.gallery_opt.step(lr)
    pair.zero_grad()


# -------------------------------------------------------------- checkpoints

def mode_record(mode: UpdateMode) -> dict:
    if isinstance(mode, FullySiamese):
        return {"mode": "fully_siamese"}
    if isinstance(mode, NetworkConstraint):
        return {"mode": "network_constraint", "lambda": mode.lam}
    return {"mode": "moving_average", "m": mode.m}


def mode_from_record(rec: dict) -> UpdateMode:
    kind = rec["mode"]
    if kind == "fully_siamese":
        return FullySiamese()
    if kind == "network_constraint":
        return NetworkConstraint(float(rec["lambda"]))
    if kind == "moving_average":
        return MovingAverage(float(rec["m"]))
    raise ValueError(f"unknown update mode {kind!r}")


def save_pair(pair: SiamesePair, directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_encoder(pair.probe_net, directory / "probe.enc")
    save_encoder(pair.gallery_net, directory / "gallery.enc")
    manifest = {"probe": "probe.enc", "gallery": "gallery.enc", **mode_record(pair.mode)}
    if extra:
        manifest.update(extra)
    path = directory / "pair.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_pair(manifest_path) -> SiamesePair:
    manifest_path = Path(manifest_path)
    rec = json.loads(manifest_path.read_text())
    probe = load_encoder(manifest_path.parent / rec["probe"])
    gallery = load_encoder(manifest_path.parent / rec["gallery"])
    pair = SiamesePair(probe, gallery, mode_from_record(rec))
    pair.configure_sgd()
    return pair
