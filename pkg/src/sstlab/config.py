"""Flat ``key = value`` experiment configs covering data, training, evaluation and grids."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .data import GenSpec
from .encoder import EncoderConfig
from .losses import LossConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Bad, unknown or missing configuration key."""


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _words(text: str) -> tuple[str, ...]:
    return tuple(x for x in text.replace(",", " ").split())


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none", "default") else float(text)


def _show(value) -> str:
    if value is None:
        return "default"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: callable
    default: object
    help: str


_GEN, _TRAIN = GenSpec(), TrainConfig()
_LOSS, _ENC = LossConfig(), EncoderConfig()

KEYS: dict[str, Key] = {
    "output_dir": Key(str, None, "directory receiving every artifact (required)"),
    "dataset": Key(str, "", "existing dataset file; empty means generate from the data keys"),
    # data
    "n_ids": Key(int, _GEN.n_ids, "identities in the synthetic set"),
    "depth": Key(int, _GEN.depth, "records per identity (2 = shallow)"),
    "input_dim": Key(int, _GEN.input_dim, "raw vector dimension"),
    "class_separation": Key(float, _GEN.class_separation, "scale of identity centers"),
    "sigma_intra": Key(float, _GEN.sigma_intra, "within-identity noise std"),
    "shift_strength": Key(float, _GEN.shift_strength, "blend weight of the probe-domain map"),
    "test_fraction": Key(float, _GEN.test_fraction, "share of identities held out"),
    "data_seed": Key(int, _GEN.seed, "seed for dataset generation"),
    # model and loss
    "variant": Key(str, _TRAIN.variant, "Org, A, B, C, D or SST"),
    "loss": Key(str, _LOSS.kind, "loss kind"),
    "s": Key(float, _LOSS.s, "logit scale"),
    "margin": Key(_optional_float, None, "loss margin; default picks the per-kind value"),
    "alpha": Key(float, _LOSS.alpha, "prototype-norm target"),
    "beta": Key(float, _LOSS.beta, "prototype-norm penalty weight"),
    "hidden_dims": Key(_ints, _ENC.hidden_dims, "hidden layer widths, comma separated"),
    "embed_dim": Key(int, _ENC.embed_dim, "embedding dimension"),
    # optimisation
    "batch_size": Key(int, _TRAIN.batch_size, "identities per batch"),
    "lr": Key(float, _TRAIN.lr, "initial learning rate"),
    "milestones": Key(_ints, _TRAIN.milestones, "steps at which lr is multiplied by lr_factor"),
    "lr_factor": Key(float, _TRAIN.lr_factor, "lr decay factor"),
    "total_steps": Key(int, _TRAIN.total_steps, "training steps"),
    "momentum": Key(float, _TRAIN.momentum, "SGD momentum"),
    "weight_decay": Key(float, _TRAIN.weight_decay, "SGD weight decay"),
    "queue_size": Key(int, _TRAIN.queue_size, "gallery queue capacity"),
    "m": Key(float, _TRAIN.m, "moving-average weight of the gallery net"),
    "lam": Key(float, _TRAIN.lam, "network-constraint weight"),
    "seed": Key(int, _TRAIN.seed, "training seed"),
    # evaluation
    "far_levels": Key(_floats, (1e-1, 1e-2, 1e-3), "false-accept rates to report"),
    "max_impostors": Key(int, 50_000, "cap on sampled impostor pairs"),
    "eval_seed": Key(int, 0, "seed for impostor sampling"),
    # ablation grid
    "variants": Key(_words, ("Org", "A", "B", "C", "D", "SST"), "variants crossed by ablate"),
    "losses": Key(_words, ("softmax", "am_softmax"), "loss kinds crossed by ablate"),
    "seeds": Key(_ints, (0,), "training seeds crossed by ablate"),
}
REQUIRED = ("output_dir",)


def defaults() -> dict:
    return {k: key.default for k, key in KEYS.items()}


def render(values: dict) -> str:
    """Config text that parses back to ``values``."""
    lines = [f"# sstlab {__version__}"]
    for k in KEYS:
        v = values.get(k)
        lines.append(f"{k} = {'' if v is None and k in REQUIRED else _show(v)}")
    return "\n".join(lines) + "\n"


def _assign(values: dict, key: str, raw: str, where: str) -> None:
    if key not in KEYS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        values[key] = KEYS[key].parse(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {raw.strip()!r}") from exc


def parse(text: str, overrides=(), source: str = "<config>") -> dict:
    values = defaults()
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        _assign(values, key.strip(), raw, f"{source}:{n}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        _assign(values, key.strip(), raw, f"--set {key.strip()}")
    for key in REQUIRED:
        if not values.get(key):
            raise ConfigError(f"missing required key {key!r}")
    return values


def load(path, overrides=()) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found")
    return parse(path.read_text(encoding="utf-8"), overrides, source=str(path))


def echo(values: dict) -> dict:
    """JSON-friendly copy of the resolved config."""
    return {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}


def gen_spec(values: dict) -> GenSpec:
    return _build(GenSpec, n_ids=values["n_ids"], depth=values["depth"], input_dim=values["input_dim"],
                  class_separation=values["class_separation"], sigma_intra=values["sigma_intra"],
                  shift_strength=values["shift_strength"], test_fraction=values["test_fraction"],
                  seed=values["data_seed"])


def train_config(values: dict, input_dim: int | None = None, **override) -> TrainConfig:
    v = {**values, **override}
    loss = _build(LossConfig, kind=v["loss"], s=v["s"], margin=v["margin"], alpha=v["alpha"], beta=v["beta"])
    enc = _build(EncoderConfig, input_dim=input_dim or v["input_dim"], hidden_dims=v["hidden_dims"],
                 embed_dim=v["embed_dim"], seed=0)
    return _build(TrainConfig, variant=v["variant"], loss=loss, encoder=enc, batch_size=v["batch_size"],
                  lr=v["lr"], milestones=v["milestones"], lr_factor=v["lr_factor"],
                  total_steps=v["total_steps"], momentum=v["momentum"], weight_decay=v["weight_decay"],
                  queue_size=v["queue_size"], m=v["m"], lam=v["lam"], seed=v["seed"])


def _build(cls, **kwargs):
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc
