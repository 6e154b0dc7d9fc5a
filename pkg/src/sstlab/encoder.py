"""Feed-forward relu encoder producing unit-norm embeddings."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import ContractError, DimensionError, Tensor, bias_add, l2_normalize, matmul, relu

MAGIC = b"SSTENC1\n"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 32
    hidden_dims: tuple[int, ...] = (128,)
    embed_dim: int = 64
    seed: int = 0
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("layer widths must be positive")
        if self.embed_dim < 2:
            raise ConfigError(f"embed_dim must be >= 2, got {self.embed_dim}")
        if self.activation != "relu":
            raise ConfigError("only relu activation is supported")

    @property
    def widths(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.embed_dim]


@dataclass
class Encoder:
    config: EncoderConfig
    names: list[str] = field(default_factory=list)
    params: list[Tensor] = field(default_factory=list)

    def named_params(self):
        return list(zip(self.names, self.params))

    def forward(self, batch, grad: bool = True) -> Tensor:
        return forward(self, batch, grad)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.params])

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params)


def init_encoder(config: EncoderConfig) -> Encoder:
    """He-uniform weights, zero biases, deterministic in ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    enc = Encoder(config)
    widths = config.widths
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        enc.names += [f"layer{i}.weight", f"layer{i}.bias"]
        enc.params += [Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True)]
    return enc


def forward(enc: Encoder, batch, grad: bool = True) -> Tensor:
    """Map a B x input_dim batch to B x embed_dim unit rows.

    With ``grad=False`` the computation runs on detached parameter copies, so
    nothing downstream can reach the encoder's parameters.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.ndim != 2 or x.shape[1] != enc.config.input_dim:
        raise DimensionError(f"encoder expects (B, {enc.config.input_dim}) input, got {x.shape}")
    if grad:
        params = enc.params
    else:
        x = Tensor(x.data)
        params = [Tensor(p.data) for p in enc.params]
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        h = bias_add(matmul(h, params[2 * i]), params[2 * i + 1])
        if i < n_layers - 1:
            h = relu(h)
    return l2_normalize(h, axis=1)


def clone(enc: Encoder) -> Encoder:
    return Encoder(
        enc.config,
        list(enc.names),
        [Tensor(p.data.copy(), requires_grad=p.requires_grad) for p in enc.params],
    )


def _check_aligned(a: Encoder, b: Encoder) -> None:
    if a.config.widths != b.config.widths:
        raise ContractError(f"encoders differ in architecture: {a.config.widths} vs {b.config.widths}")


def param_distance(a: Encoder, b: Encoder) -> float:
    """Euclidean norm of the concatenated parameter differences."""
    _check_aligned(a, b)
    total = 0.0
    for pa, pb in zip(a.params, b.params):
        d = pa.data - pb.data
        total += float(np.sum(d * d))
    return float(np.sqrt(total))


# -------------------------------------------------------------- checkpoints

def save_encoder(enc: Encoder, path) -> None:
    """Binary checkpoint: magic, config block, then float64 LE params in order."""
    Path(path).write_bytes(encoder_bytes(enc))


def encoder_bytes(enc: Encoder) -> bytes:
    cfg = enc.config
    dims = [cfg.input_dim, len(cfg.hidden_dims), *cfg.hidden_dims, cfg.embed_dim, cfg.seed]
    out = bytearray(MAGIC)
    out += struct.pack(f"<{len(dims)}Q", *dims)
    for p in enc.params:
        out += np.ascontiguousarray(p.data, dtype="<f8").tobytes()
    return bytes(out)


def load_encoder(path) -> Encoder:
    return encoder_from_bytes(Path(path).read_bytes())


def encoder_from_bytes(raw: bytes) -> Encoder:
    if not raw.startswith(MAGIC):
        raise ValueError("not an encoder checkpoint (bad magic)")
    off = len(MAGIC)
    try:
        input_dim, n_hidden = struct.unpack_from("<2Q", raw, off)
        off += 16
        hidden = struct.unpack_from(f"<{n_hidden}Q", raw, off)
        off += 8 * n_hidden
        embed_dim, seed = struct.unpack_from("<2Q", raw, off)
        off += 16
    except struct.error as exc:
        raise ValueError(f"truncated encoder header at offset {off}") from exc
    cfg = EncoderConfig(int(input_dim), tuple(int(h) for h in hidden), int(embed_dim), int(seed))
    enc = init_encoder(cfg)
    for p in enc.params:
        nbytes = p.data.size * 8
        if off + nbytes > len(raw):
            raise ValueError(f"truncated encoder parameters at offset {off}")
        p.data = np.frombuffer(raw, dtype="<f8", count=p.data.size, offset=off).reshape(p.shape).astype(np.float64)
        off += nbytes
    if off != len(raw):
        raise ValueError(f"trailing bytes after parameters at offset {off}")
    return enc
