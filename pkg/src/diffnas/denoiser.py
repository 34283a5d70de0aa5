"""Desk-scale 1-D UNet realizing any point of the 10-parameter search space.

The genome is [base_channel, num_blocks, channel_mult_0..3, attn_0..3].
Stage i runs at length L/2^i with width base_channel*channel_mult[i].
Forward/backward are exact reverse-mode via the `autodiff` tape; a single
structural walk (`layer_inventory`) feeds build, count_params and the
analytic FLOPs estimate so they cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (InvalidRangeError, InvalidShapeError, NonFiniteError,
                     RangeViolationError, ShapeMismatchError, StaleCacheError,
                     TimestepError)

NUM_STAGES = 4


@dataclass(frozen=True)
class ArchitectureConfig:
    """The 10 searchable degrees of freedom of one UNet."""

    base_channel: int
    num_blocks: int
    channel_mult: tuple[int, int, int, int]
    attn: tuple[bool, bool, bool, bool]

    def __post_init__(self):
        if not (8 <= self.base_channel <= 256):
            raise InvalidRangeError(f"base_channel out of [8, 256]: {self.base_channel}")
        if not (1 <= self.num_blocks <= 4):
            raise InvalidRangeError(f"num_blocks out of [1, 4]: {self.num_blocks}")
        if len(self.channel_mult) != NUM_STAGES or len(self.attn) != NUM_STAGES:
            raise InvalidRangeError("channel_mult and attn must each have 4 entries")
        if any(not (1 <= m <= 4) for m in self.channel_mult):
            raise InvalidRangeError(f"channel_mult entries out of [1, 4]: {self.channel_mult}")
        object.__setattr__(self, "channel_mult", tuple(int(m) for m in self.channel_mult))
        object.__setattr__(self, "attn", tuple(bool(a) for a in self.attn))

    def width(self, stage: int) -> int:
        return self.base_channel * self.channel_mult[stage]

    def to_kv_block(self) -> str:
        """Flat key-value text block; the format proposal backends must emit."""
        lines = [f"base_channel={self.base_channel}", f"num_blocks={self.num_blocks}"]
        lines += [f"channel_mult_{i}={self.channel_mult[i]}" for i in range(NUM_STAGES)]
        lines += [f"attn_{i}={int(self.attn[i])}" for i in range(NUM_STAGES)]
        return "\n".join(lines)

    @classmethod
    def from_kv_block(cls, text: str) -> "ArchitectureConfig":
        kv: dict[str, int] = {}
        for line in text.strip().splitlines():
            line = line.strip()
            if not line or "=" not in line:
                continue
            key, _, val = line.partition("=")
            kv[key.strip()] = int(val.strip())
        missing = _ARCH_KEYS - kv.keys()
        if missing:
            raise KeyError(f"missing keys: {sorted(missing)}")
        return cls(
            base_channel=kv["base_channel"],
            num_blocks=kv["num_blocks"],
            channel_mult=tuple(kv[f"channel_mult_{i}"] for i in range(NUM_STAGES)),
            attn=tuple(bool(kv[f"attn_{i}"]) for i in range(NUM_STAGES)),
        )


_ARCH_KEYS = frozenset(
    ["base_channel", "num_blocks"]
    + [f"channel_mult_{i}" for i in range(NUM_STAGES)]
    + [f"attn_{i}" for i in range(NUM_STAGES)]
)


@dataclass(frozen=True)
class ArchSpace:
    """Bounds and step granularity of the searchable space."""

    base_channel_min: int = 8
    base_channel_max: int = 32
    base_channel_step: int = 8
    num_blocks_min: int = 1
    num_blocks_max: int = 3
    mult_min: int = 1
    mult_max: int = 4

    def validate(self, arch: ArchitectureConfig) -> None:
        if not (self.base_channel_min <= arch.base_channel <= self.base_channel_max):
            raise RangeViolationError(
                f"base_channel={arch.base_channel} outside "
                f"[{self.base_channel_min}, {self.base_channel_max}]")
        if (arch.base_channel - self.base_channel_min) % self.base_channel_step != 0:
            raise RangeViolationError(
                f"base_channel={arch.base_channel} not on step grid "
                f"{self.base_channel_step}")
        if not (self.num_blocks_min <= arch.num_blocks <= self.num_blocks_max):
            raise RangeViolationError(
                f"num_blocks={arch.num_blocks} outside "
                f"[{self.num_blocks_min}, {self.num_blocks_max}]")
        for i, m in enumerate(arch.channel_mult):
            if not (self.mult_min <= m <= self.mult_max):
                raise RangeViolationError(
                    f"channel_mult_{i}={m} outside [{self.mult_min}, {self.mult_max}]")

    def base_channel_choices(self) -> list[int]:
        return list(range(self.base_channel_min, self.base_channel_max + 1,
                          self.base_channel_step))


@dataclass(frozen=True)
class TrainStrategy:
    """Searchable training strategy: learning rate, dropout, diffusion steps."""

    learning_rate: float
    dropout: float
    diffusion_steps: int

    def __post_init__(self):
        if self.learning_rate < 0.0:
            raise InvalidRangeError(f"learning_rate must be >= 0: {self.learning_rate}")
        if not (0.0 <= self.dropout < 1.0):
            raise InvalidRangeError(f"dropout must lie in [0, 1): {self.dropout}")
        if self.diffusion_steps < 1:
            raise InvalidRangeError(f"diffusion_steps must be >= 1: {self.diffusion_steps}")


@dataclass(frozen=True)
class StrategySpace:
    """Grid of searchable training-strategy values."""

    learning_rates: tuple[float, ...] = (5e-5, 1e-4, 2e-4)
    dropouts: tuple[float, ...] = (0.0, 0.1, 0.3)
    diffusion_steps: tuple[int, ...] = (20, 50, 200)

    def validate(self, strategy: TrainStrategy) -> None:
        if not (min(self.learning_rates) <= strategy.learning_rate
                <= max(self.learning_rates)):
            raise RangeViolationError(f"learning_rate={strategy.learning_rate} "
                                      "outside the strategy space")
        if not (min(self.dropouts) <= strategy.dropout <= max(self.dropouts)):
            raise RangeViolationError(f"dropout={strategy.dropout} outside the "
                                      "strategy space")
        if not (min(self.diffusion_steps) <= strategy.diffusion_steps
                <= max(self.diffusion_steps)):
            raise RangeViolationError(f"diffusion_steps={strategy.diffusion_steps} "
                                      "outside the strategy space")

    def grid(self) -> list[TrainStrategy]:
        return [TrainStrategy(lr, d, s)
                for lr in self.learning_rates
                for d in self.dropouts
                for s in self.diffusion_steps]


# ---------------------------------------------------------------------------
# Layer inventory


@dataclass(frozen=True)
class LayerEntry:
    name: str
    shape: tuple[int, ...]
    macs: int          # multiply-accumulates per sample, 0 for biases
    stage: int         # -1 for stem/head/time-embedding trunk


def _block_entries(prefix: str, in_ch: int, out_ch: int, length: int,
                   temb_dim: int, attn: bool, stage: int) -> Iterator[LayerEntry]:
    yield LayerEntry(f"{prefix}.conv1.w", (out_ch, in_ch, 3), out_ch * in_ch * 3 * length, stage)
    yield LayerEntry(f"{prefix}.conv1.b", (out_ch,), 0, stage)
    yield LayerEntry(f"{prefix}.temb.w", (out_ch, temb_dim), out_ch * temb_dim, stage)
    yield LayerEntry(f"{prefix}.temb.b", (out_ch,), 0, stage)
    yield LayerEntry(f"{prefix}.conv2.w", (out_ch, out_ch, 3), out_ch * out_ch * 3 * length, stage)
    yield LayerEntry(f"{prefix}.conv2.b", (out_ch,), 0, stage)
    if in_ch != out_ch:
        yield LayerEntry(f"{prefix}.skip.w", (out_ch, in_ch, 1), out_ch * in_ch * length, stage)
        yield LayerEntry(f"{prefix}.skip.b", (out_ch,), 0, stage)
    if attn:
        for proj in ("q", "k", "v"):
            yield LayerEntry(f"{prefix}.attn.{proj}.w", (out_ch, out_ch, 1),
                             out_ch * out_ch * length, stage)
            yield LayerEntry(f"{prefix}.attn.{proj}.b", (out_ch,), 0, stage)
        # output projection carries the two score/value matmuls' MACs
        yield LayerEntry(f"{prefix}.attn.o.w", (out_ch, out_ch, 1),
                         out_ch * out_ch * length + 2 * length * length * out_ch, stage)
        yield LayerEntry(f"{prefix}.attn.o.b", (out_ch,), 0, stage)


def layer_inventory(arch: ArchitectureConfig, data_length: int) -> Iterator[LayerEntry]:
    """Deterministic walk over every parameter tensor of the realized UNet."""
    if data_length % 8 != 0 or data_length < 8:
        raise InvalidShapeError(f"data_length must be a positive multiple of 8: {data_length}")
    d = 4 * arch.base_channel
    w = [arch.width(i) for i in range(NUM_STAGES)]
    lengths = [data_length >> i for i in range(NUM_STAGES)]

    yield LayerEntry("temb.fc1.w", (d, d), d * d, -1)
    yield LayerEntry("temb.fc1.b", (d,), 0, -1)
    yield LayerEntry("temb.fc2.w", (d, d), d * d, -1)
    yield LayerEntry("temb.fc2.b", (d,), 0, -1)
    yield LayerEntry("stem.w", (w[0], 1, 3), w[0] * 3 * data_length, -1)
    yield LayerEntry("stem.b", (w[0],), 0, -1)

    for i in range(NUM_STAGES):
        cin = w[0] if i == 0 else w[i - 1]
        for j in range(arch.num_blocks):
            in_ch = cin if j == 0 else w[i]
            yield from _block_entries(f"enc{i}.b{j}", in_ch, w[i], lengths[i],
                                      d, arch.attn[i], i)

    for i in reversed(range(NUM_STAGES)):
        incoming = w[NUM_STAGES - 1] if i == NUM_STAGES - 1 else w[i + 1]
        for j in range(arch.num_blocks):
            in_ch = incoming + w[i] if j == 0 else w[i]
            yield from _block_entries(f"dec{i}.b{j}", in_ch, w[i], lengths[i],
                                      d, arch.attn[i], i)

    yield LayerEntry("head.w", (1, w[0], 3), w[0] * 3 * data_length, -1)
    yield LayerEntry("head.b", (1,), 0, -1)


def count_params(arch: ArchitectureConfig, data_length: int) -> int:
    """Parameter count implied by the layer inventory."""
    return sum(int(np.prod(e.shape)) for e in layer_inventory(arch, data_length))


# ---------------------------------------------------------------------------
# Parameters, forward, backward


class DenoiserParams:
    """Named weight tensors with paired gradient buffers for one UNet."""

    def __init__(self, arch: ArchitectureConfig, data_length: int,
                 weights: dict[str, np.ndarray]):
        self.arch = arch
        self.data_length = data_length
        self.weights = weights
        self.grads: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in weights.items()}
        self._cache = None

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.arch, self.data_length,
                              {k: v.copy() for k, v in self.weights.items()})

    def num_params(self) -> int:
        return sum(v.size for v in self.weights.values())

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0


def build(arch: ArchitectureConfig, data_length: int, seed: int) -> DenoiserParams:
    """Seeded initialization for every inventory entry.

    The output conv, every block's second conv and every attention output
    projection start at zero so the residual stream is an identity at init
    (no normalization layers exist to tame it otherwise); 1x1 skip
    projections are variance-preserving; the rest is He-initialized.
    """
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}
    for entry in layer_inventory(arch, data_length):
        fan_in = int(np.prod(entry.shape[1:]))
        if (entry.name.endswith(".b") or entry.name == "head.w"
                or entry.name.endswith(".conv2.w") or entry.name.endswith(".attn.o.w")):
            weights[entry.name] = np.zeros(entry.shape)
        elif entry.name.endswith(".skip.w"):
            weights[entry.name] = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=entry.shape)
        else:
            weights[entry.name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=entry.shape)
    return DenoiserParams(arch, data_length, weights)


def save_params(params: DenoiserParams, path: str) -> None:
    meta = dict(base_channel=params.arch.base_channel,
                num_blocks=params.arch.num_blocks,
                channel_mult=np.array(params.arch.channel_mult),
                attn=np.array(params.arch.attn, dtype=np.int64),
                data_length=params.data_length)
    np.savez(path, **{f"w/{k}": v for k, v in params.weights.items()}, **meta)


def load_params(path: str) -> DenoiserParams:
    with np.load(path) as z:
        arch = ArchitectureConfig(
            base_channel=int(z["base_channel"]),
            num_blocks=int(z["num_blocks"]),
            channel_mult=tuple(int(m) for m in z["channel_mult"]),
            attn=tuple(bool(a) for a in z["attn"]),
        )
        weights = {k[2:]: z[k].copy() for k in z.files if k.startswith("w/")}
        return DenoiserParams(arch, int(z["data_length"]), weights)


def _sinusoidal_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Standard sin/cos position embedding of integer timesteps; (B, dim)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None].astype(np.float64) * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _res_block(h: Tensor, p: dict[str, Tensor], prefix: str, emb: Tensor,
               dropout: float, training: bool, rng) -> Tensor:
    z = ad.conv1d(h, p[f"{prefix}.conv1.w"], p[f"{prefix}.conv1.b"])
    z = ad.silu(z)
    proj = ad.linear(emb, p[f"{prefix}.temb.w"], p[f"{prefix}.temb.b"])
    z = ad.add(z, ad.expand_last(proj))
    if training and dropout > 0.0:
        mask = (rng.random(z.data.shape) >= dropout) / (1.0 - dropout)
        z = ad.mul_const(z, mask)
    z = ad.conv1d(z, p[f"{prefix}.conv2.w"], p[f"{prefix}.conv2.b"])
    if f"{prefix}.skip.w" in p:
        res = ad.conv1d(h, p[f"{prefix}.skip.w"], p[f"{prefix}.skip.b"])
    else:
        res = h
    out = ad.add(z, res)
    if f"{prefix}.attn.q.w" in p:
        out = _attention(out, p, f"{prefix}.attn")
    return out


def _attention(h: Tensor, p: dict[str, Tensor], prefix: str) -> Tensor:
    c = h.shape[1]
    q = ad.conv1d(h, p[f"{prefix}.q.w"], p[f"{prefix}.q.b"])
    k = ad.conv1d(h, p[f"{prefix}.k.w"], p[f"{prefix}.k.b"])
    v = ad.conv1d(h, p[f"{prefix}.v.w"], p[f"{prefix}.v.b"])
    scores = ad.bmatmul(ad.transpose_last2(q), k)          # (B, L, L)
    scores = ad.mul_const(scores, 1.0 / np.sqrt(c))
    weights = ad.softmax_last(scores)
    attended = ad.bmatmul(v, ad.transpose_last2(weights))  # (B, C, L)
    out = ad.conv1d(attended, p[f"{prefix}.o.w"], p[f"{prefix}.o.b"])
    return ad.add(h, out)


def _forward_graph(params: DenoiserParams, x: np.ndarray, t: np.ndarray,
                   dropout: float, training: bool, rng):
    arch = params.arch
    p = {name: Tensor(w) for name, w in params.weights.items()}
    d = 4 * arch.base_channel

    emb_in = Tensor(_sinusoidal_embedding(t, d))
    emb = ad.linear(emb_in, p["temb.fc1.w"], p["temb.fc1.b"])
    emb = ad.silu(emb)
    emb = ad.linear(emb, p["temb.fc2.w"], p["temb.fc2.b"])

    h = ad.conv1d(Tensor(x), p["stem.w"], p["stem.b"])
    skips: list[Tensor] = []
    for i in range(NUM_STAGES):
        for j in range(arch.num_blocks):
            h = _res_block(h, p, f"enc{i}.b{j}", emb, dropout, training, rng)
        skips.append(h)
        if i < NUM_STAGES - 1:
            h = ad.avgpool1d(h)
    for i in reversed(range(NUM_STAGES)):
        if i < NUM_STAGES - 1:
            h = ad.upsample_nearest(h)
        h = ad.concat_channels(h, skips[i])
        for j in range(arch.num_blocks):
            h = _res_block(h, p, f"dec{i}.b{j}", emb, dropout, training, rng)
    out = ad.conv1d(h, p["head.w"], p["head.b"])
    return out, p


def forward(params: DenoiserParams, x: np.ndarray, t, *, training: bool = False,
            dropout: float = 0.0, schedule_T: int | None = None,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Predict the noise in x. x: (1, L) single sample or (B, 1, L) batch.

    When training=True the graph is cached on `params` for backward().
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != params.data_length:
        raise ShapeMismatchError(
            f"expected (B, 1, {params.data_length}), got {x.shape}")
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if t.size == 1 and x.shape[0] > 1:
        t = np.full(x.shape[0], t[0])
    if t.shape[0] != x.shape[0]:
        raise ShapeMismatchError("one timestep per batch element required")
    if schedule_T is not None and (np.any(t < 1) or np.any(t > schedule_T)):
        raise TimestepError(f"timesteps must lie in [1, {schedule_T}]")
    if np.any(t < 1):
        raise TimestepError("timesteps are 1-indexed")
    if training and dropout > 0.0 and rng is None:
        rng = np.random.default_rng(0)

    out, p = _forward_graph(params, x, t, dropout, training, rng)
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError("non-finite activation in denoiser forward pass")
    params._cache = (out, p) if training else None
    return out.data[0] if single else out.data


def backward(params: DenoiserParams, grad_output: np.ndarray) -> dict[str, np.ndarray]:
    """Fill gradient buffers from the cached training-mode forward pass."""
    if params._cache is None:
        raise StaleCacheError("backward() requires a preceding forward(training=True)")
    out, p = params._cache
    g = np.asarray(grad_output, dtype=np.float64)
    if g.ndim == 2:
        g = g[None]
    if g.shape != out.data.shape:
        raise ShapeMismatchError(f"grad_output shape {g.shape} != output {out.data.shape}")
    out.backward(g)
    for name, tensor in p.items():
        params.grads[name] = tensor.grad if tensor.grad is not None \
            else np.zeros_like(params.weights[name])
    params._cache = None
    return params.grads
