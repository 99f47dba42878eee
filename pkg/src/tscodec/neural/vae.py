"""Convolutional VAE: parameters, forward pass, ELBO and its gradient.

Encoder: three strided conv + leaky-ReLU layers, flatten, two dense heads for
the posterior mean and log-variance. Decoder: dense + leaky-ReLU, reshape, and
three transposed convolutions mirroring the encoder; the last one is linear.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from .layers import ShapeError

LOGVAR_CLAMP = 10.0
PARAM_ORDER = (
    "enc1.w", "enc1.b", "enc2.w", "enc2.b", "enc3.w", "enc3.b",
    "mu.w", "mu.b", "logvar.w", "logvar.b",
    "dec.w", "dec.b",
    "dec3.w", "dec3.b", "dec2.w", "dec2.b", "dec1.w", "dec1.b",
)
CHECKPOINT_MAGIC = b"VAE1"
_CFG_INTS = struct.Struct("<10q")
_CFG_FLOATS = struct.Struct("<2d")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class VaeConfig:
    in_channels: int = 1
    crop_len: int = 256
    conv_channels: tuple[int, int, int] = (16, 32, 64)
    kernel_size: int = 7
    strides: tuple[int, int, int] = (2, 2, 2)
    latent_dim: int = 16
    beta: float = 1.0
    negative_slope: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.conv_channels) != 3 or len(self.strides) != 3:
            raise ValueError("exactly three conv layers per side are required")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        if min(self.conv_channels) < 1 or min(self.strides) < 1:
            raise ValueError("conv channels and strides must be positive")
        if self.in_channels < 1 or self.latent_dim < 1:
            raise ValueError("in_channels and latent_dim must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.lengths[-1] < 1:
            raise ValueError(f"crop_len {self.crop_len} is too short for three strided convolutions")

    @property
    def padding(self) -> int:
        return (self.kernel_size - 1) // 2

    @property
    def lengths(self) -> tuple[int, int, int, int]:
        """Spatial length at the input and after each encoder layer."""
        out = [self.crop_len]
        for s in self.strides:
            out.append(L.conv_out_len(out[-1], self.kernel_size, s, self.padding))
        return tuple(out)

    @property
    def flat_dim(self) -> int:
        return self.conv_channels[2] * self.lengths[3]

    @property
    def kept_fraction(self) -> float:
        """Latent size relative to the raw sample count of one input window."""
        return self.latent_dim / (self.in_channels * self.crop_len)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        c0, (c1, c2, c3), k, z = self.in_channels, self.conv_channels, self.kernel_size, self.latent_dim
        return {
            "enc1.w": (c1, c0, k), "enc1.b": (c1,),
            "enc2.w": (c2, c1, k), "enc2.b": (c2,),
            "enc3.w": (c3, c2, k), "enc3.b": (c3,),
            "mu.w": (z, self.flat_dim), "mu.b": (z,),
            "logvar.w": (z, self.flat_dim), "logvar.b": (z,),
            "dec.w": (self.flat_dim, z), "dec.b": (self.flat_dim,),
            "dec3.w": (c3, c2, k), "dec3.b": (c2,),
            "dec2.w": (c2, c1, k), "dec2.b": (c1,),
            "dec1.w": (c1, c0, k), "dec1.b": (c0,),
        }

    @classmethod
    def for_budget(cls, in_channels: int, latent_dim: int, crop_len: int = 256, **kw) -> "VaeConfig":
        """Config whose filter counts grow with the latent size."""
        if "conv_channels" not in kw:
            base = 16 if latent_dim <= 32 else 32
            kw["conv_channels"] = (base, 2 * base, 4 * base)
        return cls(in_channels=in_channels, crop_len=crop_len, latent_dim=latent_dim, **kw)


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name.endswith(".b"):
        return 0
    if name.startswith("dec") and len(shape) == 3:
        return shape[0] * shape[2]
    return int(np.prod(shape[1:]))


@dataclass(eq=False)
class VaeParams:
    config: VaeConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.config.param_shapes()
        if set(self.tensors) != set(shapes):
            raise ShapeError(f"parameter names {sorted(self.tensors)} do not match the config")
        for name, shape in shapes.items():
            arr = np.asarray(self.tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name}: shape {arr.shape}, config expects {shape}")
            self.tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "VaeParams":
        return VaeParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    @property
    def size(self) -> int:
        return sum(v.size for v in self.tensors.values())

    @classmethod
    def init(cls, config: VaeConfig, rng: np.random.Generator) -> "VaeParams":
        """Uniform ``+-sqrt(1/fan_in)`` initialisation, drawn in :data:`PARAM_ORDER`."""
        shapes = config.param_shapes()
        tensors = {}
        for name in PARAM_ORDER:
            shape = shapes[name]
            w_name = name[:-1] + "w"
            fan = _fan_in(w_name, shapes[w_name])
            bound = np.sqrt(1.0 / fan)
            tensors[name] = rng.uniform(-bound, bound, shape)
        return cls(config, tensors)

    @classmethod
    def zeros(cls, config: VaeConfig) -> "VaeParams":
        return cls(config, {k: np.zeros(s) for k, s in config.param_shapes().items()})


@dataclass(frozen=True, eq=False)
class GaussianLatent:
    mu: np.ndarray  # (B, latent_dim)
    logvar: np.ndarray  # (B, latent_dim), clamped


# ---------------------------------------------------------------------------
# forward / backward


def _check_input(cfg: VaeConfig, x: np.ndarray) -> None:
    if x.ndim != 3 or x.shape[1:] != (cfg.in_channels, cfg.crop_len):
        raise ShapeError(f"expected input (B, {cfg.in_channels}, {cfg.crop_len}), got {x.shape}")


def _encode(params: VaeParams, x: np.ndarray):
    cfg = params.config
    _check_input(cfg, x)
    p, a = cfg.padding, cfg.negative_slope
    cache = {"x": x}
    h = x
    for i, s in enumerate(cfg.strides, start=1):
        cache[f"in{i}"] = h
        pre = L.conv1d_forward(h, params[f"enc{i}.w"], params[f"enc{i}.b"], s, p)
        cache[f"pre{i}"] = pre
        h = L.leaky_forward(pre, a)
    flat = h.reshape(h.shape[0], -1)
    cache["flat"] = flat
    mu = L.dense_forward(flat, params["mu.w"], params["mu.b"])
    lv_raw = L.dense_forward(flat, params["logvar.w"], params["logvar.b"])
    cache["lv_raw"] = lv_raw
    return GaussianLatent(mu, np.clip(lv_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)), cache


def encode(params: VaeParams, x: np.ndarray) -> GaussianLatent:
    return _encode(params, np.asarray(x, dtype=np.float64))[0]


def reparameterize(latent: GaussianLatent, eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[-1] != latent.mu.shape[-1]:
        raise ShapeError(f"eps has {eps.shape[-1]} dims, latent has {latent.mu.shape[-1]}")
    return latent.mu + np.exp(0.5 * latent.logvar) * eps


def _decode(params: VaeParams, z: np.ndarray):
    cfg = params.config
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != cfg.latent_dim:
        raise ShapeError(f"z has {z.shape[1]} dims, config expects {cfg.latent_dim}")
    p, a = cfg.padding, cfg.negative_slope
    lens = cfg.lengths
    cache = {"z": z}
    pre0 = L.dense_forward(z, params["dec.w"], params["dec.b"])
    cache["dpre0"] = pre0
    h = L.leaky_forward(pre0, a).reshape(z.shape[0], cfg.conv_channels[2], lens[3])
    for i in (3, 2, 1):
        cache[f"din{i}"] = h
        out = L.transposed_conv1d_forward(h, params[f"dec{i}.w"], params[f"dec{i}.b"], cfg.strides[i - 1], p, lens[i - 1])
        if i > 1:
            cache[f"dpre{i}"] = out
            h = L.leaky_forward(out, a)
        else:
            h = out
    return h, cache


def decode(params: VaeParams, z: np.ndarray) -> np.ndarray:
    return _decode(params, z)[0]


def kl_divergence(latent: GaussianLatent) -> float:
    """Batch-mean KL(N(mu, exp(logvar)) || N(0, I))."""
    mu, lv = np.atleast_2d(latent.mu), np.atleast_2d(latent.logvar)
    per = -0.5 * np.sum(1.0 + lv - mu * mu - np.exp(lv), axis=1)
    return float(np.mean(per))


def elbo_loss(x, xhat, latent: GaussianLatent, beta: float) -> tuple[float, float, float]:
    """``(total, recon, kl)`` with ``total = recon + beta * kl / elements_per_sample``."""
    x, xhat = np.asarray(x, dtype=np.float64), np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ShapeError(f"x {x.shape} and xhat {xhat.shape} differ")
    recon = float(np.mean((xhat - x) ** 2))
    kl = kl_divergence(latent)
    per_sample = x[0].size if x.ndim > 1 else x.size
    return recon + beta * kl / per_sample, recon, kl


def forward_loss(params: VaeParams, x: np.ndarray, eps: np.ndarray, beta: float | None = None):
    """Loss terms and the cache needed by :func:`backward`."""
    beta = params.config.beta if beta is None else beta
    latent, ecache = _encode(params, x)
    z = reparameterize(latent, eps)
    xhat, dcache = _decode(params, z)
    total, recon, kl = elbo_loss(x, xhat, latent, beta)
    cache = {**ecache, **dcache, "latent": latent, "eps": np.asarray(eps, dtype=np.float64), "xhat": xhat, "beta": beta,
             "slope": params.config.negative_slope}
    return (total, recon, kl), cache


def backward(params: VaeParams, cache: dict) -> dict[str, np.ndarray]:
    """Gradient of the ELBO total with respect to every parameter."""
    cfg = params.config
    p, a = cfg.padding, cfg.negative_slope
    x, xhat, latent, eps, beta = cache["x"], cache["xhat"], cache["latent"], cache["eps"], cache["beta"]
    bsz = x.shape[0]
    per_sample = x[0].size
    grads: dict[str, np.ndarray] = {}

    g = 2.0 * (xhat - x) / x.size
    for i in (1, 2, 3):
        if i > 1:
            g = L.leaky_backward(g, cache[f"dpre{i}"], a)
        g, grads[f"dec{i}.w"], grads[f"dec{i}.b"] = L.transposed_conv1d_backward(
            g, cache[f"din{i}"], params[f"dec{i}.w"], cfg.strides[i - 1], p
        )
    g = L.leaky_backward(g.reshape(bsz, -1), cache["dpre0"], a)
    gz, grads["dec.w"], grads["dec.b"] = L.dense_backward(g, cache["z"], params["dec.w"])

    std = np.exp(0.5 * latent.logvar)
    kl_scale = beta / (bsz * per_sample)
    gmu = gz + kl_scale * latent.mu
    glv = gz * eps * 0.5 * std + kl_scale * 0.5 * (np.exp(latent.logvar) - 1.0)
    glv = glv * (np.abs(cache["lv_raw"]) < LOGVAR_CLAMP)

    gf_mu, grads["mu.w"], grads["mu.b"] = L.dense_backward(gmu, cache["flat"], params["mu.w"])
    gf_lv, grads["logvar.w"], grads["logvar.b"] = L.dense_backward(glv, cache["flat"], params["logvar.w"])
    g = (gf_mu + gf_lv).reshape(bsz, cfg.conv_channels[2], cfg.lengths[3])
    for i in (3, 2, 1):
        g = L.leaky_backward(g, cache[f"pre{i}"], a)
        g, grads[f"enc{i}.w"], grads[f"enc{i}.b"] = L.conv1d_backward(
            g, cache[f"in{i}"], params[f"enc{i}.w"], cfg.strides[i - 1], p
        )
    return grads


def activation_pattern(cache: dict) -> np.ndarray:
    """Which side of every kink (leaky-ReLU input, log-variance clamp) the forward pass was on."""
    keys = ("pre1", "pre2", "pre3", "dpre0", "dpre3", "dpre2")
    # a unit slope leaves no kink in the activation
    parts = [] if cache["slope"] == 1.0 else [(cache[k] > 0).reshape(-1) for k in keys]
    lv = cache["lv_raw"].reshape(-1)
    parts += [lv > LOGVAR_CLAMP, lv < -LOGVAR_CLAMP]
    return np.concatenate(parts)


def loss_and_grad(params: VaeParams, x: np.ndarray, eps: np.ndarray, beta: float | None = None):
    terms, cache = forward_loss(params, x, eps, beta)
    return terms, backward(params, cache)


def reconstruct(params: VaeParams, x: np.ndarray) -> np.ndarray:
    """Deterministic reconstruction through the posterior mean."""
    return decode(params, encode(params, x).mu)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: VaeParams, path) -> None:
    """Write ``VAE1`` + config block + f64 tensors in :data:`PARAM_ORDER`.

    Config block: ten little-endian int64 (in_channels, crop_len, conv_channels x3,
    kernel_size, strides x3, latent_dim) then two f64 (beta, negative_slope).
    """
    from ..data import _atomic_write

    cfg = params.config
    head = CHECKPOINT_MAGIC + _CFG_INTS.pack(
        cfg.in_channels, cfg.crop_len, *cfg.conv_channels, cfg.kernel_size, *cfg.strides, cfg.latent_dim
    ) + _CFG_FLOATS.pack(cfg.beta, cfg.negative_slope)
    body = b"".join(params[name].astype("<f8").tobytes() for name in PARAM_ORDER)
    _atomic_write(Path(path), lambda fh: fh.write(head + body))


def load_checkpoint(path) -> VaeParams:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a VAE1 checkpoint")
    off = 4
    try:
        ints = _CFG_INTS.unpack_from(data, off)
        off += _CFG_INTS.size
        beta, slope = _CFG_FLOATS.unpack_from(data, off)
        off += _CFG_FLOATS.size
    except struct.error:
        raise CheckpointError(f"{path}: truncated config block") from None
    cfg = VaeConfig(
        in_channels=ints[0], crop_len=ints[1], conv_channels=ints[2:5], kernel_size=ints[5],
        strides=ints[6:9], latent_dim=ints[9], beta=beta, negative_slope=slope,
    )
    shapes = cfg.param_shapes()
    expected = off + 8 * sum(int(np.prod(shapes[n])) for n in PARAM_ORDER)
    if len(data) != expected:
        raise CheckpointError(f"{path}: {len(data)} bytes, config implies {expected}")
    tensors = {}
    for name in PARAM_ORDER:
        count = int(np.prod(shapes[name]))
        tensors[name] = np.frombuffer(data, "<f8", count, off).reshape(shapes[name]).copy()
        off += 8 * count
    return VaeParams(cfg, tensors)
