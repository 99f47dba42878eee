"""Training loop with crop / rhythm augmentation, and four-crop evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..data import Dataset, DataError, Record, resample, tile_offsets
from .optim import AdamHyper, AdamState, TrainingError, adam_step
from .vae import VaeConfig, VaeParams, forward_loss, backward, encode, decode

log = logging.getLogger(__name__)

EVAL_CROPS = 4


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam: tuple[float, float, float] = (0.9, 0.999, 1e-8)
    seed: int = 0
    resample_factor_range: tuple[float, float] = (0.8, 1.2)
    kl_beta: float | None = None  # None: use VaeConfig.beta
    validation_fraction: float = 0.1

    def __post_init__(self):
        lo, hi = self.resample_factor_range
        if not (0 < lo <= 1 <= hi):
            raise ValueError(f"resample_factor_range must satisfy 0 < low <= 1 <= high, got {self.resample_factor_range}")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if not (0 <= self.validation_fraction < 1):
            raise ValueError("validation_fraction must be in [0, 1)")

    @property
    def hyper(self) -> AdamHyper:
        b1, b2, eps = self.adam
        return AdamHyper(self.learning_rate, b1, b2, eps)


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic ``(train, validation)`` split; validation is empty for fraction 0."""
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED])).permutation(n)
    n_val = int(round(fraction * n))
    if fraction > 0:
        n_val = min(max(n_val, 1), n - 1)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def augment_crop(record: Record, crop_len: int, factor_range, rng: np.random.Generator) -> np.ndarray:
    """Resample by a random factor, then take a random ``crop_len`` window."""
    lo, hi = factor_range
    factor = rng.uniform(lo, hi) if hi > lo else lo
    if factor != 1.0:
        record = resample(record, record.sampling_rate * factor)
    if record.length < crop_len:
        raise DataError(f"record {record.id!r} is shorter than crop_len after resampling")
    off = int(rng.integers(0, record.length - crop_len + 1))
    return record.samples[:, off : off + crop_len]


def tile_windows(samples: np.ndarray, crop_len: int, count: int = EVAL_CROPS):
    offsets = tile_offsets(samples.shape[1], crop_len, count)
    return offsets, np.stack([samples[:, o : o + crop_len] for o in offsets])


def untile(crops: np.ndarray, offsets, length: int) -> np.ndarray:
    """Average overlapping windows back onto a ``length``-sample signal."""
    out = np.zeros((crops.shape[1], length))
    weight = np.zeros(length)
    for crop, o in zip(crops, offsets):
        out[:, o : o + crop.shape[1]] += crop
        weight[o : o + crop.shape[1]] += 1.0
    return out / weight


def _evaluate_arrays(params: VaeParams, x: np.ndarray, chunk: int = 256, target: np.ndarray | None = None):
    """Per-record four-crop MSE, reconstructions and KL for a ``(N, C, T)`` array.

    The MSE is taken against ``target`` (same shape as ``x``) when given.
    """
    cfg = params.config
    n, _, length = x.shape
    if length < cfg.crop_len:
        raise DataError(f"records of length {length} are shorter than crop_len {cfg.crop_len}")
    offsets = tile_offsets(length, cfg.crop_len, EVAL_CROPS)
    crops = np.stack([x[:, :, o : o + cfg.crop_len] for o in offsets], axis=1)  # (N, 4, C, L)
    flat = crops.reshape(n * EVAL_CROPS, cfg.in_channels, cfg.crop_len)
    outs, kls = [], []
    for s in range(0, flat.shape[0], chunk):
        latent = encode(params, flat[s : s + chunk])
        outs.append(decode(params, latent.mu))
        kls.append(-0.5 * np.sum(1.0 + latent.logvar - latent.mu ** 2 - np.exp(latent.logvar), axis=1))
    rec = np.concatenate(outs).reshape(crops.shape)
    kl = np.concatenate(kls).reshape(n, EVAL_CROPS).mean(axis=1)
    if target is not None:
        crops = np.stack([target[:, :, o : o + cfg.crop_len] for o in offsets], axis=1)
    mse = ((rec - crops) ** 2).mean(axis=(2, 3)).mean(axis=1)
    return mse, rec, offsets, kl


def evaluate_record(params: VaeParams, record: Record) -> tuple[float, Record]:
    """Mean MSE of four evenly spaced crops, and their overlap-averaged reconstruction.

    Crops are encoded deterministically (``z = mu``).
    """
    if record.length < params.config.crop_len:
        raise DataError(f"record {record.id!r} (length {record.length}) is shorter than crop_len {params.config.crop_len}")
    mse, rec, offsets, _ = _evaluate_arrays(params, record.samples[None])
    return float(mse[0]), record.with_samples(untile(rec[0], offsets, record.length))


def evaluate_dataset(params: VaeParams, dataset: Dataset) -> np.ndarray:
    """Per-record :func:`evaluate_record` MSE for a whole dataset."""
    return _evaluate_arrays(params, dataset.stack())[0]


def evaluate_against(params: VaeParams, inputs: Dataset, targets: Dataset) -> np.ndarray:
    """Per-record four-crop MSE of reconstructing ``inputs``, measured against ``targets``."""
    x, t = inputs.stack(), targets.stack()
    if x.shape != t.shape:
        raise DataError(f"inputs {x.shape} and targets {t.shape} differ in shape")
    return _evaluate_arrays(params, x, target=t)[0]


def reconstruct_dataset(params: VaeParams, dataset: Dataset) -> Dataset:
    mse, rec, offsets, _ = _evaluate_arrays(params, dataset.stack())
    return Dataset(tuple(r.with_samples(untile(c, offsets, r.length)) for r, c in zip(dataset, rec)), dataset.name)


def train(dataset: Dataset, vcfg: VaeConfig, tcfg: TrainConfig = TrainConfig(), progress=None):
    """Fit a VAE with Adam.

    Every batch draws, per record, a resampling factor from
    ``tcfg.resample_factor_range`` and a random crop. History is one dict per epoch with
    ``train_loss``, ``train_recon``, ``train_kl``, ``val_loss`` and ``val_recon``; validation
    uses the deterministic four-crop evaluation. Returns the parameters from the epoch
    with the lowest validation loss.
    """
    if dataset.channels != vcfg.in_channels:
        raise DataError(f"dataset has {dataset.channels} channels, config expects {vcfg.in_channels}")
    lo, hi = tcfg.resample_factor_range
    if dataset.length < vcfg.crop_len * hi or (dataset.length - 1) * lo + 1 < vcfg.crop_len:
        raise DataError(
            f"record length {dataset.length} is too short for crop_len {vcfg.crop_len} "
            f"with resample factors {tcfg.resample_factor_range}"
        )
    beta = vcfg.beta if tcfg.kl_beta is None else tcfg.kl_beta
    init_seq, data_seq = np.random.SeedSequence(tcfg.seed).spawn(2)
    params = VaeParams.init(vcfg, np.random.default_rng(init_seq))
    rng = np.random.default_rng(data_seq)
    tr_idx, va_idx = split_indices(len(dataset), tcfg.validation_fraction, tcfg.seed)
    val = dataset.stack()[va_idx if va_idx.size else tr_idx]
    per_sample = vcfg.in_channels * vcfg.crop_len

    state = AdamState()
    hyper = tcfg.hyper
    history = []
    best, best_loss = params.copy(), math.inf
    for epoch in range(tcfg.epochs):
        order = rng.permutation(tr_idx)
        sums = np.zeros(3)
        batches = 0
        for bi, start in enumerate(range(0, order.size, tcfg.batch_size)):
            idx = order[start : start + tcfg.batch_size]
            x = np.stack([augment_crop(dataset[i], vcfg.crop_len, tcfg.resample_factor_range, rng) for i in idx])
            eps = rng.standard_normal((x.shape[0], vcfg.latent_dim))
            terms, cache = forward_loss(params, x, eps, beta)
            if not all(math.isfinite(t) for t in terms):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1}, batch {bi + 1}")
            grads = backward(params, cache)
            try:
                new, state = adam_step(params.tensors, grads, state, hyper)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch + 1}, batch {bi + 1}: {exc}") from None
            params = VaeParams(vcfg, new)
            sums += terms
            batches += 1
        mse, _, _, kl = _evaluate_arrays(params, val)
        val_recon = float(mse.mean())
        val_loss = val_recon + beta * float(kl.mean()) / per_sample
        tl, trc, tkl = sums / batches
        entry = {
            "epoch": epoch + 1,
            "train_loss": float(tl),
            "train_recon": float(trc),
            "train_kl": float(tkl),
            "val_loss": val_loss,
            "val_recon": val_recon,
        }
        history.append(entry)
        log.info("epoch %d: train %.5f val %.5f (recon %.5f)", epoch + 1, tl, val_loss, val_recon)
        if progress is not None:
            progress(entry)
        if val_loss < best_loss:
            best, best_loss = params.copy(), val_loss
    return best, history


def mean_predictor_mse(train_set: Dataset, test_set: Dataset) -> float:
    """MSE of predicting every test record by the training-set mean curve."""
    mean = train_set.stack().mean(axis=0)
    return float(np.mean((test_set.stack() - mean[None]) ** 2))
