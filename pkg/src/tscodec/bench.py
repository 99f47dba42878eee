"""Experiment harness: compression sweeps, noise robustness and anomaly detection.

All MSE values are computed on standardised signals. A dataset-level MSE is
the unweighted mean of per-record MSEs.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import Dataset, DataError, Label, NoiseSpec, Record, add_noise_dataset
from .fpca import fpca_fit, fpca_project_reconstruct
from .neural.train import TrainConfig, evaluate_dataset, evaluate_against, split_indices, train
from .neural.vae import VaeConfig, VaeParams
from .results import CompressionResult, ConfusionMatrix, Method, NoiseExperimentResult, Regime
from .wavelet import (
    EnergyProfile,
    WaveletSpec,
    coefficients_for_fraction,
    compress_reconstruct,
    energy_profile,
)

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.005, 0.01, 0.02, 0.06, 0.125, 0.33)


class ConfigError(ValueError):
    pass


def parallel_map(fn, items: Sequence, threads: int | None = None) -> list:
    """Order-preserving map, optionally over a thread pool."""
    if not threads or threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def mse(a: Record, b: Record) -> float:
    if a.samples.shape != b.samples.shape:
        raise DataError(f"shape mismatch: {a.samples.shape} vs {b.samples.shape}")
    return float(np.mean((a.samples - b.samples) ** 2))


def dataset_mse(per_record: Iterable[float]) -> float:
    """Unweighted mean over records (numpy pairwise summation)."""
    vals = np.asarray(list(per_record), dtype=np.float64)
    return float(np.sum(vals) / vals.size)


def latent_for_fraction(fraction: float, in_channels: int, crop_len: int) -> int:
    return max(1, int(round(fraction * in_channels * crop_len)))


# ---------------------------------------------------------------------------
# per-method record errors


def wavelet_errors(dataset: Dataset, spec: WaveletSpec, n: int, method: Method,
                   profile: EnergyProfile | None = None, threads: int | None = None) -> np.ndarray:
    if method is Method.WAVELET_GLOBAL and profile is None:
        profile = energy_profile(dataset, spec)
    res = parallel_map(lambda r: compress_reconstruct(r, spec, n, method, profile)[1].mse, list(dataset), threads)
    return np.array(res)


def fpca_errors(basis, dataset: Dataset, threads: int | None = None) -> np.ndarray:
    return np.array(parallel_map(lambda r: mse(fpca_project_reconstruct(basis, r)[1], r), list(dataset), threads))


def _models_by_latent(models) -> dict[int, VaeParams]:
    if models is None:
        return {}
    if isinstance(models, VaeParams):
        models = [models]
    if isinstance(models, Mapping):
        models = list(models.values())
    return {m.config.latent_dim: m for m in models}


def run_compression_benchmark(
    dataset: Dataset,
    methods: Sequence[Method | str],
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    *,
    wavelet_spec: WaveletSpec = WaveletSpec(),
    vae_models=None,
    train_config: TrainConfig | None = None,
    vae_fractions: Sequence[float] | None = None,
    fit_dataset: Dataset | None = None,
    crop_len: int = 256,
    threads: int | None = None,
) -> list[CompressionResult]:
    """One result per (method, fraction).

    For the VAE the latent size is ``round(fraction * channels * crop_len)``; a
    model with that latent size must be given in ``vae_models`` unless
    ``train_config`` is set, in which case it is trained on ``fit_dataset``
    (default: ``dataset``). ``vae_fractions`` overrides the fraction grid for
    the VAE rows only. FPCA is fitted on ``fit_dataset`` as well, and its
    component count is capped by the number of fitting records.
    """
    methods = [Method.parse(m) if isinstance(m, str) else m for m in methods]
    fit = fit_dataset or dataset
    out: list[CompressionResult] = []
    total = wavelet_spec.padded_length(dataset.length) * dataset.channels
    profile = None

    for method in methods:
        if method in (Method.WAVELET_GLOBAL, Method.WAVELET_ORACLE):
            if method is Method.WAVELET_GLOBAL and profile is None:
                profile = energy_profile(dataset, wavelet_spec)
            for f in fractions:
                n = coefficients_for_fraction(f, total)
                errs = wavelet_errors(dataset, wavelet_spec, n, method, profile, threads)
                out.append(CompressionResult(method, n / total, dataset_mse(errs), dataset.name))
        elif method is Method.VAE:
            models = _models_by_latent(vae_models)
            for f in (fractions if vae_fractions is None else vae_fractions):
                latent = latent_for_fraction(f, dataset.channels, crop_len)
                if latent not in models:
                    if train_config is None:
                        raise ConfigError(
                            f"no VAE checkpoint with latent_dim {latent} for kept fraction {f:g}; "
                            "supply one or enable in-run training"
                        )
                    log.info("training VAE with latent_dim %d", latent)
                    models[latent], _ = train(fit, VaeConfig.for_budget(dataset.channels, latent, crop_len), train_config)
                params = models[latent]
                errs = evaluate_dataset(params, dataset)
                out.append(CompressionResult(Method.VAE, params.config.kept_fraction, dataset_mse(errs), dataset.name))
        elif method is Method.FPCA:
            d = dataset.channels * dataset.length
            ks = {f: min(max(1, int(round(f * d))), len(fit), d) for f in fractions}
            basis = fpca_fit(fit, max(ks.values()))
            for f in fractions:
                errs = fpca_errors(basis.truncate(ks[f]), dataset, threads)
                out.append(CompressionResult(Method.FPCA, ks[f] / d, dataset_mse(errs), dataset.name))
    return out


def run_cross_dataset_eval(
    vae_models,
    datasets: Sequence[Dataset],
    fractions: Sequence[float] | None = None,
    *,
    training_rate: float = 100.0,
    wavelet_spec: WaveletSpec = WaveletSpec(),
    include_wavelets: bool = True,
    threads: int | None = None,
) -> list[CompressionResult]:
    """Evaluate already trained VAEs on several datasets, without retraining.

    Wavelet rows (global profile computed per dataset) are added at the VAE
    kept fractions unless ``fractions`` is given.
    """
    models = _models_by_latent(vae_models)
    if not models:
        raise ConfigError("cross-dataset evaluation needs at least one trained VAE")
    out = []
    for ds in datasets:
        if ds.sampling_rate != training_rate:
            raise DataError(
                f"dataset {ds.name!r} is sampled at {ds.sampling_rate} Hz but the model was trained at "
                f"{training_rate} Hz; resample it first"
            )
        for latent in sorted(models):
            params = models[latent]
            out.append(CompressionResult(Method.VAE, params.config.kept_fraction,
                                         dataset_mse(evaluate_dataset(params, ds)), ds.name))
        if include_wavelets:
            grid = fractions if fractions is not None else [models[k].config.kept_fraction for k in sorted(models)]
            out += run_compression_benchmark(ds, [Method.WAVELET_GLOBAL, Method.WAVELET_ORACLE], grid,
                                             wavelet_spec=wavelet_spec, threads=threads)
    return out


# ---------------------------------------------------------------------------
# noise robustness


def run_noise_experiment(
    dataset: Dataset,
    spec: NoiseSpec,
    vcfg: VaeConfig,
    tcfg: TrainConfig = TrainConfig(),
    test_fraction: float = 0.2,
) -> list[NoiseExperimentResult]:
    """Clean/noisy train x test regimes; every MSE is measured against the clean signal.

    The split and the training seeds are shared by the clean and noisy runs, so a
    zero noise ratio makes the three regimes identical.
    """
    tr, te = split_indices(len(dataset), test_fraction, spec.seed)
    clean_tr, clean_te = dataset.subset(tr), dataset.subset(te)
    train_seq, test_seq = np.random.SeedSequence(spec.seed).spawn(2)
    seed_of = lambda seq: int(seq.generate_state(1, dtype=np.uint64)[0])
    noisy_tr = add_noise_dataset(clean_tr, NoiseSpec(spec.variance_ratio, seed_of(train_seq)))
    noisy_te = add_noise_dataset(clean_te, NoiseSpec(spec.variance_ratio, seed_of(test_seq)))

    clean_params, clean_hist = train(clean_tr, vcfg, tcfg)
    noisy_params, noisy_hist = train(noisy_tr, vcfg, tcfg)
    frac = vcfg.kept_fraction
    name = dataset.name
    return [
        NoiseExperimentResult(Regime.CLEAN_CLEAN, frac, dataset_mse(evaluate_against(clean_params, clean_te, clean_te)),
                              name, tuple(clean_hist)),
        NoiseExperimentResult(Regime.CLEAN_NOISY, frac, dataset_mse(evaluate_against(clean_params, noisy_te, clean_te)),
                              name, tuple(clean_hist)),
        NoiseExperimentResult(Regime.NOISY_NOISY, frac, dataset_mse(evaluate_against(noisy_params, noisy_te, clean_te)),
                              name, tuple(noisy_hist)),
    ]


# ---------------------------------------------------------------------------
# anomaly detection


def _require_labels(dataset: Dataset) -> np.ndarray:
    labels = dataset.labels
    if np.any(labels == Label.UNKNOWN):
        raise DataError(f"dataset {dataset.name!r} has unlabelled records")
    return labels


def confusion(true_labels: np.ndarray, predicted: np.ndarray) -> ConfusionMatrix:
    t = np.asarray(true_labels) == Label.ANOMALY
    p = np.asarray(predicted) == Label.ANOMALY
    return ConfusionMatrix(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)), int(np.sum(t & ~p)))


def classify(errors: np.ndarray, threshold: float) -> np.ndarray:
    """``Anomaly`` where the reconstruction error exceeds the threshold."""
    return np.where(np.asarray(errors) > threshold, int(Label.ANOMALY), int(Label.NORMAL))


def choose_threshold(errors_normal: Sequence[float], errors_anomalous: Sequence[float]) -> float:
    """Threshold maximising balanced accuracy of ``error > threshold -> Anomaly``.

    Candidates are the midpoints between consecutive distinct pooled errors,
    plus one value just below the minimum and the maximum itself. Ties go
    to the smaller threshold.
    """
    en = np.asarray(errors_normal, dtype=np.float64)
    ea = np.asarray(errors_anomalous, dtype=np.float64)
    if en.size == 0 or ea.size == 0:
        raise ValueError("both error lists must be non-empty")
    u = np.unique(np.concatenate([en, ea]))
    cands = np.concatenate([[np.nextafter(u[0], -np.inf)], (u[:-1] + u[1:]) / 2, [u[-1]]])
    sn, sa = np.sort(en), np.sort(ea)
    # tn counts Normal errors <= t, tp counts anomalous errors > t; scoring
    # tn * Na + tp * Nn (balanced accuracy times 2 Na Nn) keeps ties exact
    tn = np.searchsorted(sn, cands, side="right")
    tp = ea.size - np.searchsorted(sa, cands, side="right")
    score = tn * ea.size + tp * en.size
    return float(cands[int(np.argmax(score))])


def detect_anomalies(params: VaeParams, dataset: Dataset, threshold: float) -> tuple[np.ndarray, ConfusionMatrix]:
    """Predict labels from four-crop VAE reconstruction error and score them."""
    labels = _require_labels(dataset)
    pred = classify(evaluate_dataset(params, dataset), threshold)
    return pred, confusion(labels, pred)


def wavelet_anomaly_baseline(dataset: Dataset, spec: WaveletSpec, profile: EnergyProfile, n: int,
                             threshold: float) -> ConfusionMatrix:
    labels = _require_labels(dataset)
    errs = wavelet_errors(dataset, spec, n, Method.WAVELET_GLOBAL, profile)
    return confusion(labels, classify(errs, threshold))


@dataclass
class AnomalyReport:
    vae: ConfusionMatrix
    wavelet: ConfusionMatrix
    vae_threshold: float
    wavelet_threshold: float
    params: VaeParams
    history: list = field(default_factory=list)

    def matrices(self) -> dict[str, ConfusionMatrix]:
        return {"VAE": self.vae, "WaveletGlobal": self.wavelet}


def run_anomaly_experiment(
    dataset: Dataset,
    vcfg: VaeConfig,
    tcfg: TrainConfig = TrainConfig(),
    wavelet_spec: WaveletSpec = WaveletSpec(),
    split: tuple[float, float] = (0.6, 0.2),
    seed: int = 0,
    params: VaeParams | None = None,
) -> AnomalyReport:
    """Train on Normal records only, pick thresholds on a validation split, score a held-out split.

    The wavelet detector keeps as many global coefficients as the VAE has
    latent dimensions relative to its input window, and its energy profile
    comes from the same Normal training records.
    """
    labels = _require_labels(dataset)
    perm = np.random.default_rng(np.random.SeedSequence([seed, 0xA11])).permutation(len(dataset))
    n_tr = int(round(split[0] * len(dataset)))
    n_va = int(round(split[1] * len(dataset)))
    tr, va, te = np.sort(perm[:n_tr]), np.sort(perm[n_tr:n_tr + n_va]), np.sort(perm[n_tr + n_va:])
    normal_tr = tr[labels[tr] == Label.NORMAL]
    for part, idx in (("validation", va), ("test", te)):
        if len(set(labels[idx])) < 2:
            raise DataError(f"{part} split needs both Normal and Anomaly records")
    train_set = dataset.subset(normal_tr)
    history = []
    if params is None:
        params, history = train(train_set, vcfg, tcfg)
    val_set, test_set = dataset.subset(va), dataset.subset(te)
    lv = labels[va]

    v_err = evaluate_dataset(params, val_set)
    v_thr = choose_threshold(v_err[lv == Label.NORMAL], v_err[lv == Label.ANOMALY])
    _, vae_cm = detect_anomalies(params, test_set, v_thr)

    profile = energy_profile(train_set, wavelet_spec)
    n = coefficients_for_fraction(params.config.kept_fraction, profile.mean_abs.size)
    w_err = wavelet_errors(val_set, wavelet_spec, n, Method.WAVELET_GLOBAL, profile)
    w_thr = choose_threshold(w_err[lv == Label.NORMAL], w_err[lv == Label.ANOMALY])
    wav_cm = wavelet_anomaly_baseline(test_set, wavelet_spec, profile, n, w_thr)
    return AnomalyReport(vae_cm, wav_cm, v_thr, w_thr, params, history)
