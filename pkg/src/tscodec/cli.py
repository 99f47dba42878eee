"""``tscodec`` command line.

Every subcommand accepts ``--seed``, ``--out``, ``--config`` and ``--threads``.
Settings are resolved as built-in defaults, then the JSON config file, then
explicit flags. Config keys are the long flag names with dashes or
underscores (``batch_size`` for ``--batch-size``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import zlib
from pathlib import Path

import numpy as np

from . import bench, report
from .data import (
    DataError,
    Dataset,
    Format,
    NoiseSpec,
    StandardizationStats,
    SyntheticConfig,
    add_noise_dataset,
    apply_standardization,
    generate_synthetic,
    load_dataset,
    resample,
    save_dataset,
    standardize,
)
from .fpca import fpca_fit, save_basis
from .neural.train import TrainConfig, train
from .neural.vae import VaeConfig, load_checkpoint, save_checkpoint
from .results import CompressionResult, Method
from .wavelet import WaveletSpec, coefficients_for_fraction

log = logging.getLogger("tscodec")


class UsageError(Exception):
    """Bad configuration; reported like an argparse error (exit 2)."""


# ---------------------------------------------------------------------------
# option tables: (flag, type, default, help). ``bool`` means a store_true switch.

_COMMON = [
    ("seed", int, 0, "master seed; every component derives its own stream from it"),
    ("out", str, ".", "output directory"),
    ("threads", int, None, "worker threads for per-record evaluation (env TSC_THREADS, else CPU count)"),
]

_VAE_OPTS = [
    ("latent", int, 16, "latent dimension"),
    ("crop-len", int, 256, "crop length in samples"),
    ("beta", float, 1.0, "KL weight"),
    ("epochs", int, 30, "training epochs"),
    ("batch-size", int, 32, "minibatch size"),
    ("lr", float, 1e-3, "Adam learning rate"),
    ("validation-fraction", float, 0.1, "share of training records held out for model selection"),
]

_WAVELET_OPTS = [
    ("family", str, "db4", "wavelet family: haar or db4"),
    ("levels", int, None, "decomposition depth (default: deepest valid)"),
]

COMMANDS = {
    "synth": ("generate a synthetic ECG-like dataset", [
        ("count", int, 256, "number of records"),
        ("channels", int, 1, "channels per record"),
        ("length", int, 1000, "samples per record"),
        ("rate", float, 100.0, "sampling rate in Hz"),
        ("hr-low", float, 60.0, "lowest heart rate, beats per minute"),
        ("hr-high", float, 100.0, "highest heart rate, beats per minute"),
        ("anomaly-fraction", float, 0.0, "share of records labelled Anomaly"),
        ("name", str, "set", "output file stem"),
        ("format", str, "rawf32", "rawf32 or csv"),
    ]),
    "preprocess": ("resample, standardise and optionally add noise", [
        ("input", str, None, "input dataset"),
        ("rate", float, None, "target sampling rate in Hz (default: keep)"),
        ("stats", str, None, "apply these standardisation stats (JSON) instead of fitting new ones"),
        ("no-standardize", bool, False, "skip standardisation"),
        ("noise", float, 0.0, "additive noise variance ratio"),
        ("name", str, "pre", "output file stem"),
        ("format", str, "rawf32", "rawf32 or csv"),
    ]),
    "wavelet": ("wavelet compression of every record", [
        ("input", str, None, "input dataset"),
        ("fraction", float, 0.02, "kept fraction of coefficients"),
        ("method", str, "global", "global or oracle"),
        *_WAVELET_OPTS,
    ]),
    "fpca": ("functional PCA compression of every record", [
        ("input", str, None, "input dataset"),
        ("fit", str, None, "dataset to fit the basis on (default: input)"),
        ("fraction", float, 0.02, "kept fraction; components = round(fraction * channels * length)"),
    ]),
    "vae-train": ("train a VAE and save a checkpoint", [
        ("input", str, None, "training dataset"),
        *_VAE_OPTS,
        ("name", str, None, "checkpoint stem (default: vae_l<latent>)"),
    ]),
    "vae-eval": ("evaluate VAE checkpoints on one or more datasets", [
        ("input", list, None, "datasets (repeatable)"),
        ("checkpoint", list, None, "checkpoints (repeatable)"),
        ("training-rate", float, None, "sampling rate the models were trained at (default: first input's)"),
        ("wavelets", bool, False, "add wavelet rows at the VAE kept fractions"),
        *_WAVELET_OPTS,
    ]),
    "bench": ("compression sweep across methods", [
        ("input", str, None, "dataset"),
        ("methods", str, None, "comma list of global, oracle, fpca, vae (default: global,oracle plus vae with checkpoints)"),
        ("fractions", str, ",".join(f"{f:g}" for f in bench.DEFAULT_FRACTIONS), "comma list of kept fractions"),
        ("checkpoint", list, None, "VAE checkpoints (repeatable)"),
        ("train-vae", bool, False, "train missing VAE budgets in-run"),
        ("svg", bool, False, "also write an SVG chart"),
        *_WAVELET_OPTS,
        *[o for o in _VAE_OPTS if o[0] not in ("latent",)],
    ]),
    "noise": ("noise robustness: clean/noisy train and test regimes", [
        ("input", str, None, "clean dataset"),
        ("ratio", float, 0.2, "noise variance ratio"),
        ("test-fraction", float, 0.2, "share of records held out for testing"),
        *_VAE_OPTS,
    ]),
    "anomaly": ("anomaly detection by reconstruction error", [
        ("input", str, None, "labelled dataset"),
        ("checkpoint", str, None, "use this VAE instead of training one on the Normal training split"),
        ("train-fraction", float, 0.6, "share of records for training"),
        ("val-fraction", float, 0.2, "share of records for threshold selection"),
        *_WAVELET_OPTS,
        *_VAE_OPTS,
    ]),
}


def _dest(flag: str) -> str:
    return flag.replace("-", "_")


def _threads(value):
    if value is not None:
        return value
    env = os.environ.get("TSC_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"TSC_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tscodec", description="Time-series compression benchmarks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    for name, (help_text, opts) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of settings; flags override it")
        for flag, typ, default, help_ in [*opts, *_COMMON]:
            shown = help_ if default is None or default is False else f"{help_} (default: {default})"
            if typ is bool:
                sp.add_argument(f"--{flag}", action="store_true", default=argparse.SUPPRESS, help=help_)
            elif typ is list:
                sp.add_argument(f"--{flag}", action="append", default=argparse.SUPPRESS, help=shown)
            else:
                sp.add_argument(f"--{flag}", type=typ, default=argparse.SUPPRESS, help=shown)
    return p


def resolve_settings(command: str, ns: argparse.Namespace) -> dict:
    """Defaults, overridden by the config file, overridden by flags."""
    opts = COMMANDS[command][1] + _COMMON
    types = {_dest(f): t for f, t, _, _ in opts}
    settings = {_dest(f): d for f, _, d, _ in opts}
    given = vars(ns)
    explicit = {k for k in given if k in settings}
    if "config" in given:
        try:
            with open(given["config"]) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {given['config']}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in cfg.items():
            k = _dest(key)
            if k not in types:
                raise UsageError(f"unknown config key {key!r} for {command}")
            settings[k] = _coerce(k, value, types[k])
            explicit.add(k)
    for k, v in given.items():
        if k in settings:
            settings[k] = v
    settings["_explicit"] = explicit
    return settings


def _coerce(key, value, typ):
    if value is None:
        return None
    try:
        if typ is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if typ is list:
            return [str(v) for v in value] if isinstance(value, list) else [str(value)]
        if typ is int and isinstance(value, float) and not value.is_integer():
            raise TypeError
        return typ(value)
    except (TypeError, ValueError):
        raise UsageError(f"config key {key!r}: cannot use {value!r} as {typ.__name__}") from None


def _need(s: dict, *keys):
    for k in keys:
        if s.get(k) in (None, []):
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None
    if not vals:
        raise UsageError("empty number list")
    for v in vals:
        if not 0 < v <= 1:
            raise UsageError(f"kept fractions must be in (0, 1], got {v}")
    return vals


def component_seed(seed: int, component: str) -> int:
    """Independent, reproducible seed for one component of a run."""
    seq = np.random.SeedSequence([seed & 0xFFFFFFFF, zlib.crc32(component.encode())])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def _vae_configs(s: dict, channels: int):
    try:
        vcfg = VaeConfig.for_budget(channels, s.get("latent", 16), s["crop_len"], beta=s["beta"])
        tcfg = TrainConfig(
            epochs=s["epochs"], batch_size=s["batch_size"], learning_rate=s["lr"],
            seed=component_seed(s["seed"], "train"), validation_fraction=s["validation_fraction"],
        )
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    return vcfg, tcfg


def _wavelet_spec(s: dict) -> WaveletSpec:
    try:
        return WaveletSpec(s["family"], s["levels"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _check_inputs(*paths):
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise UsageError(f"input file not found: {p}")


def _extension(fmt: str) -> str:
    try:
        return ".csv" if Format(fmt.lower()) is Format.CSV else ".tsc"
    except ValueError:
        raise UsageError(f"unknown format {fmt!r}; choose rawf32 or csv") from None


def _per_record_csv(name: str, method: str, fraction: float, errors, ids) -> str:
    rows = [CompressionResult(Method(method), fraction, float(e), f"{name}:{rid}") for e, rid in zip(errors, ids)]
    rows.append(CompressionResult(Method(method), fraction, bench.dataset_mse(errors), name))
    return report.results_csv(rows)


# ---------------------------------------------------------------------------
# subcommands; each validates everything before doing work


def cmd_synth(s, out: Path):
    ext = _extension(s["format"])
    cfg = SyntheticConfig(
        count=s["count"], channels=s["channels"], length=s["length"], sampling_rate=s["rate"],
        heart_rate_range=(s["hr_low"], s["hr_high"]), anomaly_fraction=s["anomaly_fraction"],
        seed=component_seed(s["seed"], "synth"),
    )
    try:
        cfg.validate()
    except DataError as exc:
        raise UsageError(str(exc)) from None
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_synthetic(cfg)
    save_dataset(Dataset(ds.records, s["name"]), out / f"{s['name']}{ext}", s["format"])


def cmd_preprocess(s, out: Path):
    _need(s, "input")
    _check_inputs(s["input"], s["stats"])
    ext = _extension(s["format"])
    if s["rate"] is not None and not s["rate"] > 0:
        raise UsageError("--rate must be positive")
    if not s["noise"] >= 0:
        raise UsageError("--noise must be non-negative")
    ds = load_dataset(s["input"])
    if s["rate"] is not None:
        ds = ds.map(lambda r: resample(r, s["rate"]))
    stats = None
    if not s["no_standardize"]:
        if s["stats"]:
            with open(s["stats"]) as fh:
                stats = StandardizationStats.from_dict(json.load(fh))
            ds = apply_standardization(ds, stats)
        else:
            ds, stats = standardize(ds)
    if s["noise"] > 0:
        ds = add_noise_dataset(ds, NoiseSpec(s["noise"], component_seed(s["seed"], "noise")))
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(Dataset(ds.records, s["name"]), out / f"{s['name']}{ext}", s["format"])
    if stats is not None and not s["stats"]:
        report.write_text(out / f"{s['name']}.stats.json", json.dumps(stats.to_dict(), indent=1) + "\n")


def cmd_wavelet(s, out: Path):
    _need(s, "input")
    _check_inputs(s["input"])
    spec = _wavelet_spec(s)
    try:
        method = Method.parse(s["method"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if method not in (Method.WAVELET_GLOBAL, Method.WAVELET_ORACLE):
        raise UsageError("--method must be global or oracle")
    _floats(s["fraction"])
    ds = load_dataset(s["input"])
    total = spec.padded_length(ds.length) * ds.channels
    n = coefficients_for_fraction(s["fraction"], total)
    errs = bench.wavelet_errors(ds, spec, n, method, threads=s["threads"])
    out.mkdir(parents=True, exist_ok=True)
    report.write_text(out / "wavelet.csv", _per_record_csv(ds.name, method.value, n / total, errs, [r.id for r in ds]))


def cmd_fpca(s, out: Path):
    _need(s, "input")
    _check_inputs(s["input"], s["fit"])
    _floats(s["fraction"])
    ds = load_dataset(s["input"])
    fit = load_dataset(s["fit"]) if s["fit"] else ds
    d = ds.channels * ds.length
    k = min(max(1, int(round(s["fraction"] * d))), len(fit), d)
    basis = fpca_fit(fit, k)
    errs = bench.fpca_errors(basis, ds, s["threads"])
    out.mkdir(parents=True, exist_ok=True)
    save_basis(basis, out / "fpca_basis.tsc", fit.sampling_rate)
    report.write_text(out / "fpca.csv", _per_record_csv(ds.name, "FPCA", k / d, errs, [r.id for r in ds]))


def _history_csv(history) -> str:
    buf = io.StringIO()
    keys = ["epoch", "train_loss", "train_recon", "train_kl", "val_loss", "val_recon"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for h in history:
        w.writerow([h["epoch"], *(repr(float(h[k])) for k in keys[1:])])
    return buf.getvalue()


def cmd_vae_train(s, out: Path):
    _need(s, "input")
    _check_inputs(s["input"])
    ds = load_dataset(s["input"])
    vcfg, tcfg = _vae_configs(s, ds.channels)
    params, history = train(ds, vcfg, tcfg, progress=lambda e: log.info("epoch %d val %.5f", e["epoch"], e["val_loss"]))
    stem = s["name"] or f"vae_l{vcfg.latent_dim}"
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / f"{stem}.ckpt")
    report.write_text(out / f"{stem}_history.csv", _history_csv(history))


def cmd_vae_eval(s, out: Path):
    _need(s, "input", "checkpoint")
    _check_inputs(*s["input"], *s["checkpoint"])
    spec = _wavelet_spec(s)
    models = [load_checkpoint(p) for p in s["checkpoint"]]
    datasets = [load_dataset(p) for p in s["input"]]
    rate = s["training_rate"] if s["training_rate"] is not None else datasets[0].sampling_rate
    results = bench.run_cross_dataset_eval(models, datasets, training_rate=rate, wavelet_spec=spec,
                                           include_wavelets=s["wavelets"], threads=s["threads"])
    out.mkdir(parents=True, exist_ok=True)
    report.write_text(out / "vae_eval.csv", report.results_csv(results))
    report.write_text(out / "vae_eval_table.txt", report.format_table(results))


def cmd_bench(s, out: Path):
    _need(s, "input")
    ckpts = s["checkpoint"] or []
    _check_inputs(s["input"], *ckpts)
    spec = _wavelet_spec(s)
    fractions = _floats(s["fractions"])
    if s["methods"]:
        try:
            methods = [Method.parse(m) for m in s["methods"].split(",") if m.strip()]
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        methods = [Method.WAVELET_GLOBAL, Method.WAVELET_ORACLE] + ([Method.VAE] if ckpts else [])
    models = [load_checkpoint(p) for p in ckpts]
    ds = load_dataset(s["input"])
    tcfg, vae_fractions = None, None
    if Method.VAE in methods:
        if s["train_vae"]:
            _, tcfg = _vae_configs({**s, "latent": 1}, ds.channels)
        elif models and "fractions" not in s.get("_explicit", ()):
            # without an explicit grid the VAE rows follow the supplied checkpoints
            vae_fractions = [m.config.kept_fraction for m in sorted(models, key=lambda m: m.config.latent_dim)]
        for m in models:
            if m.config.in_channels != ds.channels:
                raise UsageError(f"checkpoint expects {m.config.in_channels} channels, dataset has {ds.channels}")
    crop = models[0].config.crop_len if models else s["crop_len"]
    results = bench.run_compression_benchmark(
        ds, methods, fractions, wavelet_spec=spec, vae_models=models, train_config=tcfg,
        vae_fractions=vae_fractions, crop_len=crop, threads=s["threads"],
    )
    out.mkdir(parents=True, exist_ok=True)
    report.emit_report(results, out / "bench.csv", out / "bench.svg" if s["svg"] else None)
    report.write_text(out / "bench_table.txt", report.format_table(results))


def cmd_noise(s, out: Path):
    _need(s, "input")
    _check_inputs(s["input"])
    if not s["ratio"] >= 0:
        raise UsageError("--ratio must be non-negative")
    ds = load_dataset(s["input"])
    vcfg, tcfg = _vae_configs(s, ds.channels)
    results = bench.run_noise_experiment(ds, NoiseSpec(s["ratio"], component_seed(s["seed"], "noise")), vcfg, tcfg,
                                         s["test_fraction"])
    out.mkdir(parents=True, exist_ok=True)
    report.write_text(out / "noise.csv", report.results_csv(results))


def cmd_anomaly(s, out: Path):
    _need(s, "input")
    _check_inputs(s["input"], s["checkpoint"])
    spec = _wavelet_spec(s)
    split = (s["train_fraction"], s["val_fraction"])
    if not (0 < split[0] and 0 < split[1] and sum(split) < 1):
        raise UsageError("train and validation fractions must be positive and leave a test share")
    ds = load_dataset(s["input"])
    params = load_checkpoint(s["checkpoint"]) if s["checkpoint"] else None
    vcfg, tcfg = _vae_configs(s, ds.channels)
    rep = bench.run_anomaly_experiment(ds, params.config if params else vcfg, tcfg, spec, split,
                                       component_seed(s["seed"], "anomaly"), params=params)
    out.mkdir(parents=True, exist_ok=True)
    report.write_text(out / "confusion.csv", report.confusion_csv(rep.matrices()))
    report.write_text(out / "thresholds.json", json.dumps(
        {"VAE": rep.vae_threshold, "WaveletGlobal": rep.wavelet_threshold}, indent=1) + "\n")


HANDLERS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "wavelet": cmd_wavelet, "fpca": cmd_fpca,
    "vae-train": cmd_vae_train, "vae-eval": cmd_vae_eval, "bench": cmd_bench, "noise": cmd_noise,
    "anomaly": cmd_anomaly,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: usage errors exit 2, --help exits 0
        return int(exc.code or 0)
    command = ns.command
    verbose = ns.verbose
    del ns.command, ns.verbose
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
    try:
        s = resolve_settings(command, ns)
        s["threads"] = _threads(s["threads"])
        HANDLERS[command](s, Path(s["out"]))
    except UsageError as exc:
        print(f"tscodec {command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any runtime failure: one line, exit 1
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"tscodec {command}: error: {msg}", file=sys.stderr)
        if verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
