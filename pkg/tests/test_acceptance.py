"""Acceptance criteria, one test each, at their stated tolerances.

Each test prints a ``criterion N PASS|FAIL`` line; the lines are repeated in
the pytest terminal summary.
"""

import csv
import math
import os
import time
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from tscodec import cli, report
from tscodec.bench import run_anomaly_experiment, run_compression_benchmark, run_noise_experiment
from tscodec.data import Dataset, NoiseSpec, Record, SyntheticConfig, generate_synthetic, load_dataset, standardize
from tscodec.neural import layers
from tscodec.neural.gradcheck import gradient_check
from tscodec.neural.train import TrainConfig, mean_predictor_mse, split_indices, train
from tscodec.neural.vae import GaussianLatent, VaeConfig, VaeParams, kl_divergence
from tscodec.results import Method, REFERENCE_TABLE, Regime
from tscodec.wavelet import (
    Family,
    WaveletSpec,
    coefficients_for_fraction,
    compress_reconstruct,
    dwt_forward,
    dwt_inverse,
    energy_profile,
    max_level,
)


def _synthetic(count, channels, seed, **kw):
    ds, _ = standardize(generate_synthetic(SyntheticConfig(count=count, channels=channels, length=1000, seed=seed, **kw)))
    return ds


def test_criterion_01_wavelet_round_trip(verdict):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst_rec, worst_par, combos = 0.0, 0.0, 0
    for family in Family:
        length = 512
        for level in range(1, max_level(length // 2 + 1, family) + 1):
            spec = WaveletSpec(family, level)
            combos += 1
            for i in range(100):
                ch = int(rng.integers(1, 4))
                n = int(rng.integers(length // 2 + 1, length + 1))  # exercises zero padding too
                x = rng.standard_normal((ch, n)) * rng.uniform(0.1, 10)
                tree = dwt_forward(Record(f"r{i}", x, 100.0), spec)
                back = dwt_inverse(tree).samples
                worst_rec = max(worst_rec, float(np.max(np.abs(back - x))))
                e_x = float(np.sum(x * x))
                worst_par = max(worst_par, abs(float(np.sum(tree.flat() ** 2)) - e_x) / e_x)
    elapsed = time.perf_counter() - start
    ok = worst_rec < 1e-9 and worst_par < 1e-10 and elapsed < 10
    verdict(1, "wavelet perfect reconstruction and Parseval", ok,
            f"{combos} family/level combinations, max abs err {worst_rec:.1e}, "
            f"Parseval rel {worst_par:.1e}, {elapsed:.1f} s")


def test_criterion_02_oracle_dominance(verdict):
    ds = _synthetic(50, 1, 202)
    spec = WaveletSpec()
    profile = energy_profile(ds, spec)
    total = profile.mean_abs.size
    worst = -math.inf
    for pct in (1, 2, 5, 10, 33):
        n = coefficients_for_fraction(pct / 100, total)
        for r in ds:
            g = compress_reconstruct(r, spec, n, "global", profile)[1].mse
            o = compress_reconstruct(r, spec, n, "oracle")[1].mse
            worst = max(worst, o - g)
    verdict(2, "oracle selection never worse than global", worst <= 1e-12,
            f"50 records x 5 budgets, max(oracle - global) = {worst:.2e}")


def test_criterion_03_autodiff(verdict, monkeypatch):
    start = time.perf_counter()
    rng = np.random.default_rng(303)
    adj = 0.0
    for _ in range(200):
        b, cin, cout = (int(v) for v in rng.integers(1, 5, 3))
        k = int(rng.choice([1, 3, 5, 7]))
        stride = int(rng.integers(1, 4))
        length = int(rng.integers(8, 64))
        pad = (k - 1) // 2
        x = rng.standard_normal((b, cin, length))
        w = rng.standard_normal((cout, cin, k))
        fx = layers.conv1d_forward(x, w, stride=stride, padding=pad)
        y = rng.standard_normal(fx.shape)
        lhs = float(np.sum(fx * y))
        rhs = float(np.sum(x * layers.transposed_conv1d_forward(y, w, stride=stride, padding=pad, out_len=length)))
        adj = max(adj, abs(lhs - rhs) / max(1.0, abs(lhs)))

    cfg = VaeConfig()  # default architecture, beta 1
    p = VaeParams.init(cfg, np.random.default_rng(1))
    x = np.random.default_rng(2).standard_normal((2, cfg.in_channels, cfg.crop_len))
    grad_err = gradient_check(p, x, n_checks=300, step=1e-4)

    with monkeypatch.context() as m:
        m.setattr(layers, "leaky_backward", lambda g, h, slope: g * (h > 0))  # drops the leaky slope
        mutated = gradient_check(p, x, n_checks=150, step=1e-4)
    elapsed = time.perf_counter() - start
    ok = adj < 1e-10 and grad_err < 1e-4 and mutated > 1e-2 and elapsed < 60
    verdict(3, "conv adjoint, ELBO gradient check, mutation detected", ok,
            f"adjoint {adj:.1e}, grad rel err {grad_err:.1e}, mutated {mutated:.1e}, {elapsed:.1f} s")


def test_criterion_04_kl(verdict):
    one = kl_divergence(GaussianLatent(np.array([[1.0]]), np.array([[0.0]])))
    rng = np.random.default_rng(404)
    mu = rng.normal(0, 3, (10_000, 1))
    lv = rng.uniform(-10, 10, (10_000, 1))
    per = [kl_divergence(GaussianLatent(mu[i : i + 1], lv[i : i + 1])) for i in range(10_000)]
    ok = abs(one - 0.5) < 1e-12 and min(per) >= 0
    verdict(4, "KL closed form and non-negativity", ok, f"KL(1,0) = {one!r}, min over 1e4 = {min(per):.2e}")


def test_criterion_05_training_sanity(verdict):
    ds = _synthetic(512, 1, 505)
    vcfg = VaeConfig(latent_dim=16)
    tcfg = TrainConfig(epochs=30, seed=5)
    start = time.perf_counter()
    p1, h1 = train(ds, vcfg, tcfg)
    elapsed = time.perf_counter() - start
    p2, h2 = train(ds, vcfg, tcfg)
    tr, va = split_indices(len(ds), tcfg.validation_fraction, tcfg.seed)
    baseline = mean_predictor_mse(ds.subset(tr), ds.subset(va))
    final = h1[-1]["val_recon"]
    same = h1 == h2 and all(np.array_equal(p1.tensors[k], p2.tensors[k]) for k in p1.tensors)
    ok = final < 0.5 * baseline and same and elapsed < 15 * 60
    verdict(5, "VAE training beats half the mean predictor, bit-exact rerun", ok,
            f"val recon {final:.4f} vs mean predictor {baseline:.4f}, rerun identical {same}, {elapsed:.0f} s")


def test_criterion_06_vae_beats_global(verdict):
    ds = _synthetic(512, 12, 606)
    tr, te = split_indices(len(ds), 0.25, 6)
    fit, test = ds.subset(tr, "train"), ds.subset(te, "test")
    fractions = [0.005, 0.01, 0.02]
    res = run_compression_benchmark(test, [Method.VAE, Method.WAVELET_GLOBAL], fractions,
                                    train_config=TrainConfig(epochs=40, seed=6), fit_dataset=fit)
    vae = [r for r in res if r.method is Method.VAE]
    glob = [r for r in res if r.method is Method.WAVELET_GLOBAL]
    wins = sum(v.mse < g.mse for v, g in zip(vae, glob))
    detail = ", ".join(f"{100 * v.kept_fraction:.2f}%: VAE {v.mse:.3f} vs global {g.mse:.3f}" for v, g in zip(vae, glob))
    verdict(6, "VAE below wavelet global at kept fractions <= 2% (12 channels)", wins >= 2, f"{wins}/3 wins; {detail}")


def test_criterion_07_noise_robustness(verdict):
    ds = _synthetic(512, 1, 707)
    res = run_noise_experiment(ds, NoiseSpec(0.2, 7), VaeConfig(latent_dim=16), TrainConfig(epochs=30, seed=7))
    by = {r.regime: r for r in res}
    ratio = by[Regime.CLEAN_NOISY].mse / by[Regime.CLEAN_CLEAN].mse
    losses = [h["train_loss"] for h in by[Regime.NOISY_NOISY].train_history]
    finite = all(math.isfinite(v) for v in losses) and math.isfinite(by[Regime.NOISY_NOISY].mse)
    decreasing = losses[-1] < losses[0]
    ok = ratio < 1.5 and by[Regime.CLEAN_NOISY].mse >= by[Regime.CLEAN_CLEAN].mse and finite and decreasing
    verdict(7, "noise robustness at variance ratio 0.2", ok,
            f"CN/CC = {ratio:.3f}, NN mse {by[Regime.NOISY_NOISY].mse:.4f}, "
            f"NN train loss {losses[0]:.3f} -> {losses[-1]:.3f}")


def test_criterion_08_anomaly_detection(verdict):
    ds = _synthetic(1000, 1, 0, anomaly_fraction=0.3)
    rep = run_anomaly_experiment(ds, VaeConfig(latent_dim=16), TrainConfig(epochs=60), WaveletSpec())
    v, w = rep.vae.balanced_accuracy, rep.wavelet.balanced_accuracy
    verdict(8, "anomaly detection balanced accuracy", v > 0.65 and v > w,
            f"VAE {v:.3f} vs wavelet global {w:.3f} on {rep.vae.total} held-out records")


def _cli_pipeline(d: Path):
    def run(*argv):
        code = cli.main([str(a) for a in argv])
        assert code == 0, argv
    run("synth", "--count", 256, "--anomaly-fraction", 0.3, "--seed", 9, "--out", d)
    run("vae-train", "--input", d / "set.tsc", "--epochs", 5, "--seed", 9, "--out", d)
    run("bench", "--input", d / "set.tsc", "--checkpoint", d / "vae_l16.ckpt", "--svg", "--out", d)
    run("anomaly", "--input", d / "set.tsc", "--epochs", 5, "--seed", 9, "--out", d)


def _schema_problems(d: Path):
    problems = []
    with open(d / "bench.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        body = list(reader)
    if tuple(header) != report.RESULTS_HEADER:
        problems.append(f"bench header {header}")
    methods = set()
    for row in body:
        name, method, frac, err, regime = row
        methods.add(method)
        Method(method)
        if not (0 < float(frac) <= 1 and math.isfinite(float(err)) and float(err) >= 0 and regime == ""):
            problems.append(f"bad row {row}")
    rows = [dict(zip(header, r)) for r in body]
    for f in {r["kept_fraction"] for r in rows if r["method"] == "WaveletGlobal"}:
        g = [float(r["mse"]) for r in rows if r["method"] == "WaveletGlobal" and r["kept_fraction"] == f]
        o = [float(r["mse"]) for r in rows if r["method"] == "WaveletOracle" and r["kept_fraction"] == f]
        if o and o[0] > g[0] + 1e-12:
            problems.append(f"oracle above global at {f}")
    root = ET.parse(d / "bench.svg").getroot()
    if root.tag != "{http://www.w3.org/2000/svg}svg":
        problems.append("svg root")
    if len(root.findall("{http://www.w3.org/2000/svg}polyline")) != len(methods):
        problems.append("polyline count")
    with open(d / "confusion.csv", newline="") as fh:
        conf = list(csv.DictReader(fh))
    if [r["detector"] for r in conf] != ["VAE", "WaveletGlobal"]:
        problems.append("confusion detectors")
    for r in conf:
        if not 0 <= float(r["balanced_accuracy"]) <= 1 or min(int(r[k]) for k in ("tp", "fp", "tn", "fn")) < 0:
            problems.append(f"confusion row {r}")
    return problems, sorted(methods)


def test_criterion_09_cli_end_to_end(verdict, tmp_path):
    _cli_pipeline(tmp_path / "a")
    _cli_pipeline(tmp_path / "b")
    problems, methods = _schema_problems(tmp_path / "a")
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    differ = [n for n in files if (tmp_path / "a" / n).read_bytes() != (tmp_path / "b" / n).read_bytes()]
    ok = not problems and not differ and sorted(p.name for p in (tmp_path / "b").iterdir()) == files
    verdict(9, "CLI synth -> vae-train -> bench -> anomaly", ok,
            f"{len(files)} artifacts, methods {methods}, schema problems {problems or 'none'}, "
            f"differing on rerun {differ or 'none'}")


@pytest.mark.skipif(not os.environ.get("TSC_PTBXL_PATH"), reason="set TSC_PTBXL_PATH to a preprocessed 12-lead dataset")
def test_criterion_10_at_scale(verdict, tmp_path):
    ds = load_dataset(os.environ["TSC_PTBXL_PATH"])
    epochs = int(os.environ.get("TSC_PTBXL_EPOCHS", "30"))
    tr, te = split_indices(len(ds), 0.2, 10)
    fit, test = ds.subset(tr, "train"), Dataset(ds.subset(te).records, ds.name)
    res = run_compression_benchmark(test, [Method.VAE, Method.WAVELET_GLOBAL, Method.WAVELET_ORACLE],
                                    [0.005, 0.02], train_config=TrainConfig(epochs=epochs), fit_dataset=fit)
    report.emit_report(res, tmp_path / "table1.csv")
    print(report.format_table(res))
    vae = [r.mse for r in res if r.method is Method.VAE]
    glob = [r.mse for r in res if r.method is Method.WAVELET_GLOBAL]
    ref = REFERENCE_TABLE["PTB"]
    verdict(10, "at-scale VAE below wavelet global at 0.5% and 2%", all(v < g for v, g in zip(vae, glob)),
            f"VAE {vae} vs global {glob}; reference VAE {ref[Method.VAE]} vs global {ref[Method.WAVELET_GLOBAL]}")
