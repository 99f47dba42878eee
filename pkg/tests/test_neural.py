import importlib
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tscodec.data import Dataset, Record, SyntheticConfig, generate_synthetic, standardize
from tscodec.neural import layers
from tscodec.neural.gradcheck import gradient_check
from tscodec.neural.optim import AdamHyper, AdamState, TrainingError, adam_step
from tscodec.neural.train import TrainConfig, evaluate_record, evaluate_dataset, train, untile
from tscodec.neural.vae import (
    LOGVAR_CLAMP,
    CheckpointError,
    GaussianLatent,
    VaeConfig,
    VaeParams,
    decode,
    elbo_loss,
    encode,
    kl_divergence,
    load_checkpoint,
    reparameterize,
    save_checkpoint,
)

# the package re-exports the ``train`` function under the submodule's name
train_mod = importlib.import_module("tscodec.neural.train")
RNG = np.random.default_rng


# --- layers ------------------------------------------------------------------------


def test_conv_hand_example():
    out = layers.conv1d_forward(np.array([[[1.0, 2, 3, 4]]]), np.array([[[1.0, 0, -1]]]))
    np.testing.assert_array_equal(out, [[[-2.0, -2.0]]])


def test_unit_kernels_are_identity():
    x = RNG(0).standard_normal((2, 3, 9))
    eye = np.eye(3)[:, :, None]
    np.testing.assert_array_equal(layers.conv1d_forward(x, eye), x)
    np.testing.assert_array_equal(layers.transposed_conv1d_forward(x, eye), x)


def test_conv_shapes_and_errors():
    x = np.zeros((2, 3, 16))
    w = np.zeros((5, 3, 7))
    assert layers.conv1d_forward(x, w, stride=2, padding=3).shape == (2, 5, 8)
    assert layers.conv_out_len(16, 7, 2, 3) == (16 + 6 - 7) // 2 + 1
    with pytest.raises(layers.ShapeError):
        layers.conv1d_forward(x, np.zeros((5, 4, 7)))
    with pytest.raises(layers.ShapeError):
        layers.conv1d_forward(np.zeros((3, 16)), w)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.sampled_from([1, 3, 5, 7]),
       st.integers(1, 3), st.integers(8, 40), st.integers(0, 9999))
def test_adjoint_identity(b, cin, cout, k, stride, length, seed):
    rng = RNG(seed)
    pad = (k - 1) // 2
    x = rng.standard_normal((b, cin, length))
    w = rng.standard_normal((cout, cin, k))
    y_shape = layers.conv1d_forward(x, w, stride=stride, padding=pad).shape
    y = rng.standard_normal(y_shape)
    lhs = np.sum(layers.conv1d_forward(x, w, stride=stride, padding=pad) * y)
    rhs = np.sum(x * layers.transposed_conv1d_forward(y, w, stride=stride, padding=pad, out_len=length))
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def _fd(f, arr, step=1e-4):
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        o = flat[i]
        flat[i] = o + step
        up = f()
        flat[i] = o - step
        dn = f()
        flat[i] = o
        g.reshape(-1)[i] = (up - dn) / (2 * step)
    return g


def _rel(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-7))


def test_conv_backward_finite_differences():
    rng = RNG(1)
    x = rng.standard_normal((2, 3, 16))
    w = rng.standard_normal((4, 3, 5))
    b = rng.standard_normal(4)
    r = rng.standard_normal(layers.conv1d_forward(x, w, b, 2, 2).shape)
    f = lambda: np.sum(r * layers.conv1d_forward(x, w, b, 2, 2))
    gx, gw, gb = layers.conv1d_backward(r, x, w, 2, 2)
    assert _rel(gx, _fd(f, x)) < 1e-4
    assert _rel(gw, _fd(f, w)) < 1e-4
    assert _rel(gb, _fd(f, b)) < 1e-4


def test_transposed_conv_backward_finite_differences():
    rng = RNG(2)
    y = rng.standard_normal((2, 4, 8))
    w = rng.standard_normal((4, 3, 5))
    b = rng.standard_normal(3)
    out = layers.transposed_conv1d_forward(y, w, b, 2, 2, out_len=16)
    r = rng.standard_normal(out.shape)
    f = lambda: np.sum(r * layers.transposed_conv1d_forward(y, w, b, 2, 2, out_len=16))
    gy, gw, gb = layers.transposed_conv1d_backward(r, y, w, 2, 2)
    assert _rel(gy, _fd(f, y)) < 1e-4
    assert _rel(gw, _fd(f, w)) < 1e-4
    assert _rel(gb, _fd(f, b)) < 1e-4


def test_encoder_decoder_lengths_compose():
    for crop in (64, 256, 1000):
        cfg = VaeConfig(crop_len=crop)
        p = VaeParams.init(cfg, RNG(0))
        x = RNG(1).standard_normal((2, 1, crop))
        assert decode(p, encode(p, x).mu).shape == x.shape


# --- VAE pieces ----------------------------------------------------------------------


def test_zero_params_give_zero_latent_and_output():
    cfg = VaeConfig(latent_dim=16)
    p = VaeParams.zeros(cfg)
    lat = encode(p, np.zeros((3, 1, 256)))
    assert np.all(lat.mu == 0) and np.all(lat.logvar == 0)
    assert np.all(decode(p, RNG(0).standard_normal((3, 16))) == 0)


def test_encode_shapes_and_determinism():
    cfg = VaeConfig(in_channels=2, latent_dim=16)
    p = VaeParams.init(cfg, RNG(3))
    row = RNG(4).standard_normal((1, 2, 256))
    lat = encode(p, np.concatenate([row, row, row, row]))
    assert lat.mu.shape == (4, 16) and lat.logvar.shape == (4, 16)
    np.testing.assert_array_equal(lat.mu[0], lat.mu[3])
    z = RNG(5).standard_normal((4, 16))
    assert decode(p, z).tobytes() == decode(p, z).tobytes()
    with pytest.raises(layers.ShapeError):
        encode(p, np.zeros((1, 1, 256)))


def test_logvar_clamped():
    cfg = VaeConfig(latent_dim=4)
    p = VaeParams.init(cfg, RNG(0))
    p.tensors["logvar.b"][:] = 1e4
    assert np.all(encode(p, np.zeros((1, 1, 256))).logvar == LOGVAR_CLAMP)


def test_reparameterize():
    mu = np.array([[0.5, -1.0]])
    lv = np.array([[0.3, -0.7]])
    lat = GaussianLatent(mu, lv)
    np.testing.assert_array_equal(reparameterize(lat, np.zeros((1, 2))), mu)
    eps = RNG(0).standard_normal((1, 2))
    np.testing.assert_array_equal(reparameterize(GaussianLatent(np.zeros((1, 2)), np.zeros((1, 2))), eps), eps)
    n = 100_000
    eps = RNG(1).standard_normal((n, 2))
    z = reparameterize(GaussianLatent(np.repeat(mu, n, 0), np.repeat(lv, n, 0)), eps)
    sigma = np.exp(lv[0] / 2)
    assert np.all(np.abs(z.mean(axis=0) - mu[0]) < 4 * sigma / math.sqrt(n))


def test_kl_values():
    z = np.zeros((1, 3))
    assert kl_divergence(GaussianLatent(z, z)) == 0.0
    assert abs(kl_divergence(GaussianLatent(np.array([[1.0]]), np.array([[0.0]]))) - 0.5) < 1e-12
    v = kl_divergence(GaussianLatent(np.array([[0.0]]), np.array([[math.log(4)]])))
    assert v == pytest.approx(0.5 * (4 - 1 - math.log(4)), abs=1e-12)
    assert v == pytest.approx(0.80685, abs=1e-5)


@given(st.integers(0, 10_000))
def test_kl_non_negative(seed):
    rng = RNG(seed)
    lat = GaussianLatent(rng.normal(0, 3, (5, 8)), np.clip(rng.normal(0, 4, (5, 8)), -10, 10))
    assert kl_divergence(lat) >= 0


def test_elbo_examples():
    x = RNG(0).standard_normal((2, 1, 8))
    z = np.zeros((2, 4))
    assert elbo_loss(x, x, GaussianLatent(z, z), 1.0) == (0.0, 0.0, 0.0)
    lat = GaussianLatent(np.ones((1, 1)), np.zeros((1, 1)))
    total, recon, kl = elbo_loss(np.array([[[0.0]]]), np.array([[[1.0]]]), lat, 1.0)
    assert (total, recon, kl) == pytest.approx((1.5, 1.0, 0.5), abs=1e-12)
    total0, recon0, _ = elbo_loss(np.array([[[0.0]]]), np.array([[[1.0]]]), lat, 0.0)
    assert total0 == recon0
    with pytest.raises(layers.ShapeError):
        elbo_loss(np.zeros((1, 1, 4)), np.zeros((1, 1, 5)), lat, 1.0)


def test_kept_fraction_accounting():
    assert VaeConfig(in_channels=12, latent_dim=15).kept_fraction == pytest.approx(15 / 3072)
    assert round(100 * VaeConfig(in_channels=12, latent_dim=15).kept_fraction, 3) == 0.488


def test_config_validation():
    with pytest.raises(ValueError):
        VaeConfig(kernel_size=4)
    with pytest.raises(ValueError):
        VaeConfig(latent_dim=0)
    with pytest.raises(ValueError):
        VaeConfig(conv_channels=(8, 8))


# --- gradient check ---------------------------------------------------------------------


def _linear_toy():
    cfg = VaeConfig(crop_len=16, conv_channels=(2, 2, 2), kernel_size=3, latent_dim=2, beta=0.0, negative_slope=1.0)
    p = VaeParams.init(cfg, RNG(0))
    x = RNG(1).standard_normal((2, 1, 16))
    return p, x


def test_gradient_check_linear_toy():
    p, x = _linear_toy()
    # with all activations linear and beta 0, the loss is quadratic in each coordinate,
    # so the central difference is exact and any step works
    err = gradient_check(p, x, eps=np.zeros((2, 2)), n_checks=400, step=1e-2)
    assert err < 1e-6


def test_gradient_check_default_config():
    cfg = VaeConfig(crop_len=64)
    p = VaeParams.init(cfg, RNG(2))
    x = RNG(3).standard_normal((2, 1, 64))
    err, skipped, per = gradient_check(p, x, n_checks=300, return_details=True)
    assert err < 1e-4
    assert set(per) == set(cfg.param_shapes())


def test_gradient_check_detects_mutation(monkeypatch):
    cfg = VaeConfig(crop_len=64)
    p = VaeParams.init(cfg, RNG(2))
    x = RNG(3).standard_normal((2, 1, 64))
    # backward pass that forgets the leaky slope on the negative side
    monkeypatch.setattr(layers, "leaky_backward", lambda g, h, slope: g * (h > 0))
    assert gradient_check(p, x, n_checks=150) > 1e-2


# --- optimiser -------------------------------------------------------------------------


def test_adam_zero_grad_is_noop():
    p = {"w": RNG(0).standard_normal(5)}
    new, st_ = adam_step(p, {"w": np.zeros(5)}, AdamState())
    np.testing.assert_array_equal(new["w"], p["w"])
    assert st_.t == 1


def test_adam_first_step_magnitude():
    p = {"w": np.zeros(3)}
    g = {"w": np.array([5.0, -0.3, 1e-3])}
    new, _ = adam_step(p, g, AdamState(), AdamHyper(lr=0.01))
    np.testing.assert_allclose(np.abs(new["w"]), 0.01, rtol=1e-4)


def test_adam_quadratic():
    p = {"w": np.array([0.0])}
    st_ = AdamState()
    hyper = AdamHyper(lr=0.05)
    for _ in range(2000):
        p, st_ = adam_step(p, {"w": 2 * (p["w"] - 3)}, st_, hyper)
    assert abs(p["w"][0] - 3) < 1e-3


def test_adam_non_finite_names_parameter():
    with pytest.raises(TrainingError, match="enc2.w"):
        adam_step({"enc2.w": np.zeros(2)}, {"enc2.w": np.array([np.nan, 0])}, AdamState())


# --- checkpoints ------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    cfg = VaeConfig(in_channels=3, crop_len=128, conv_channels=(4, 8, 8), latent_dim=5, beta=0.5)
    p = VaeParams.init(cfg, RNG(0))
    save_checkpoint(p, tmp_path / "m.ckpt")
    q = load_checkpoint(tmp_path / "m.ckpt")
    assert q.config == cfg
    for k in p.tensors:
        assert q.tensors[k].tobytes() == p.tensors[k].tobytes()
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw[:4] == b"VAE1"
    (tmp_path / "bad.ckpt").write_bytes(raw[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "bad2.ckpt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad2.ckpt")


# --- evaluation -------------------------------------------------------------------------


def test_identity_stub_evaluation(monkeypatch):
    cfg = VaeConfig(crop_len=256)
    p = VaeParams.zeros(cfg)
    flat = lambda params, x: GaussianLatent(x.reshape(len(x), -1), np.zeros((len(x), x[0].size)))
    monkeypatch.setattr(train_mod, "encode", flat)
    monkeypatch.setattr(train_mod, "decode", lambda params, z: z.reshape(len(z), 1, -1))
    r = Record("a", RNG(0).standard_normal((1, 1000)), 100.0)
    mse, out = evaluate_record(p, r)
    assert mse == 0.0
    np.testing.assert_allclose(out.samples, r.samples, atol=1e-15)


def test_untile_weights_sum_to_one():
    crops = np.ones((4, 2, 256))
    np.testing.assert_array_equal(untile(crops, [0, 248, 496, 744], 1000), np.ones((2, 1000)))


def test_full_window_evaluation_equals_single_crop():
    cfg = VaeConfig(crop_len=256)
    p = VaeParams.init(cfg, RNG(0))
    x = RNG(1).standard_normal((1, 256))
    mse, out = evaluate_record(p, Record("a", x, 100.0))
    single = np.mean((decode(p, encode(p, x[None]).mu) - x[None]) ** 2)
    assert mse == pytest.approx(single, rel=1e-12)
    with pytest.raises(Exception):
        evaluate_record(p, Record("short", x[:, :100], 100.0))


# --- training ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_data():
    ds, _ = standardize(generate_synthetic(SyntheticConfig(count=24, length=400, seed=5)))
    return ds


def test_train_three_epochs_deterministic(tiny_data):
    vcfg = VaeConfig(crop_len=128, conv_channels=(4, 8, 8), latent_dim=4)
    tcfg = TrainConfig(epochs=3, batch_size=8, seed=3)
    p1, h1 = train(tiny_data, vcfg, tcfg)
    p2, h2 = train(tiny_data, vcfg, tcfg)
    assert len(h1) == 3
    assert all(math.isfinite(e["train_loss"]) and math.isfinite(e["val_loss"]) for e in h1)
    assert h1 == h2
    for k in p1.tensors:
        assert p1.tensors[k].tobytes() == p2.tensors[k].tobytes()
    p3, _ = train(tiny_data, vcfg, TrainConfig(epochs=3, batch_size=8, seed=4))
    assert p3.tensors["enc1.w"].tobytes() != p1.tensors["enc1.w"].tobytes()


def test_train_returns_best_validation_params(tiny_data):
    vcfg = VaeConfig(crop_len=128, conv_channels=(4, 8, 8), latent_dim=4)
    p, h = train(tiny_data, vcfg, TrainConfig(epochs=4, batch_size=8, seed=1, validation_fraction=0.25))
    # the returned model reproduces the best epoch's validation loss
    from tscodec.neural.train import split_indices

    _, va = split_indices(len(tiny_data), 0.25, 1)
    val = tiny_data.subset(va)
    best = min(e["val_recon"] for e in h if e["val_loss"] == min(x["val_loss"] for x in h))
    assert evaluate_dataset(p, val).mean() == pytest.approx(best, rel=1e-12)


def test_train_rejects_short_records():
    ds = Dataset.from_array(RNG(0).standard_normal((4, 1, 280)), 100.0)
    with pytest.raises(Exception, match="too short"):
        train(ds, VaeConfig(crop_len=256), TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        TrainConfig(resample_factor_range=(1.1, 1.2))
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_train_reports_non_finite_loss(tiny_data, monkeypatch):
    vcfg = VaeConfig(crop_len=128, conv_channels=(4, 8, 8), latent_dim=4)

    def bad_forward(params, x, eps, beta=None):
        return (float("nan"), float("nan"), 0.0), {}

    monkeypatch.setattr(train_mod, "forward_loss", bad_forward)
    with pytest.raises(TrainingError, match="epoch 1, batch 1"):
        train(tiny_data, vcfg, TrainConfig(epochs=1, batch_size=8))
