"""How additive noise affects a VAE trained on clean or on noisy data.

Three regimes on one train/test split: clean train and clean test, clean
train and noisy test, noisy train and noisy test. Every error is measured
against the clean test signal.

The CN/CC ratio depends on how far training has gone. A better-fitted
clean model lowers CC faster than CN, so the ratio grows with epochs.
"""

from tscodec.bench import run_noise_experiment
from tscodec.data import NoiseSpec, SyntheticConfig, generate_synthetic, standardize
from tscodec.neural import TrainConfig, VaeConfig

ds, _ = standardize(generate_synthetic(SyntheticConfig(count=512, channels=1, length=1000, seed=5)))
results = run_noise_experiment(ds, NoiseSpec(variance_ratio=0.2, seed=5), VaeConfig(latent_dim=16), TrainConfig(epochs=60))
for r in results:
    print(f"{r.regime.value:22s} mse {r.mse:.4f}")
cc, cn, _ = (r.mse for r in results)
print(f"noisy/clean test ratio for the clean-trained model: {cn / cc:.3f}")
