"""Reconstruction-error anomaly detection.

A VAE trained only on Normal records reconstructs anomalous morphology
(inverted or widened QRS, flattened T) poorly. The threshold on the error is
chosen on a validation split to maximise balanced accuracy and then applied
to a held-out test split. A global-mask wavelet coder at the same budget
is the baseline.
"""

from tscodec.bench import run_anomaly_experiment
from tscodec.data import SyntheticConfig, generate_synthetic, standardize
from tscodec.neural import TrainConfig, VaeConfig
from tscodec.wavelet import WaveletSpec

ds, _ = standardize(generate_synthetic(SyntheticConfig(count=1000, channels=1, length=1000, anomaly_fraction=0.3, seed=0)))
rep = run_anomaly_experiment(ds, VaeConfig(latent_dim=16), TrainConfig(epochs=60), WaveletSpec())

for name, cm in rep.matrices().items():
    rates = cm.rates()
    print(f"{name:14s} balanced accuracy {cm.balanced_accuracy:.3f}  "
          f"Normal flagged {rates['Normal'][0]:.0f}%  Anomaly flagged {rates['Anomaly'][0]:.0f}%")
print(f"thresholds: VAE {rep.vae_threshold:.4f}, wavelet {rep.wavelet_threshold:.4f}")
