"""Wavelet compression of a synthetic ECG-like record.

Decompose one record with db4, keep a small share of coefficients with both
selection rules, and print how the error falls as the budget grows. The
global rule uses one mask for the whole dataset (cheap to store); the oracle
rule keeps each record's own largest coefficients and is a best case.
"""

from tscodec.data import SyntheticConfig, generate_synthetic, standardize
from tscodec.wavelet import WaveletSpec, coefficients_for_fraction, compress_reconstruct, dwt_forward, energy_profile

ds, _ = standardize(generate_synthetic(SyntheticConfig(count=64, channels=1, length=1000, seed=1)))
spec = WaveletSpec("db4")
record = ds[0]

tree = dwt_forward(record, spec)
print(f"{record.length} samples -> {tree.size} coefficients over {tree.levels} levels")
print("band lengths (approx first):", tree.band_lengths())

profile = energy_profile(ds, spec)  # mean |coefficient| per position, over the dataset
print(f"\n{'kept':>7} {'global mse':>11} {'oracle mse':>11}")
for fraction in (0.005, 0.01, 0.02, 0.06, 0.125, 0.33):
    n = coefficients_for_fraction(fraction, tree.size)
    g = compress_reconstruct(record, spec, n, "global", profile)[1].mse
    o = compress_reconstruct(record, spec, n, "oracle")[1].mse
    print(f"{100 * n / tree.size:6.2f}% {g:11.5f} {o:11.5f}")
