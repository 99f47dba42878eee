"""Rate-distortion sweep on 12-channel synthetic records.

Wavelet selection, FPCA and the VAE compared at the same kept fractions.
VAE budgets are trained in-run on a training split; every method is scored
on the held-out records. The table and an SVG chart land in ./demo_out.
"""

from pathlib import Path

from tscodec import report
from tscodec.bench import run_compression_benchmark
from tscodec.data import SyntheticConfig, generate_synthetic, standardize
from tscodec.neural import TrainConfig, split_indices

ds, _ = standardize(generate_synthetic(SyntheticConfig(count=384, channels=12, length=1000, seed=4)))
tr, te = split_indices(len(ds), 0.25, 0)
fit, test = ds.subset(tr, "train"), ds.subset(te, "synthetic-12ch")

results = run_compression_benchmark(
    test, ["global", "oracle", "fpca", "vae"], [0.005, 0.02],
    train_config=TrainConfig(epochs=40), fit_dataset=fit,
)
out = Path("demo_out")
report.emit_report(results, out / "sweep.csv", out / "sweep.svg")
print(report.format_table(results))
print(f"wrote {out / 'sweep.csv'} and {out / 'sweep.svg'}")
