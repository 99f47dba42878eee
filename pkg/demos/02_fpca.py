"""Functional PCA as a linear compression baseline.

Fit principal curves on part of a dataset and reconstruct held-out records
from their first k scores. With N records and D samples per record the fit
uses the N x N Gram matrix whenever N < D.
"""

import numpy as np

from tscodec.data import SyntheticConfig, generate_synthetic, standardize
from tscodec.fpca import fpca_fit, fpca_project_reconstruct

ds, _ = standardize(generate_synthetic(SyntheticConfig(count=200, channels=1, length=1000, seed=2)))
fit, held_out = ds.subset(range(150)), ds.subset(range(150, 200))

basis = fpca_fit(fit, 60)
explained = np.cumsum(basis.eigenvalues) / basis.total_variance
print("variance explained by 1, 5, 20, 60 components:",
      ", ".join(f"{explained[k - 1]:.3f}" for k in (1, 5, 20, 60)))

for k in (1, 5, 10, 20, 60):
    b = basis.truncate(k)
    errs = [np.mean((fpca_project_reconstruct(b, r)[1].samples - r.samples) ** 2) for r in held_out]
    print(f"k={k:3d} ({100 * k / ds.length:4.1f}% kept): held-out mse {np.mean(errs):.4f}")
