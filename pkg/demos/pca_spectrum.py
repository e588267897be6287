"""Spectrum of a clustered gallery.

Fits the centroid covariance, then reports how many principal directions
carry 50/90/95/99% of the variance and the participation ratio.
"""

import numpy as np

from bipkit.pca import effective_rank, energy_curve, fit_pca, spectrum_summary
from bipkit.store import EmbeddingMatrix
from bipkit.synth import SynthGalleryConfig, sample_vmf_mixture

rng = np.random.default_rng(0)

# Clusters confined to a 24-dimensional subspace of d=96, plus a little isotropic noise.
basis, _ = np.linalg.qr(rng.standard_normal((96, 24)))
low = sample_vmf_mixture(SynthGalleryConfig(24, 40, 50, 8.0, seed=3)).centroids.data
x = low.astype(np.float64) @ basis.T + 0.02 * rng.standard_normal((low.shape[0], 96))
x /= np.linalg.norm(x, axis=1, keepdims=True)

model = fit_pca(EmbeddingMatrix(x.astype(np.float32)))
summary = spectrum_summary(model)
print("energy knees:", summary["energy_knees"])
print("participation ratio:", round(effective_rank(model), 2))
print("entropy rank:", round(effective_rank(model, "entropy"), 2))

curve = energy_curve(model)
for k in (1, 8, 16, 24, 32):
    print(f"  E({k:2d}) = {curve[k - 1]:.4f}")
