"""Verification protocols at embedding level.

Real identities get a noisy second embedding for R-R genuine pairs. Virtual
identities are provisioned against the real ones, so every R-V pair is an
impostor pair that sits below tau by construction.
"""

import numpy as np

from bipkit.allocator import AllocConfig, provision
from bipkit.metrics import PairList, evaluate_pairs
from bipkit.pca import fit_pca
from bipkit.synth import SynthGalleryConfig, sample_vmf_mixture

real = sample_vmf_mixture(SynthGalleryConfig(64, 20, 30, 20.0, seed=5))
R = real.centroids.data
virtual, _ = provision(real, fit_pca(real), AllocConfig(tau=0.391, seed=5), 300)
V = virtual.embeddings.data

rng = np.random.default_rng(5)
probe = R + 0.03 * rng.standard_normal(R.shape).astype(np.float32)
probe /= np.linalg.norm(probe, axis=1, keepdims=True)

m = R.shape[0]
gen = rng.random(m) < 0.5
b = np.where(gen, np.arange(m), rng.permutation(m))
rr = PairList(np.arange(m), b, gen & (b == np.arange(m)), np.arange(m) % 10)
rep = evaluate_pairs(R, probe, rr, tar=0.95)
print(f"R-R ten-fold: accuracy {rep.accuracy:.2f}%  FAR {rep.far:.2f}%  mean theta {rep.threshold_used:.3f}")

a = rng.integers(0, m, 5000)
c = rng.integers(0, V.shape[0], 5000)
rv = PairList(a, c, np.zeros(5000, bool))
print(f"R-V at tau=0.391: FAR {evaluate_pairs(R, V, rv, threshold=0.391, protocol='R-V').far:.2f}%")
