"""PCA of the gallery centroid cloud.

The covariance is accumulated in double precision in a single pass over row
chunks, merging per-chunk means and scatter matrices (Chan et al.), then
diagonalized with a dense symmetric eigensolver.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .errors import DomainError, InsufficientData, ZeroVariance
from .store import EmbeddingMatrix, as_matrix, load_embeddings, save_embeddings

ENERGY_KNEES = (0.5, 0.9, 0.95, 0.99)
_CHUNK = 1 << 14


@dataclasses.dataclass(frozen=True)
class PcaModel:
    dim: int
    mean: np.ndarray
    eigvecs: np.ndarray  # columns u_k, descending eigenvalue
    eigvals: np.ndarray
    sigmas: np.ndarray
    centered: bool = True
    count: int = 0

    @classmethod
    def from_spectrum(cls, eigvecs, eigvals, mean=None, centered=True):
        """Build a model directly from an orthonormal basis and eigenvalues."""
        eigvecs = np.asarray(eigvecs, dtype=np.float64)
        eigvals = np.clip(np.asarray(eigvals, dtype=np.float64), 0.0, None)
        order = np.argsort(-eigvals, kind="stable")
        d = eigvecs.shape[0]
        mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=np.float64)
        return cls(d, mean, eigvecs[:, order], eigvals[order], np.sqrt(eigvals[order]), centered)

    @property
    def total_variance(self):
        return float(self.eigvals.sum())

    def covariance(self):
        return (self.eigvecs * self.eigvals) @ self.eigvecs.T


def _scatter_pass(data, centered):
    """Return (n, mean, scatter) accumulated chunk by chunk in float64."""
    n = 0
    mean = np.zeros(data.shape[1])
    scatter = np.zeros((data.shape[1], data.shape[1]))
    for s in range(0, data.shape[0], _CHUNK):
        x = data[s:s + _CHUNK].astype(np.float64)
        m = x.shape[0]
        if not centered:
            scatter += x.T @ x
            n += m
            continue
        mu = x.mean(axis=0)
        xc = x - mu
        chunk_scatter = xc.T @ xc
        delta = mu - mean
        tot = n + m
        scatter += chunk_scatter + np.outer(delta, delta) * (n * m / tot)
        mean += delta * (m / tot)
        n = tot
    return n, mean, scatter


def fit_pca(gallery, centered=True):
    """Eigen-decomposition of the centroid covariance.

    ``centered=False`` decomposes the second-moment matrix about the origin
    instead. The covariance uses the ``n - 1`` (sample) normalization when
    centered and ``n`` otherwise.
    """
    m = as_matrix(gallery)
    if m.count < 2:
        raise InsufficientData(f"PCA needs at least 2 rows (got {m.count})")
    n, mean, scatter = _scatter_pass(m.data, centered)
    cov = scatter / (n - 1 if centered else n)
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    vals = np.where(vals < 0.0, 0.0, vals)
    # deterministic sign: largest-magnitude entry of each eigenvector positive
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    vecs = vecs * signs
    return PcaModel(
        dim=m.dim,
        mean=mean if centered else np.zeros(m.dim),
        eigvecs=vecs,
        eigvals=vals,
        sigmas=np.sqrt(vals),
        centered=centered,
        count=n,
    )


def _total(model):
    tot = float(np.sum(model.eigvals))
    if not tot > 0.0:
        raise ZeroVariance("spectrum has zero total variance")
    return tot


def principal_energy(model, k):
    """Fraction of total variance captured by the top ``k`` components."""
    if int(k) != k or not 1 <= k <= model.dim:
        raise DomainError(f"k must be an integer in [1, {model.dim}] (got {k})")
    tot = _total(model)
    if k == model.dim:
        return 1.0
    return float(np.sum(model.eigvals[:k])) / tot


def energy_curve(model):
    tot = _total(model)
    curve = np.cumsum(model.eigvals) / tot
    curve[-1] = 1.0
    return curve


def effective_dim(model, energy_threshold=0.95):
    """Smallest k with E(k) >= threshold (a 1e-12 slack absorbs cumsum round-off)."""
    if not 0.0 < energy_threshold <= 1.0:
        raise DomainError(f"energy threshold must lie in (0, 1] (got {energy_threshold})")
    curve = energy_curve(model)
    return int(np.argmax(curve >= energy_threshold - 1e-12)) + 1


def effective_rank(model, method="participation"):
    """Effective rank of the spectrum.

    ``participation``: (sum lambda)^2 / sum lambda^2.
    ``entropy``: exp of the Shannon entropy of the normalized spectrum.
    """
    tot = _total(model)
    lam = model.eigvals
    if method == "participation":
        return tot * tot / float(np.sum(lam * lam))
    if method == "entropy":
        p = lam[lam > 0] / tot
        return float(np.exp(-np.sum(p * np.log(p))))
    raise ValueError(f"unknown effective-rank method {method!r}")


def spectrum_summary(model, rank_method="participation"):
    return {
        "dim": model.dim,
        "count": model.count,
        "centered": model.centered,
        "eigvals": [float(v) for v in model.eigvals],
        "energy_knees": {str(t): effective_dim(model, t) for t in ENERGY_KNEES},
        "effective_rank": effective_rank(model, rank_method),
        "effective_rank_method": rank_method,
    }


def save_pca(model, prefix, rank_method="participation"):
    """Write mean and eigenvectors as BIPE files plus the spectrum JSON."""
    prefix = str(prefix)
    paths = [prefix + ".mean.bipe", prefix + ".eigvecs.bipe", prefix + ".spectrum.json"]
    save_embeddings(EmbeddingMatrix(model.mean[None, :], validate=False), paths[0],
                    source="bipkit.pca")
    save_embeddings(EmbeddingMatrix(model.eigvecs.T, validate=False), paths[1],
                    source="bipkit.pca")
    doc = spectrum_summary(model, rank_method)
    Path(paths[2]).write_text(json.dumps(doc, indent=1, sort_keys=True))
    return paths


def load_pca(prefix):
    prefix = str(prefix)
    mean = load_embeddings(prefix + ".mean.bipe", validate=False).rows64()[0]
    vecs = load_embeddings(prefix + ".eigvecs.bipe", validate=False).rows64().T
    doc = json.loads(Path(prefix + ".spectrum.json").read_text())
    vals = np.asarray(doc["eigvals"], dtype=np.float64)
    return PcaModel(len(vals), mean, vecs, vals, np.sqrt(vals), doc.get("centered", True),
                    doc.get("count", 0))
