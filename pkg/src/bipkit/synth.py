"""Synthetic galleries, sphere samplers and independent oracles.

Nothing here is used by the allocator itself; these routines generate test
data and cross-check the closed forms in ``geometry``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .errors import BracketFailure, ConfigError, DomainError, GeometricInfeasible
from .geometry import displaced_cosine
from .rng import STREAM_MC, STREAM_PLANT, STREAM_SYNTH, substream
from .store import EmbeddingMatrix, Gallery, as_matrix, count_at_least, row_max_cosine

_SPHERE_CHUNK = 1 << 16
_MC_CHUNK = 1 << 18


@dataclasses.dataclass(frozen=True)
class SynthGalleryConfig:
    dim: int
    n_clusters: int
    per_cluster: int
    concentration: float
    seed: int = 0

    def __post_init__(self):
        for name in ("dim", "n_clusters", "per_cluster"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer (got {v})")
        if self.dim < 2:
            raise ConfigError("dim must be at least 2")
        if not (math.isfinite(self.concentration) and self.concentration > 0):
            raise ConfigError(f"concentration must be finite and > 0 (got {self.concentration})")

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown synth config keys: {sorted(extra)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        return dataclasses.asdict(self)


def _unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _gaussian_directions(rng, n, dim):
    # a Gaussian vector has zero norm with probability zero; redraw anyway
    g = rng.standard_normal((n, dim))
    nrm = np.linalg.norm(g, axis=1)
    bad = nrm < 1e-12
    while np.any(bad):
        g[bad] = rng.standard_normal((int(bad.sum()), dim))
        nrm = np.linalg.norm(g, axis=1)
        bad = nrm < 1e-12
    return g / nrm[:, None]


def sample_uniform_sphere(dim, n, seed, stream=STREAM_SYNTH):
    """``n`` iid uniform points on S^{dim-1}, one substream per 65536 rows."""
    if n < 1:
        raise DomainError(f"n must be >= 1 (got {n})")
    out = np.empty((n, dim), dtype=np.float32)
    for k, s in enumerate(range(0, n, _SPHERE_CHUNK)):
        m = min(_SPHERE_CHUNK, n - s)
        out[s:s + m] = _gaussian_directions(substream(seed, stream + k), m, dim)
    return EmbeddingMatrix(out)


def _wood_w(rng, kappa, dim, n):
    """Cosine-to-mean samples of a vMF(kappa) on S^{dim-1} (Wood, 1994)."""
    d1 = dim - 1.0
    # algebraically equal to (-2k + sqrt(4k^2 + d1^2)) / d1, without cancellation
    b = d1 / (math.sqrt(4.0 * kappa * kappa + d1 * d1) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + d1 * math.log1p(-x0 * x0)
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(16, 2 * (n - filled))
        z = rng.beta(d1 / 2.0, d1 / 2.0, size=m)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.random(m)
        ok = kappa * w + d1 * np.log1p(-x0 * w) - c >= np.log(u)
        take = w[ok][: n - filled]
        out[filled:filled + take.size] = take
        filled += take.size
    return out


def sample_vmf(mean, kappa, n, rng):
    """``n`` draws from the von Mises-Fisher distribution around unit ``mean``."""
    mu = np.asarray(mean, dtype=np.float64)
    mu = mu / np.linalg.norm(mu)
    dim = mu.size
    w = _wood_w(rng, kappa, dim, n)
    v = rng.standard_normal((n, dim))
    v -= np.outer(v @ mu, mu)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    x = w[:, None] * mu[None, :] + np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, None] * v
    return _unit_rows(x)


def sample_vmf_mixture(config, means=None):
    """Clustered gallery: ``n_clusters`` vMF clusters of ``per_cluster`` rows.

    Mean directions are uniform on the sphere unless ``means`` is given.
    Labels read ``c{cluster}_{i}``.
    """
    cfg = config if isinstance(config, SynthGalleryConfig) else SynthGalleryConfig.from_dict(config)
    if means is None:
        means = _gaussian_directions(substream(cfg.seed, STREAM_SYNTH), cfg.n_clusters, cfg.dim)
    else:
        means = _unit_rows(np.atleast_2d(means))
        if means.shape != (cfg.n_clusters, cfg.dim):
            raise ConfigError(f"means shape {means.shape} does not match config")
    rows = np.empty((cfg.n_clusters * cfg.per_cluster, cfg.dim), dtype=np.float32)
    labels = []
    for c in range(cfg.n_clusters):
        rng = substream(cfg.seed, STREAM_SYNTH + 1 + c)
        rows[c * cfg.per_cluster:(c + 1) * cfg.per_cluster] = sample_vmf(
            means[c], cfg.concentration, cfg.per_cluster, rng)
        labels.extend(f"c{c}_{i}" for i in range(cfg.per_cluster))
    manifest = {"source": "bipkit.synth", "encoder": "synthetic-vmf", "config": cfg.to_dict()}
    return Gallery(EmbeddingMatrix(rows), labels, manifest)


def mc_cap_volume(tau, dim, n_samples, seed):
    """Monte-Carlo cap volume: share of uniform points with x_1 >= tau.

    Full Gaussian vectors are drawn and normalized (no shortcut through the
    marginal law of x_1). Returns ``(estimate, binomial standard error)``.
    """
    if n_samples < 1000:
        raise DomainError(f"need at least 1000 samples (got {n_samples})")
    hits = 0
    for k, s in enumerate(range(0, int(n_samples), _MC_CHUNK)):
        m = min(_MC_CHUNK, int(n_samples) - s)
        g = substream(seed, STREAM_MC + k).standard_normal((m, dim))
        x1 = g[:, 0] / np.sqrt(np.einsum("ij,ij->i", g, g))
        hits += int(np.count_nonzero(x1 >= tau))
    p = hits / n_samples
    return p, math.sqrt(max(p * (1.0 - p), 0.0) / n_samples)


def bisection_alpha_star(p, tau, tol=1e-10, hi=1e6):
    """Root of displaced_cosine(p, alpha) = tau by plain bisection on [0, hi]."""
    if not abs(p) < tau:
        raise DomainError(f"need |p| < tau (got p={p}, tau={tau})")
    lo = 0.0
    f_lo = displaced_cosine(p, lo) - tau
    f_hi = displaced_cosine(p, hi) - tau
    if not (f_lo > 0 > f_hi):
        raise BracketFailure(f"no sign change on [0, {hi}] (p={p}, tau={tau})")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if displaced_cosine(p, mid) - tau > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def plant_collisions(virtual_set, n_rows, rate, tau, seed, max_tries=1000, workers=None):
    """Held-out gallery with a known set of collisions against ``virtual_set``.

    Each of ``n_rows`` rows is, with probability ``rate``, a perturbation of a
    random virtual row at cosine well above ``tau`` (and below ``tau`` to every
    other virtual row); otherwise it is a uniform point at cosine below
    ``tau - 0.1`` to all of the virtual set. Labels are ``planted:{j}`` or
    ``far``. The planted pairs are checked by exact counting before return.
    """
    if not 0.0 <= rate <= 1.0:
        raise DomainError(f"rate must lie in [0, 1] (got {rate})")
    V = as_matrix(virtual_set)
    if V.count == 0:
        raise DomainError("virtual set is empty")
    dim = V.dim
    rng = substream(seed, STREAM_PLANT)
    planted = rng.random(n_rows) < rate
    targets = rng.integers(0, V.count, size=n_rows)
    out = np.empty((n_rows, dim), dtype=np.float32)
    labels = ["far"] * n_rows
    c_lo = tau + 0.5 * (1.0 - tau)
    c_hi = tau + 0.9 * (1.0 - tau)
    v64 = V.rows64() if planted.any() else None

    for i in np.flatnonzero(planted):
        j = int(targets[i])
        v = V.row(j)
        rrng = substream(seed, STREAM_PLANT + 1 + int(i))
        for _ in range(max_tries):
            c = rrng.uniform(c_lo, c_hi)
            w = rrng.standard_normal(dim)
            w -= (w @ v) * v
            w /= np.linalg.norm(w)
            x = (c * v + math.sqrt(1.0 - c * c) * w).astype(np.float32)
            cos = v64 @ x.astype(np.float64)
            cos[j] = -np.inf
            if cos.max() < tau - 1e-6:
                break
        else:
            raise GeometricInfeasible(f"could not plant row {i} near virtual row {j}")
        out[i] = x
        labels[i] = f"planted:{j}"

    far = np.flatnonzero(~planted)
    frng = substream(seed, STREAM_PLANT + (1 << 32))
    pending = far
    for _ in range(max_tries):
        if pending.size == 0:
            break
        cand = _gaussian_directions(frng, pending.size, dim).astype(np.float32)
        best, _ = row_max_cosine(cand, V, workers=workers)
        ok = best < tau - 0.1
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
    if pending.size:
        raise GeometricInfeasible(
            f"{pending.size} rows could not be placed below cos {tau - 0.1:.3f} to the virtual set")

    gal = Gallery(EmbeddingMatrix(out), labels, {
        "source": "bipkit.synth.plant_collisions",
        "encoder": "synthetic",
        "tau": tau,
        "rate": rate,
        "planted_count": int(planted.sum()),
    })
    found = count_at_least(V, gal.centroids, tau, workers=workers)
    if found != int(planted.sum()):
        raise GeometricInfeasible(f"post-hoc count {found} != planted {int(planted.sum())}")
    return gal
