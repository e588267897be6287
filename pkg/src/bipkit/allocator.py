"""Virtual-identity allocation with exact non-collision checks.

A candidate is built from a gallery reference ``r``: push ``r`` away from its
softmax-weighted neighbourhood (the repulsion direction), jitter that
direction with PCA-shaped Gaussian noise, step by ``alpha`` and renormalize.
It is kept only if its cosine to every gallery centroid and to every
previously accepted virtual identity is strictly below ``tau``.

Reproducibility
---------------
Attempt ``a`` (counted from 0 over the whole run) draws, in this order, from
``substream(seed, a)``: one reference index, one uniform for alpha, and ``d``
standard normals for the noise coefficients. Draws are made whether or not
they are used, so the layout never shifts. The reference index is used only
when the attempt starts a new candidate (the previous attempt was accepted,
the previous reference produced ``max_attempts_per_candidate`` rejections in
a row, or it was degenerate); otherwise the current reference is kept and only
the noise and alpha are fresh.

The provisioning loop evaluates attempts in batches. It guesses each
attempt's reference ahead of time, computes candidates and their gallery
maxima in bulk, and then commits strictly in attempt order, re-checking every
candidate against members accepted earlier in the same batch. A wrong guess
throws away the rest of the batch. The committed sequence is therefore the
one a one-attempt-at-a-time loop would produce, whatever the batch size or
worker count.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DegenerateNeighborhood,
    GalleryTooSmall,
    MaxAttemptsExceeded,
    ZeroNormCandidate,
    ZeroNormDirection,
)
from .rng import STREAM_ALLOCATOR, substream
from .store import (
    ZERO_NORM,
    EmbeddingMatrix,
    VirtualRecord,
    VirtualSet,
    as_matrix,
    canonical_dot,
    canonical_pair_dot,
    pairs_at_least,
    resolve_workers,
    row_max_cosine,
    screen_margin,
)

GALLERY_COLLISION = "gallery_collision"
VIRTUAL_COLLISION = "virtual_collision"
DEGENERATE = "degenerate"
CAUSES = (GALLERY_COLLISION, VIRTUAL_COLLISION, DEGENERATE)


@dataclasses.dataclass(frozen=True)
class AllocConfig:
    tau: float
    alpha: float | tuple = 4.0
    k_neighbors: int = 10
    temperature: float = 0.1
    kappa: float = 1.0
    seed: int = 0
    max_attempts_per_candidate: int = 32
    max_total_attempts: int = 10_000_000

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1) (got {self.tau})")
        if isinstance(self.alpha, (list, tuple)):
            if len(self.alpha) != 2:
                raise ConfigError("alpha range must be [alpha_min, alpha_max]")
            lo, hi = (float(v) for v in self.alpha)
            if not 0.0 < lo <= hi:
                raise ConfigError(f"need 0 < alpha_min <= alpha_max (got {lo}, {hi})")
            object.__setattr__(self, "alpha", (lo, hi))
        elif not float(self.alpha) > 0.0:
            raise ConfigError(f"alpha must be > 0 (got {self.alpha})")
        if int(self.k_neighbors) != self.k_neighbors or self.k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be a positive integer (got {self.k_neighbors})")
        if not self.temperature > 0.0:
            raise ConfigError(f"temperature must be > 0 (got {self.temperature})")
        if not self.kappa >= 0.0:
            raise ConfigError(f"kappa must be >= 0 (got {self.kappa})")
        if not 0 <= int(self.seed) < 1 << 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        for name in ("max_attempts_per_candidate", "max_total_attempts"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer (got {v})")

    @property
    def alpha_range(self):
        if isinstance(self.alpha, tuple):
            return self.alpha
        return (float(self.alpha), float(self.alpha))

    def draw_alpha(self, u):
        lo, hi = self.alpha_range
        return lo if lo == hi else lo + (hi - lo) * u

    def to_dict(self):
        d = dataclasses.asdict(self)
        if isinstance(self.alpha, tuple):
            d["alpha"] = list(self.alpha)
        return d

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown allocator config keys: {sorted(extra)}")
        doc = dict(doc)
        if isinstance(doc.get("alpha"), list):
            doc["alpha"] = tuple(doc["alpha"])
        return cls(**doc)

    @classmethod
    def from_json(cls, path, **overrides):
        doc = json.loads(Path(path).read_text())
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(doc)


@dataclasses.dataclass
class ProvisionStats:
    accepted: int = 0
    attempted: int = 0
    rejections_by_cause: dict = dataclasses.field(
        default_factory=lambda: {c: 0 for c in CAUSES})
    wall_time: float = 0.0

    @property
    def acceptance_rate(self):
        return self.accepted / self.attempted if self.attempted else 0.0

    def to_dict(self):
        return {
            "accepted": self.accepted,
            "attempted": self.attempted,
            "acceptance_rate": self.acceptance_rate,
            "rejections_by_cause": dict(self.rejections_by_cause),
            "wall_time": self.wall_time,
        }


@dataclasses.dataclass(frozen=True)
class CheckResult:
    """Outcome of ``hard_check``. ``cause`` is None on acceptance."""

    accepted: bool
    cause: str | None = None
    offending_index: int | None = None
    offending_cos: float | None = None
    max_cos_gallery: float = -math.inf

    def __bool__(self):
        return self.accepted


# ---------------------------------------------------------------------------
# neighbourhoods and directions


def _neighbours(gallery_m, r_indices, k):
    """Exact K nearest rows (excluding self) for each reference index.

    Returns ``(idx, cos)`` arrays of shape (len(r_indices), k), ordered by
    descending canonical cosine with ties broken by lower index.
    """
    data = gallery_m.data
    r_indices = np.asarray(r_indices, dtype=np.int64)
    margin = screen_margin(gallery_m.dim)
    scores = data[r_indices] @ data.T
    scores[np.arange(len(r_indices)), r_indices] = -np.inf
    out_i = np.empty((len(r_indices), k), dtype=np.int64)
    out_c = np.empty((len(r_indices), k))
    kth = np.partition(scores, -k, axis=1)[:, -k]
    for q, r in enumerate(r_indices):
        cand = np.flatnonzero(scores[q] >= kth[q] - 2 * margin)
        exact = canonical_dot(data[cand], data[r].astype(np.float64))
        order = np.lexsort((cand, -exact))[:k]
        out_i[q] = cand[order]
        out_c[q] = exact[order]
    return out_i, out_c


def _softmax_weights(cos, temperature):
    d = 1.0 - np.asarray(cos, dtype=np.float64)
    e = np.exp(-(d - d.min()) / temperature)
    total = 0.0
    for v in e.tolist():
        total += v
    return e / total


def neighbor_weights(r_index, gallery, k, temperature):
    """K nearest gallery neighbours of row ``r_index`` with softmax(-d/t) weights."""
    g = as_matrix(gallery)
    if g.count <= k:
        raise GalleryTooSmall(f"gallery has {g.count} rows, need more than K={k}")
    if not temperature > 0:
        raise ConfigError(f"temperature must be > 0 (got {temperature})")
    idx, cos = _neighbours(g, [r_index], k)
    w = _softmax_weights(cos[0], temperature)
    return [(int(i), float(x)) for i, x in zip(idx[0], w)]


def _weighted_repulsion(data, idx, weights):
    m = np.zeros(data.shape[1])
    for i, w in zip(idx, weights):
        m += w * data[i].astype(np.float64)
    n = math.sqrt(canonical_dot(m, m))
    if n < ZERO_NORM:
        raise DegenerateNeighborhood(f"weighted neighbour centroid has norm {n:.3g}")
    return -m / n


def repulsion_direction(r_index, gallery, k, temperature):
    """z* = -m / ||m|| for the softmax-weighted neighbour centroid m."""
    g = as_matrix(gallery)
    nw = neighbor_weights(r_index, g, k, temperature)
    return _weighted_repulsion(g.data, [i for i, _ in nw], [w for _, w in nw])


def _noise_rows(eta, pca, kappa):
    """kappa * sum_k eta_k sigma_k u_k for each row of ``eta``, summed over k in order."""
    coef = np.asarray(eta, dtype=np.float64) * pca.sigmas[None, :]
    acc = np.zeros((coef.shape[0], pca.dim))
    for k in range(pca.dim):
        if pca.sigmas[k] == 0.0:
            continue
        acc += coef[:, k:k + 1] * pca.eigvecs[None, :, k]
    return kappa * acc


def _perturb_rows(zstar, eta, pca, kappa):
    zstar = np.atleast_2d(zstar)
    if kappa == 0.0:
        return zstar.copy()
    noise = _noise_rows(eta, pca, kappa)
    raw = zstar + noise
    norms = np.sqrt(canonical_pair_dot(raw, raw))
    out = raw / np.where(norms > 0, norms, 1.0)[:, None]
    quiet = ~np.any(noise != 0.0, axis=1)
    out[quiet] = zstar[quiet]
    out[norms < ZERO_NORM] = np.nan
    return out


def perturb_direction(z_star, pca, kappa, rng):
    """normalize(z* + kappa * sum_k eta_k sigma_k u_k) with eta ~ N(0, I_d) from ``rng``.

    ``eta`` is always drawn, so the stream advances the same way for any kappa.
    """
    z_star = np.asarray(z_star, dtype=np.float64)
    if pca.dim != z_star.size:
        raise ConfigError(f"PCA dim {pca.dim} != vector dim {z_star.size}")
    eta = rng.standard_normal(pca.dim)
    z = _perturb_rows(z_star, eta[None, :], pca, kappa)[0]
    if np.isnan(z[0]):
        raise ZeroNormDirection("perturbed direction has (near) zero norm")
    return z


def _candidate_rows(r, z, alpha):
    raw = r + np.asarray(alpha, dtype=np.float64).reshape(-1, 1) * z
    norms = np.sqrt(canonical_pair_dot(raw, raw))
    out = raw / np.where(norms > 0, norms, 1.0)[:, None]
    out[norms < ZERO_NORM] = np.nan
    return out


def make_candidate(r, z, alpha):
    """s = normalize(r + alpha z)."""
    if not alpha > 0:
        raise ConfigError(f"alpha must be > 0 (got {alpha})")
    r = np.asarray(r, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    s = _candidate_rows(r[None, :], z[None, :], alpha)[0]
    if np.isnan(s[0]):
        raise ZeroNormCandidate("r + alpha z has (near) zero norm")
    return s


# ---------------------------------------------------------------------------
# hard check


def hard_check(s, gallery, virtual_set, tau, workers=None):
    """Strict non-collision test of candidate ``s``; the gallery is checked first."""
    s = np.asarray(s)
    g = as_matrix(gallery)
    best_g = -math.inf
    if g.count:
        best_g, arg_g = row_max_cosine(s[None, :], g, workers)
        best_g, arg_g = float(best_g[0]), int(arg_g[0])
        if not best_g < tau:
            return CheckResult(False, GALLERY_COLLISION, arg_g, best_g, best_g)
    v = as_matrix(virtual_set) if virtual_set is not None else None
    if v is not None and v.count:
        best_v, arg_v = row_max_cosine(s[None, :], v, workers)
        if not best_v[0] < tau:
            return CheckResult(False, VIRTUAL_COLLISION, int(arg_v[0]), float(best_v[0]), best_g)
    return CheckResult(True, max_cos_gallery=best_g)


# ---------------------------------------------------------------------------
# provisioning


class _Draws:
    __slots__ = ("ref", "u_alpha", "eta")

    def __init__(self, seed, attempt, n_gallery, dim):
        g = substream(seed, STREAM_ALLOCATOR + attempt)
        self.ref = int(g.integers(0, n_gallery))
        self.u_alpha = float(g.random())
        self.eta = g.standard_normal(dim)


class _Provisioner:
    def __init__(self, gallery, pca, config, n_target, workers, existing):
        self.g = as_matrix(gallery)
        self.pca = pca
        self.cfg = config
        self.n_target = n_target
        self.workers = resolve_workers(workers)
        M, d = self.g.count, self.g.dim
        if M <= config.k_neighbors:
            raise GalleryTooSmall(f"gallery has {M} rows, need more than K={config.k_neighbors}")
        if pca.dim != d:
            raise ConfigError(f"PCA dim {pca.dim} != gallery dim {d}")
        self.n_pre = 0 if existing is None else existing.count
        self.v = np.empty((self.n_pre + n_target, d), dtype=np.float32)
        self.records = []
        if existing is not None:
            if existing.dim != d:
                raise ConfigError("existing virtual set dim does not match gallery")
            self.v[:self.n_pre] = existing.embeddings.data
            self.records = list(existing.records)
        self.n_v = self.n_pre
        self.stats = ProvisionStats()
        self.zstar = {}
        # sequential state
        self.attempt = 0
        self.ref = None
        self.ref_fails = 0
        self.cand_attempts = 0
        self.recent = []

    # -- helpers --------------------------------------------------------
    def _zstars(self, refs):
        new = sorted({r for r in refs if r not in self.zstar})
        if new:
            K, t = self.cfg.k_neighbors, self.cfg.temperature
            step = max(1, min(512, (1 << 24) // self.g.count))
            for s in range(0, len(new), step):
                chunk = new[s:s + step]
                idx, cos = _neighbours(self.g, chunk, K)
                for q, r in enumerate(chunk):
                    try:
                        w = _softmax_weights(cos[q], t)
                        self.zstar[r] = _weighted_repulsion(self.g.data, idx[q], w)
                    except DegenerateNeighborhood:
                        self.zstar[r] = None
        return [self.zstar[r] for r in refs]

    def _guess_refs(self, draws):
        """Predicted reference of each attempt, assuming a run of identical outcomes."""
        accepts = self._predict_accept()
        refs = []
        ref, fails = self.ref, self.ref_fails
        cap = self.cfg.max_attempts_per_candidate
        for dr in draws:
            if ref is None:
                ref, fails = dr.ref, 0
            refs.append(ref)
            if accepts:
                ref = None
            else:
                fails += 1
                if fails >= cap:
                    ref = None
        return refs

    def _predict_accept(self):
        if not self.recent:
            return True
        return sum(self.recent) * 2 >= len(self.recent)

    def _batch_size(self):
        if not self.recent:
            return 16
        p = sum(self.recent) / len(self.recent)
        q = min(p, 1.0 - p)
        run = 1.0 / max(q, 1.0 / 4096)
        return int(min(1024, max(8, run)))

    # -- main loop ------------------------------------------------------
    def run(self):
        t0 = time.perf_counter()
        cfg = self.cfg
        M, d = self.g.count, self.g.dim
        try:
            while self.n_v < self.n_pre + self.n_target:
                left = cfg.max_total_attempts - self.stats.attempted
                if left <= 0:
                    self.stats.wall_time = time.perf_counter() - t0
                    raise MaxAttemptsExceeded(self._result(), self.stats)
                B = min(self._batch_size(), left)
                draws = [_Draws(cfg.seed, self.attempt + i, M, d) for i in range(B)]
                refs = self._guess_refs(draws)
                self._run_batch(draws, refs)
        finally:
            self.stats.wall_time = time.perf_counter() - t0
        return self._result(), self.stats

    def _run_batch(self, draws, refs):
        cfg = self.cfg
        zs = self._zstars(refs)
        B = len(draws)
        d = self.g.dim
        ok_z = np.array([z is not None for z in zs])
        zstar = np.array([z if z is not None else np.zeros(d) for z in zs])
        eta = np.array([dr.eta for dr in draws])
        alpha = np.array([cfg.draw_alpha(dr.u_alpha) for dr in draws])
        z = _perturb_rows(zstar, eta, self.pca, cfg.kappa)
        r = self.g.rows64(np.asarray(refs))
        s = _candidate_rows(r, z, alpha)
        ok = ok_z & ~np.isnan(s[:, 0])
        s32 = np.where(ok[:, None], s, 0.0).astype(np.float32)
        gbest = np.full(B, -math.inf)
        garg = np.zeros(B, dtype=np.int64)
        vbest = np.full(B, -math.inf)
        varg = np.zeros(B, dtype=np.int64)
        if ok.any():
            gbest[ok], garg[ok] = row_max_cosine(s32[ok], self.g, self.workers)
            if self.n_v:
                vbest[ok], varg[ok] = row_max_cosine(s32[ok], self.v[:self.n_v], self.workers)
        n_v0 = self.n_v
        for i in range(B):
            if self.stats.attempted >= cfg.max_total_attempts:
                return
            if self.ref is None:
                self.ref, self.ref_fails = draws[i].ref, 0
            if self.ref != refs[i]:
                return  # misprediction: the rest of the batch is stale
            self.attempt += 1
            self.stats.attempted += 1
            self.cand_attempts += 1
            if not ok[i]:
                self._reject(DEGENERATE, drop_ref=True)
                continue
            if not gbest[i] < cfg.tau:
                self._reject(GALLERY_COLLISION)
                continue
            best = vbest[i] if n_v0 else -math.inf
            if self.n_v > n_v0:
                fresh = canonical_dot(self.v[n_v0:self.n_v], s32[i].astype(np.float64))
                best = max(best, float(fresh.max()))
            if not best < cfg.tau:
                self._reject(VIRTUAL_COLLISION)
                continue
            self.v[self.n_v] = s32[i]
            self.records.append(VirtualRecord(
                index=self.n_v,
                reference_index=int(self.ref),
                alpha_used=float(alpha[i]),
                attempts=self.cand_attempts,
                max_cos_to_gallery=float(gbest[i]),
            ))
            self.n_v += 1
            self.stats.accepted += 1
            self.cand_attempts = 0
            self.ref = None
            self._note(True)
            if self.n_v == self.n_pre + self.n_target:
                return

    def _reject(self, cause, drop_ref=False):
        self.stats.rejections_by_cause[cause] += 1
        self.ref_fails += 1
        if drop_ref or self.ref_fails >= self.cfg.max_attempts_per_candidate:
            self.ref = None
        self._note(False)

    def _note(self, accepted):
        self.recent.append(accepted)
        if len(self.recent) > 256:
            del self.recent[:128]

    def _result(self):
        emb = EmbeddingMatrix(self.v[:self.n_v], validate=False)
        snap = self.cfg.to_dict()
        snap["n_target"] = self.n_target
        return VirtualSet(emb, list(self.records), snap)


def provision(gallery, pca, config, n_target, workers=None, existing=None):
    """Grow a virtual set of ``n_target`` identities against ``gallery``.

    With ``existing`` the new identities are also kept apart from that set and
    are appended after it. Raises MaxAttemptsExceeded (carrying the partial set
    and stats) once ``config.max_total_attempts`` attempts have been spent.
    """
    if int(n_target) != n_target or n_target < 1:
        raise ConfigError(f"n_target must be a positive integer (got {n_target})")
    return _Provisioner(gallery, pca, config, int(n_target), workers, existing).run()


# ---------------------------------------------------------------------------
# gallery growth


def revocation_check(virtual_set, delta_gallery, tau, workers=None):
    """Virtual identities whose max cosine to newly enrolled rows is >= tau.

    Returns ``[(virtual_index, gallery_index, cos), ...]`` in virtual order,
    naming the closest new row for each.
    """
    V, D = as_matrix(virtual_set), as_matrix(delta_gallery)
    if V.dim != D.dim:
        raise ConfigError(f"dimension mismatch: {V.dim} vs {D.dim}")
    if V.count == 0 or D.count == 0:
        return []
    best, arg = row_max_cosine(V.data, D, workers)
    hit = np.flatnonzero(best >= tau)
    return [(int(j), int(arg[j]), float(best[j])) for j in hit]


def monitoring_zone_check(virtual_set, delta_gallery, tau, tau_safe, workers=None):
    """All (virtual, gallery) pairs with tau_safe <= cos < tau."""
    if not tau_safe < tau:
        raise ConfigError(f"tau_safe must be below tau (got {tau_safe} >= {tau})")
    V, D = as_matrix(virtual_set), as_matrix(delta_gallery)
    if V.dim != D.dim:
        raise ConfigError(f"dimension mismatch: {V.dim} vs {D.dim}")
    i, j, c = pairs_at_least(V, D, tau_safe, workers=workers)
    keep = c < tau
    return [(int(a), int(b), float(x)) for a, b, x in zip(i[keep], j[keep], c[keep])]
