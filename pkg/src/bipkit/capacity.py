"""Poisson effective-capacity estimates and the open-world stress test.

Each (virtual, test) pair collides independently with a small probability
p, so the collision count C over N x L pairs is approximately Poisson with
mean N L p. The effective capacity is A_eff = 1/p.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math

import numpy as np

from .errors import CapacityExceeded, DomainError, ZeroCollisions
from .special import chi2_ppf
from .store import as_matrix, count_at_least, per_row_counts_at_least


def _json_float(x):
    if x is None:
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclasses.dataclass(frozen=True)
class CollisionStats:
    n_virtual: int
    n_real_test: int
    collisions: int
    tau: float
    ci_low: float
    ci_high: float
    ci_level: float = 0.95
    mle: float | None = None
    zero_collision_lower: float | None = None

    def to_dict(self):
        return {k: _json_float(v) if isinstance(v, float) else v
                for k, v in dataclasses.asdict(self).items()}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)


@dataclasses.dataclass(frozen=True)
class OpenWorldCurve:
    fractions: list
    sizes: list
    collisions: list
    rates: list
    n_virtual: int
    tau: float
    alpha: float | None = None

    def to_dict(self):
        return dataclasses.asdict(self)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fraction", "L_f", "C", "rate"])
            for row in zip(self.fractions, self.sizes, self.collisions, self.rates):
                w.writerow([repr(float(row[0])), row[1], row[2], repr(float(row[3]))])
        return path


def count_collisions(virtual_set, test_gallery, tau, workers=None):
    """Exact number of pairs (v_j, r_l) with cos >= tau."""
    V, T = as_matrix(virtual_set), as_matrix(test_gallery)
    if V.dim != T.dim:
        raise DomainError(f"dimension mismatch: {V.dim} vs {T.dim}")
    return count_at_least(V, T, tau, workers=workers)


def poisson_mle(N, L, C):
    """A_eff estimate N L / C. Undefined for C = 0."""
    if C < 0 or N < 0 or L < 0:
        raise DomainError("N, L and C must be non-negative")
    if C == 0:
        raise ZeroCollisions("MLE undefined with zero collisions; use zero_collision_bound")
    return N * L / C


def _check_level(level):
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1) (got {level})")


def exact_poisson_ci(N, L, C, ci_level=0.95):
    """Two-sided exact (Garwood) interval for A_eff = N L / lambda.

    The lambda interval [chi2_{2C, a/2} / 2, chi2_{2(C+1), 1-a/2} / 2] is
    inverted, so the upper A_eff limit is infinite when C = 0.
    """
    _check_level(ci_level)
    if C < 0:
        raise DomainError(f"C must be >= 0 (got {C})")
    a = 1.0 - ci_level
    nl = N * L
    lam_hi = 0.5 * chi2_ppf(1.0 - a / 2.0, 2 * (C + 1))
    lam_lo = 0.5 * chi2_ppf(a / 2.0, 2 * C)
    low = nl / lam_hi
    high = math.inf if lam_lo == 0.0 else nl / lam_lo
    return low, high


def zero_collision_bound(N, L, confidence=0.95):
    """One-sided lower bound on A_eff when no collision was observed: NL / ln(1/(1-conf))."""
    _check_level(confidence)
    return N * L / -math.log1p(-confidence)


def expected_collisions(N, L, mu):
    if N < 0 or L < 0 or mu < 0:
        raise DomainError("N, L and mu must be non-negative")
    return N * L * mu


def poisson_pmf(lam, c):
    """exp(-lam) lam^c / c!, evaluated through logarithms."""
    if lam < 0 or c < 0 or int(c) != c:
        raise DomainError(f"need lam >= 0 and integer c >= 0 (got {lam}, {c})")
    if lam == 0:
        return 1.0 if c == 0 else 0.0
    return math.exp(-lam + c * math.log(lam) - math.lgamma(c + 1))


def acceptance_probability_model(M, v_current, gv_bound):
    """1 - (M + v) / A_GV under the disjoint-cap, uniform-density picture."""
    used = M + v_current
    if not used < gv_bound:
        raise CapacityExceeded(f"M + v = {used:g} is not below A_GV = {gv_bound:g}")
    return 1.0 - used / gv_bound


def collision_stats(N, L, C, tau, ci_level=0.95):
    low, high = exact_poisson_ci(N, L, C, ci_level)
    if C > 0:
        return CollisionStats(N, L, C, tau, low, high, ci_level, mle=poisson_mle(N, L, C))
    return CollisionStats(N, L, C, tau, low, high, ci_level,
                          zero_collision_lower=zero_collision_bound(N, L, ci_level))


def _prefix_sizes(L, fractions):
    fr = [float(f) for f in fractions]
    if not fr:
        raise DomainError("fractions must not be empty")
    if any(not 0.0 < f <= 1.0 for f in fr):
        raise DomainError(f"fractions must lie in (0, 1] (got {fr})")
    if any(b <= a for a, b in zip(fr, fr[1:])):
        raise DomainError("fractions must be strictly increasing")
    return fr, [int(math.floor(f * L + 1e-9)) for f in fr]


def open_world_stress(virtual_set, heldout, tau, fractions, alpha=None, workers=None):
    """Per-pair collision rate of the whole virtual set against growing prefixes of ``heldout``.

    Prefix f uses the first floor(f * L) held-out rows. Collisions are counted
    once per held-out row and accumulated, so all prefixes cost one scan.
    """
    V, H = as_matrix(virtual_set), as_matrix(heldout)
    if V.dim != H.dim:
        raise DomainError(f"dimension mismatch: {V.dim} vs {H.dim}")
    fr, sizes = _prefix_sizes(H.count, fractions)
    per_row = per_row_counts_at_least(V, H.head(max(sizes)), tau, workers=workers)
    cum = np.concatenate([[0], np.cumsum(per_row)])
    counts = [int(cum[s]) for s in sizes]
    n = V.count
    rates = [c / (n * s) if n * s else 0.0 for c, s in zip(counts, sizes)]
    return OpenWorldCurve(fr, sizes, counts, rates, n, float(tau), alpha)


def stress_collision_stats(curve, ci_level=0.95):
    return [collision_stats(curve.n_virtual, s, c, curve.tau, ci_level)
            for s, c in zip(curve.sizes, curve.collisions)]
