"""Spherical-cap geometry, Gilbert-Varshamov capacity and perturbation strength.

Cap volumes are normalized by the area of the whole sphere, so ``cap_volume``
is the probability that a uniform point on S^{d-1} falls within cosine
``tau`` of a fixed centre. Quantities that underflow (``mu`` at high
dimension) are also carried as logarithms.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import DomainError
from .special import betainc, log_betainc, norm_sf
from .store import canonical_dot, normalize

LN2 = math.log(2.0)

# tau^2 - p^2 below this is treated as the singular boundary |p| -> tau
_SINGULAR_GAP = 1e-12


@dataclasses.dataclass(frozen=True)
class CapVolume:
    linear: float
    log_natural: float

    @property
    def log2(self):
        return self.log_natural / LN2

    def to_dict(self):
        return {"linear": self.linear, "ln": self.log_natural, "log2": self.log2}


@dataclasses.dataclass(frozen=True)
class CapacityReport:
    """GV capacity reference for one (tau, dim) operating point.

    ``gv_bound`` is a lower bound on the packing number of the ambient
    sphere S^{dim-1}; as a statement about a face manifold embedded in that
    sphere it is a capacity-scale reference only.
    """

    tau: float
    dim: int
    mu: CapVolume
    gv_bound: float
    log2_gv: float
    alpha_star_orthogonal: float
    gaussian_approx: float

    def headroom(self, n):
        """How many times ``n`` identities fit under the GV reference."""
        return self.gv_bound / n

    def to_dict(self):
        return {
            "tau": self.tau,
            "dim": self.dim,
            "mu": self.mu.linear,
            "ln_mu": self.mu.log_natural,
            "log2_mu": self.mu.log2,
            "gv_bound": self.gv_bound,
            "ln_gv": self.log2_gv * LN2,
            "log2_gv": self.log2_gv,
            "alpha_star_orthogonal": self.alpha_star_orthogonal,
            "gaussian_approx": self.gaussian_approx,
            "ln_gaussian_approx": math.log(self.gaussian_approx) if self.gaussian_approx > 0 else -math.inf,
            "label": "ambient-sphere capacity reference (GV lower bound on S^{dim-1})",
        }


@dataclasses.dataclass(frozen=True)
class BufferReport:
    tau: float
    delta: float
    tau_safe: float
    capacity_at_tau: CapacityReport
    capacity_at_tau_safe: CapacityReport
    alpha_star_derivative_at_tau: float

    def to_dict(self):
        return {
            "tau": self.tau,
            "delta": self.delta,
            "tau_safe": self.tau_safe,
            "alpha_star_derivative_at_tau": self.alpha_star_derivative_at_tau,
            "capacity_at_tau": self.capacity_at_tau.to_dict(),
            "capacity_at_tau_safe": self.capacity_at_tau_safe.to_dict(),
        }


def regularized_incomplete_beta(x, a, b):
    return betainc(x, a, b)


def log_regularized_incomplete_beta(x, a, b):
    return log_betainc(x, a, b)


def _check_tau_dim(tau, dim):
    if not 0.0 <= tau < 1.0:
        raise DomainError(f"tau must lie in [0, 1) (got {tau})")
    if int(dim) != dim or dim < 2:
        raise DomainError(f"dim must be an integer >= 2 (got {dim})")


def cap_volume(tau, dim):
    """Normalized volume of {x : cos(x, p) >= tau} on S^{dim-1}.

    mu = I_{1 - tau^2}((dim - 1)/2, 1/2) / 2.
    """
    _check_tau_dim(tau, dim)
    x = 1.0 - tau * tau
    a = (dim - 1) / 2.0
    log_mu = -LN2 + log_betainc(x, a, 0.5)
    lin = 0.5 * betainc(x, a, 0.5)
    return CapVolume(lin, log_mu)


def gaussian_cap_approx(tau, dim):
    """CLT approximation Q(tau * sqrt(dim)) of the cap volume; intuition only."""
    _check_tau_dim(tau, dim)
    return norm_sf(tau * math.sqrt(dim))


def gv_bound(tau, dim):
    mu = cap_volume(tau, dim)
    log2_gv = -mu.log_natural / LN2
    try:
        a_gv = math.exp(-mu.log_natural)
    except OverflowError:
        a_gv = math.inf
    return CapacityReport(
        tau=float(tau),
        dim=int(dim),
        mu=mu,
        gv_bound=a_gv,
        log2_gv=log2_gv,
        alpha_star_orthogonal=alpha_star(0.0, tau) if tau > 0 else math.inf,
        gaussian_approx=gaussian_cap_approx(tau, dim),
    )


def displaced_cosine(p, alpha):
    """cos(normalize(r + alpha z), r) for unit r, z with r . z = p."""
    if not -1.0 < p < 1.0:
        raise DomainError(f"|p| must be < 1 (got {p})")
    if alpha < 0:
        raise DomainError(f"alpha must be >= 0 (got {alpha})")
    den2 = 1.0 + 2.0 * alpha * p + alpha * alpha
    assert den2 > 0.0
    return (1.0 + alpha * p) / math.sqrt(den2)


def alpha_star(p, tau):
    """Perturbation strength at which cos(normalize(r + alpha z), r) = tau.

    Closed form of the positive root; requires |p| < tau < 1.
    """
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1) (got {tau})")
    gap = tau * tau - p * p
    if not abs(p) < tau or gap < _SINGULAR_GAP:
        raise DomainError(f"alpha* undefined for |p| >= tau (p={p}, tau={tau})")
    st = math.sqrt(1.0 - tau * tau)
    return st * (p * st + tau * math.sqrt(1.0 - p * p)) / gap


def alpha_star_derivative_wrt_tau(tau):
    """d alpha*(0, tau) / d tau = -1 / (tau^2 sqrt(1 - tau^2))."""
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1) (got {tau})")
    return -1.0 / (tau * tau * math.sqrt(1.0 - tau * tau))


def safety_buffer_analysis(tau, delta, dim):
    """Capacity and perturbation cost of provisioning at tau_safe = tau - delta."""
    if not 0.0 < delta < tau:
        raise DomainError(f"need 0 < delta < tau (got delta={delta}, tau={tau})")
    tau_safe = tau - delta
    at_tau = gv_bound(tau, dim)
    at_safe = gv_bound(tau_safe, dim)
    return BufferReport(
        tau=float(tau),
        delta=float(delta),
        tau_safe=tau_safe,
        capacity_at_tau=at_tau,
        capacity_at_tau_safe=at_safe,
        alpha_star_derivative_at_tau=alpha_star_derivative_wrt_tau(tau),
    )


def repulsion_derivative_diagnostic(r, z, c):
    """d/d alpha of cos(normalize(r + alpha z), c) at alpha = 0.

    Equals z.c - (r.z)(r.c). A negative value means moving along ``z``
    actually lowers the cosine to neighbour ``c`` after renormalization.
    """
    r = np.asarray(r, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    return canonical_dot(z, c) - canonical_dot(r, z) * canonical_dot(r, c)


def candidate_cosine(r, z, alpha):
    """cos(normalize(r + alpha z), r) computed from the vectors themselves."""
    s = normalize(np.asarray(r, dtype=np.float64) + alpha * np.asarray(z, dtype=np.float64))
    return canonical_dot(s, r)
