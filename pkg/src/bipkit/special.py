"""Special functions: regularized incomplete beta and gamma, chi-squared
quantiles, and the standard normal upper tail.

All routines work on Python floats. The incomplete beta and gamma functions
are evaluated in the log domain so that tail probabilities far below the
double-precision underflow limit keep their significant digits.
"""

import math

from .errors import DomainError

_TINY = 1e-300
_EPS = 1e-16
_MAX_ITER = 100_000


def _log_beta(a, b):
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _beta_cf(a, b, x):
    """Continued fraction for I_x(a, b), modified Lentz evaluation."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def _log_front(a, b, x):
    # ln[x^a (1-x)^b / (a B(a,b))]
    return a * math.log(x) + b * math.log1p(-x) - _log_beta(a, b) - math.log(a)


def _check_beta_args(x, a, b):
    if not (a > 0 and b > 0):
        raise DomainError(f"incomplete beta needs a, b > 0 (got a={a}, b={b})")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"incomplete beta needs 0 <= x <= 1 (got {x})")


def log_betainc(x, a, b):
    """Natural log of the regularized incomplete beta function I_x(a, b)."""
    x, a, b = float(x), float(a), float(b)
    _check_beta_args(x, a, b)
    if x == 0.0:
        return -math.inf
    if x == 1.0:
        return 0.0
    if x < (a + 1.0) / (a + b + 2.0):
        return _log_front(a, b, x) + math.log(_beta_cf(a, b, x))
    # I_x(a, b) = 1 - I_{1-x}(b, a)
    y = 1.0 - x
    comp = math.exp(_log_front(b, a, y)) * _beta_cf(b, a, y)
    return math.log1p(-comp)


def betainc(x, a, b):
    """Regularized incomplete beta function I_x(a, b)."""
    x, a, b = float(x), float(a), float(b)
    _check_beta_args(x, a, b)
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(_log_front(a, b, x)) * _beta_cf(a, b, x)
    y = 1.0 - x
    return 1.0 - math.exp(_log_front(b, a, y)) * _beta_cf(b, a, y)


# ---------------------------------------------------------------------------
# incomplete gamma


def _gamma_series(a, x):
    """ln P(a, x) by the power series; best for x < a + 1."""
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return math.log(total) - x + a * math.log(x) - math.lgamma(a)
    raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")


def _gamma_cf(a, x):
    """ln Q(a, x) by the Lentz continued fraction; best for x >= a + 1."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.log(h) - x + a * math.log(x) - math.lgamma(a)
    raise ArithmeticError(f"incomplete gamma continued fraction did not converge (a={a}, x={x})")


def _check_gamma_args(a, x):
    if not a > 0:
        raise DomainError(f"incomplete gamma needs a > 0 (got {a})")
    if not x >= 0:
        raise DomainError(f"incomplete gamma needs x >= 0 (got {x})")


def gammainc(a, x):
    """Regularized lower incomplete gamma P(a, x)."""
    a, x = float(a), float(x)
    _check_gamma_args(a, x)
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return math.exp(_gamma_series(a, x))
    return -math.expm1(_gamma_cf(a, x))


def gammaincc(a, x):
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    a, x = float(a), float(x)
    _check_gamma_args(a, x)
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return -math.expm1(_gamma_series(a, x))
    return math.exp(_gamma_cf(a, x))


# ---------------------------------------------------------------------------
# chi-squared


def chi2_cdf(x, df):
    if x <= 0:
        return 0.0
    return gammainc(df / 2.0, x / 2.0)


def chi2_sf(x, df):
    if x <= 0:
        return 1.0
    return gammaincc(df / 2.0, x / 2.0)


def chi2_ppf(q, df):
    """Quantile of the chi-squared distribution: x with P(df/2, x/2) = q.

    ``df = 0`` is the point mass at zero. Newton steps on the log of the
    relevant tail, safeguarded by a maintained bracket and bisection.
    """
    q, df = float(q), float(df)
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"quantile level must lie in [0, 1] (got {q})")
    if df < 0:
        raise DomainError(f"degrees of freedom must be >= 0 (got {df})")
    if df == 0 or q == 0.0:
        return 0.0
    if q == 1.0:
        return math.inf

    a = df / 2.0
    upper = q > 0.5
    target = math.log1p(-q) if upper else math.log(q)

    def g(x):
        # monotone residual in log space; increasing in x
        if upper:
            return target - _log_q(a, x / 2.0)
        return _log_p(a, x / 2.0) - target

    x = _wilson_hilferty(q, df)
    lo, hi = 0.0, math.inf
    for _ in range(200):
        r = g(x)
        if r == 0.0:
            return x
        if r > 0:
            hi = min(hi, x)
        else:
            lo = max(lo, x)
        # d/dx ln P = f(x)/P, d/dx ln Q = -f(x)/Q with f the chi2 density
        logf = (a - 1.0) * math.log(x / 2.0) - x / 2.0 - math.lgamma(a) - math.log(2.0)
        if upper:
            slope = math.exp(logf - _log_q(a, x / 2.0))
        else:
            slope = math.exp(logf - _log_p(a, x / 2.0))
        step = r / slope if slope > 0 and math.isfinite(slope) else math.nan
        nxt = x - step
        if not (math.isfinite(nxt) and lo < nxt < hi):
            nxt = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * x + 1.0
        if abs(nxt - x) <= 4e-16 * max(x, 1e-300):
            return nxt
        x = nxt
    return x


def _log_p(a, x):
    if x < a + 1.0:
        return _gamma_series(a, x)
    return math.log1p(-math.exp(_gamma_cf(a, x)))


def _log_q(a, x):
    if x < a + 1.0:
        return math.log1p(-math.exp(_gamma_series(a, x)))
    return _gamma_cf(a, x)


def _wilson_hilferty(q, df):
    z = norm_ppf(q)
    h = 2.0 / (9.0 * df)
    x = df * (1.0 - h + z * math.sqrt(h)) ** 3
    if not x > 0:
        # small-df lower tail: P(x) ~ (x/2)^a / Gamma(a+1)
        a = df / 2.0
        x = 2.0 * math.exp((math.log(q) + math.lgamma(a + 1.0)) / a)
    return x


# ---------------------------------------------------------------------------
# normal distribution


def norm_sf(x):
    """Standard normal upper tail Q(x) = P(Z > x), accurate deep into the tail."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def norm_ppf(p):
    """Standard normal quantile (Acklam's rational approximation, one Halley step)."""
    if not 0.0 < p < 1.0:
        if p == 0.0:
            return -math.inf
        if p == 1.0:
            return math.inf
        raise DomainError(f"probability must lie in [0, 1] (got {p})")
    a = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
    b = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
         3.754408661907416e00)
    lo = 0.02425
    if p < lo:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    elif p <= 1.0 - lo:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)
