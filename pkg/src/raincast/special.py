"""Special functions used by the Gamma and log-normal machinery.

All functions accept scalars or arrays and return float64 arrays (0-d for
scalar input). They are self-contained so the loss gradients and CDFs do not
depend on any particular special-function library.
"""

from __future__ import annotations

import math

import numpy as np

_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _lgamma_lanczos(x):
    # valid for x >= 0.5
    z = x - 1.0
    acc = np.full_like(z, _LANCZOS[0])
    for i, c in enumerate(_LANCZOS[1:], start=1):
        acc = acc + c / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(acc)


def lgamma(x):
    """log Gamma(x) for x > 0 (Lanczos, g=7, 9 terms; reflection below 1/2)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise ValueError("lgamma is defined here for positive arguments only")
    small = x < 0.5
    xs = np.where(small, 1.0 - x, x)
    out = _lgamma_lanczos(xs)
    if np.any(small):
        xr = np.where(small, x, 0.25)
        refl = np.log(np.pi / np.sin(np.pi * xr)) - out
        out = np.where(small, refl, out)
    return out


# B_2k / (2k) for k = 1..7
_DIGAMMA_ASYM = (1.0 / 12, -1.0 / 120, 1.0 / 252, -1.0 / 240, 1.0 / 132, -691.0 / 32760, 1.0 / 12)


def digamma(x):
    """psi(x) for x > 0: recurrence up to x >= 10, then the asymptotic series."""
    x = np.array(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise ValueError("digamma is defined here for positive arguments only")
    shift = np.zeros_like(x)
    while True:
        low = x < 10.0
        if not np.any(low):
            break
        shift = shift - np.where(low, 1.0 / np.where(low, x, 1.0), 0.0)
        x = np.where(low, x + 1.0, x)
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    for c in reversed(_DIGAMMA_ASYM):
        series = (series + c) * inv2
    return shift + np.log(x) - 0.5 / x - series


def _erf_series(x):
    # erf(x) = 2/sqrt(pi) exp(-x^2) sum_n (2x^2)^n x / (1*3*...*(2n+1)); all terms positive
    term = x.copy()
    total = x.copy()
    two_x2 = 2.0 * x * x
    for n in range(1, 120):
        term = term * two_x2 / (2 * n + 1)
        total = total + term
        if np.all(term <= 1e-17 * np.abs(total)):
            break
    return 2.0 / math.sqrt(math.pi) * np.exp(-x * x) * total


def _erfc_cf(x, depth=80):
    # erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))), x >= 3
    f = x.copy()
    for k in range(depth, 0, -1):
        f = x + (0.5 * k) / f
    return np.exp(-x * x) / math.sqrt(math.pi) / f


ERF_SWITCH = 3.0


def erfc(x):
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    big = ax >= ERF_SWITCH
    safe_big = np.where(big, ax, ERF_SWITCH)
    safe_small = np.where(big, 0.0, ax)
    tail = np.where(big, _erfc_cf(safe_big), 1.0 - _erf_series(safe_small))
    return np.where(x >= 0, tail, 2.0 - tail)


def erf(x):
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    big = ax >= ERF_SWITCH
    val = np.where(big, 1.0 - _erfc_cf(np.where(big, ax, ERF_SWITCH)), _erf_series(np.where(big, 0.0, ax)))
    return np.copysign(val, x)


def norm_cdf(z):
    z = np.asarray(z, dtype=np.float64)
    return 0.5 * erfc(-z / math.sqrt(2.0))


_TINY = 1e-300


def gammainc_series(a, x, tol=1e-15, max_iter=100000):
    """Regularized lower incomplete gamma P(a, x) by its power series."""
    a, x = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(x, dtype=np.float64))
    a, x = a.astype(np.float64), x.astype(np.float64)
    pos = x > 0
    xs = np.where(pos, x, 1.0)
    ap = a.copy()
    term = 1.0 / a
    total = term.copy()
    done = ~pos
    for _ in range(max_iter):
        ap = ap + 1.0
        term = np.where(done, 0.0, term * xs / ap)
        total = total + term
        done = done | (np.abs(term) < np.abs(total) * tol)
        if np.all(done):
            break
    else:
        raise ArithmeticError("incomplete gamma series did not converge")
    logpref = -xs + a * np.log(xs) - lgamma(a)
    return np.where(pos, total * np.exp(logpref), 0.0)


def gammaincc_cf(a, x, tol=1e-15, max_iter=100000):
    """Regularized upper incomplete gamma Q(a, x) by modified Lentz continued fraction (x > 0)."""
    a, x = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(x, dtype=np.float64))
    a, x = a.astype(np.float64), x.astype(np.float64)
    if np.any(~(x > 0)):
        raise ValueError("continued fraction needs x > 0")
    b = x + 1.0 - a
    c = np.full_like(x, 1.0 / _TINY)
    d = 1.0 / np.where(np.abs(b) < _TINY, _TINY, b)
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(done, h, h * delta)
        done = done | (np.abs(delta - 1.0) < tol)
        if np.all(done):
            break
    else:
        raise ArithmeticError("incomplete gamma continued fraction did not converge")
    return np.exp(-x + a * np.log(x) - lgamma(a)) * h


def gammainc(a, x):
    """Regularized lower incomplete gamma P(a, x): series for x < a + 1, continued fraction otherwise."""
    a, x = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(x, dtype=np.float64))
    if np.any(~(a > 0)) or np.any(x < 0):
        raise ValueError("gammainc needs a > 0 and x >= 0")
    use_series = x < a + 1.0
    out = np.empty(a.shape, dtype=np.float64)
    if np.any(use_series):
        out[use_series] = gammainc_series(a[use_series], x[use_series])
    if np.any(~use_series):
        out[~use_series] = 1.0 - gammaincc_cf(a[~use_series], x[~use_series])
    return out
