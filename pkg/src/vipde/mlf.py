"""Mittag-Leffler functions E_{beta,1} and E_{beta,beta} on the real line.

Small arguments use the power series; alternating sums are carried out in
fixed-point integer arithmetic on coefficients rounded in extended
precision. Large negative arguments use the algebraic asymptotic expansion,
truncated where its terms stop decreasing.
"""

from __future__ import annotations

import math
import threading
from functools import lru_cache

import mpmath
import numpy as np
from scipy.special import gammaln, rgamma

POSITIVE_CAP = 5.0
# target size of the smallest neglected asymptotic term
ASYMPTOTIC_TOL = 1e-15
_FLOAT_SERIES_MAX = 1.0
# tail cut well below the smallest value the series branch returns
_LOG_TINY = math.log(1e-45)


_MP_LOCK = threading.RLock()


class MittagLefflerDomainError(ValueError):
    pass


def _check(beta: float, gamma: float) -> None:
    if not (0.0 < beta <= 1.0):
        raise MittagLefflerDomainError(f"beta must lie in (0, 1], got {beta}")
    if not gamma > 0.0:
        raise MittagLefflerDomainError(f"gamma must be positive, got {gamma}")


def _log_envelope(beta: float, gamma: float, x: float, k: np.ndarray) -> np.ndarray:
    # |1/Gamma(gamma - beta k)| <= Gamma(beta k - gamma + 1)/pi by reflection
    return gammaln(beta * k - gamma + 1.0) - k * math.log(x) - math.log(math.pi)


def _k_max(beta: float, x: float) -> int:
    # the envelope is smallest near beta*k = x**(1/beta)
    return int(min(4000, 2 + 2 * x ** (1.0 / beta) / beta))


@lru_cache(maxsize=256)
def switch_point(beta: float, gamma: float = 1.0) -> float:
    """Smallest x where the truncated asymptotic expansion reaches ASYMPTOTIC_TOL."""
    _check(beta, gamma)
    target = math.log(ASYMPTOTIC_TOL)

    def best(x):
        k = np.arange(1, _k_max(beta, x) + 1, dtype=float)
        return _log_envelope(beta, gamma, x, k).min()

    lo, hi = 0.5, 2.0
    while best(hi) > target:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if best(mid) > target:
            lo = mid
        else:
            hi = mid
    return hi


def _asymptotic(beta: float, gamma: float, x: np.ndarray) -> np.ndarray:
    """E_{beta,gamma}(-x) for large x > 0, optimally truncated."""
    out = np.empty_like(x)
    kmax = max(_k_max(beta, float(x.min())), 2)
    # the smallest argument has the largest terms; stop once they are negligible
    k = np.arange(1, kmax + 1, dtype=float)
    env_min = _log_envelope(beta, gamma, float(x.min()), k)
    tiny = np.flatnonzero(env_min < math.log(1e-22) - max(math.log(float(x.max())), 0.0))
    if tiny.size:
        kmax = min(kmax, int(tiny[0]) + 1)
        k = k[:kmax]
    s = gamma - beta * k
    # 1/Gamma(s) = Gamma(1 - s) sin(pi s) / pi for s <= 0, exactly 0 at the poles
    pole = (s <= 0) & (np.abs(s - np.round(s)) < 1e-12)
    log_mag = np.where(s > 0, -gammaln(np.maximum(s, 1e-300)), gammaln(1.0 - s) - math.log(math.pi))
    sign = np.where(s > 0, 1.0, np.sign(np.sin(math.pi * s)))
    sign = np.where(pole, 0.0, -((-1.0) ** k) * sign)
    logx = np.log(x)[:, None]
    env = gammaln(beta * k - gamma + 1.0)[None, :] - k[None, :] * logx
    kopt = np.argmin(env, axis=1)
    mask = (np.arange(kmax)[None, :] <= kopt[:, None]) & (sign != 0.0)[None, :]
    logs = np.where(mask, log_mag[None, :] - k[None, :] * logx, -np.inf)
    # reflection loses the exact sine factor; restore |sin(pi s)| in log form
    logsin = np.where(s > 0, 0.0, np.log(np.abs(np.sin(math.pi * s)) + 1e-300))
    terms = sign[None, :] * np.exp(logs + logsin[None, :])
    out[:] = terms.sum(axis=1)
    if beta == 1.0:
        # the algebraic part vanishes; the exponential remainder is the function
        out += np.exp(-x)
    return out


_COEFFICIENTS: dict = {}


def _exact_coefficients(beta: float, gamma: float, n: int, prec: int) -> tuple:
    """1/Gamma(beta k + gamma) for k < n as exact binary floats (mantissa, exponent).

    Tables grow on demand; each entry depends only on (beta, gamma, k, prec),
    so results do not depend on the order of earlier calls.
    """
    key = (beta, gamma, prec)
    table = _COEFFICIENTS.get(key, ())
    if len(table) >= n:
        return table[:n]
    # mpmath precision is process-global, so threads take turns here
    with _MP_LOCK:
        table = _COEFFICIENTS.get(key, ())
        if len(table) < n:
            with mpmath.workprec(prec):
                b = mpmath.mpf(beta)
                g = mpmath.mpf(gamma)
                new = []
                for k in range(len(table), n):
                    sign, man, exp, _ = mpmath.rgamma(b * k + g)._mpf_
                    new.append((-int(man) if sign else int(man), int(exp)))
            table = table + tuple(new)
            _COEFFICIENTS[key] = table
    return table[:n]


def _exact_sum(beta: float, gamma: float, z: float, n: int, lmax: float) -> float:
    """Series at z in fixed-point integer arithmetic.

    Powers of z = m 2^-s are carried with `prec` fractional bits and the
    coefficients are binary floats of the same precision, so the absolute
    error stays near 2^-prec n^2 e^lmax; 192 spare bits cover the smallest
    values reached before the asymptotic switch.
    """
    mant, e = math.frexp(z)
    m = int(mant * (1 << 53))
    s = 53 - e
    prec = 128 * int(math.ceil((192 + max(lmax, 0.0) / math.log(2.0) + 2.0 * math.log2(n)) / 128))
    coefs = _exact_coefficients(beta, gamma, n, prec)
    power = 1 << prec
    total = 0
    for ck, ek in coefs:
        t = ck * power
        total += (t << ek) if ek >= 0 else (t >> -ek)
        power = (power * m) >> s
    return total / (1 << prec)


def _series(beta: float, gamma: float, z: float) -> float:
    """Power series sum_k z^k / Gamma(beta k + gamma) at a scalar z."""
    if z == 0.0:
        return float(rgamma(gamma))
    a = abs(z)
    n = 64
    while True:
        k = np.arange(n, dtype=float)
        lt = k * math.log(a) - gammaln(beta * k + gamma)
        peak = int(np.argmax(lt))
        if lt[-1] < _LOG_TINY + min(lt.max(), 0.0) and peak < n - 1:
            break
        n *= 2
        if n > 1 << 16:
            raise OverflowError(f"series for E_{beta},{gamma}({z}) does not settle")
    lmax = float(lt.max())
    if z > 0:
        total = lmax + math.log(np.exp(lt - lmax).sum())
        if total > 700.0:
            raise OverflowError(f"E_{beta},{gamma}({z}) overflows double precision")
        return math.exp(total)
    if lmax < math.log(_FLOAT_SERIES_MAX):
        signs = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        return float(np.sum(signs * np.exp(lt)))
    # the alternating terms cancel badly; sum them exactly, up to the tail cut
    used = int(np.flatnonzero(lt >= _LOG_TINY + min(lmax, 0.0))[-1]) + 1
    return _exact_sum(beta, gamma, z, used, lmax)


def mittag_leffler(beta: float, gamma: float, z):
    """E_{beta,gamma}(z) for real z <= POSITIVE_CAP, vectorized over z."""
    beta = float(beta)
    gamma = float(gamma)
    _check(beta, gamma)
    zarr = np.asarray(z, dtype=float)
    flat = zarr.reshape(-1)
    if not np.all(np.isfinite(flat)):
        raise MittagLefflerDomainError("argument must be finite")
    if np.any(flat > POSITIVE_CAP):
        raise OverflowError(f"argument exceeds the positive cap {POSITIVE_CAP}")
    out = np.empty_like(flat)
    xs = switch_point(beta, gamma)
    big = flat < -xs
    if big.any():
        out[big] = _asymptotic(beta, gamma, -flat[big])
    for i in np.flatnonzero(~big):
        out[i] = _series(beta, gamma, float(flat[i]))
    if zarr.ndim == 0:
        return float(out[0])
    return out.reshape(zarr.shape)


def ml_one(beta: float, z):
    """E_{beta,1}(z)."""
    return mittag_leffler(beta, 1.0, z)


def ml_two(beta: float, z):
    """E_{beta,beta}(z)."""
    return mittag_leffler(beta, beta, z)
