"""Black-Scholes prices and log-space derivatives.

All spot derivatives are expressed through the operators ``D_k = x^k d^k/dx^k``.
In log-spot ``s = log x`` they reduce to polynomials in ``d/ds``::

    D_1 = d/ds,    D_2 = d^2/ds^2 - d/ds,
    D_1^a D_2^b = sum_j C(b, j) (-1)^(b-j) d^(a+b+j)/ds^(a+b+j)

so every combination used by the expansion is assembled from the closed-form
table of pure log-derivatives returned by :func:`log_derivatives`.  Nothing in
this module differentiates numerically.

Three European payoffs are supported: ``call``, ``put`` and ``bump``, the
smooth test payoff ``A exp(-log(x/K)^2 / (2 w^2))``.
"""

from dataclasses import dataclass, replace
from math import comb

import numpy as np
from numpy.polynomial.hermite_e import hermeval
from scipy.special import ndtr

from .errors import ConvergenceError, DomainError, NoSolutionError, TerminalLayerError

KINDS = ("call", "put", "bump")

BUMP_WIDTH = 0.2
BUMP_AMPLITUDE = 10.0

IV_LOWER = 1e-8
IV_UPPER = 10.0

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class BsInput:
    """Inputs of a Black-Scholes valuation.

    ``tau`` is the time to maturity in years and ``kind`` one of
    ``"call"``, ``"put"`` or ``"bump"``.
    """

    tau: float
    spot: float
    strike: float
    rate: float = 0.0
    sigma: float = 0.2
    kind: str = "call"

    def with_sigma(self, sigma):
        return replace(self, sigma=sigma)


@dataclass(frozen=True)
class LogGreeks:
    """Log-space greeks of a Black-Scholes price (currency units)."""

    d1: float
    d2: float
    d1d2: float
    d1sq_d2: float
    d2sq: float
    d1sq: float
    vega: float
    volga: float


def _check_kind(kind):
    if kind not in KINDS:
        raise DomainError(f"unknown option kind {kind!r}; expected one of {KINDS}")


def _check_positive(**values):
    for name, value in values.items():
        if np.any(~(np.asarray(value, dtype=float) > 0)):
            raise DomainError(f"{name} must be positive, got {value!r}")


def _npdf(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def payoff(spot, strike, kind="call"):
    """Terminal payoff ``h(x)``."""
    _check_kind(kind)
    spot = np.asarray(spot, dtype=float)
    if kind == "call":
        return np.maximum(spot - strike, 0.0)
    if kind == "put":
        return np.maximum(strike - spot, 0.0)
    return BUMP_AMPLITUDE * np.exp(-np.log(spot / strike) ** 2 / (2.0 * BUMP_WIDTH**2))


def price(tau, spot, strike, rate, sigma, kind="call"):
    """Vectorised Black-Scholes price; ``tau == 0`` returns the payoff."""
    _check_kind(kind)
    _check_positive(spot=spot, strike=strike)
    tau, spot, strike, rate, sigma = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (tau, spot, strike, rate, sigma))
    )
    if np.any(tau < 0):
        raise DomainError("tau must be non-negative")
    out = np.array(payoff(spot, strike, kind), dtype=float)
    live = tau > 0
    if np.any(live):
        _check_positive(sigma=sigma[live])
        t, x, k, r, s = (a[live] for a in (tau, spot, strike, rate, sigma))
        out[live] = _log_derivative_table(t, x, k, r, s, kind, 0)[0]
    return out[()] if out.ndim == 0 else out


def bs_price(inp):
    """Black-Scholes price of a :class:`BsInput`."""
    return float(price(inp.tau, inp.spot, inp.strike, inp.rate, inp.sigma, inp.kind))


def _log_derivative_table(tau, spot, strike, rate, sigma, kind, order):
    """Rows ``n = 0..order`` of ``d^n P / ds^n``; requires ``tau > 0``."""
    sqt = sigma * np.sqrt(tau)
    out = []
    if kind == "bump":
        w = BUMP_WIDTH
        s2 = w * w + sigma * sigma * tau
        s = np.sqrt(s2)
        mu = np.log(spot / strike) + (rate - 0.5 * sigma * sigma) * tau
        base = np.exp(-rate * tau) * BUMP_AMPLITUDE * (w / s) * np.exp(-mu * mu / (2.0 * s2))
        z = mu / s
        for n in range(order + 1):
            coeffs = np.zeros(n + 1)
            coeffs[n] = 1.0
            out.append(base * (-1.0 / s) ** n * hermeval(z, coeffs))
        return out

    disc_k = strike * np.exp(-rate * tau)
    d1 = (np.log(spot / strike) + (rate + 0.5 * sigma * sigma) * tau) / sqt
    d2 = d1 - sqt
    if kind == "call":
        out.append(spot * ndtr(d1) - disc_k * ndtr(d2))
        first = spot * ndtr(d1)
    else:
        out.append(disc_k * ndtr(-d2) - spot * ndtr(-d1))
        first = -spot * ndtr(-d1)
    if order == 0:
        return out
    out.append(first)
    # gamma in log space: D_2 P = K e^{-r tau} n(d2) / (sigma sqrt(tau)); its
    # s-derivatives follow from d^m n(u)/du^m = (-1)^m He_m(u) n(u).
    a = 1.0 / sqt
    g0 = disc_k * _npdf(d2) * a
    for n in range(2, order + 1):
        m = n - 2
        coeffs = np.zeros(m + 1)
        coeffs[m] = 1.0
        g_m = g0 * (-a) ** m * hermeval(d2, coeffs)
        out.append(g_m + out[n - 1])
    return out


def log_derivatives(inp, order=6):
    """Closed-form ``[P, dP/ds, ..., d^order P/ds^order]`` with ``s = log(spot)``."""
    _check_kind(inp.kind)
    _check_positive(spot=inp.spot, strike=inp.strike, sigma=inp.sigma)
    if not inp.tau > 0:
        raise TerminalLayerError("log-space derivatives are singular at tau = 0")
    rows = _log_derivative_table(
        inp.tau, inp.spot, inp.strike, inp.rate, inp.sigma, inp.kind, order
    )
    return np.array([float(v) for v in rows])


def dop(table, a, b):
    """``D_1^a D_2^b P`` from a log-derivative table."""
    total = 0.0
    for j in range(b + 1):
        total += comb(b, j) * (-1) ** (b - j) * table[a + b + j]
    return total


def vega(inp):
    """``dP/dsigma`` from its direct closed form (not via the gamma identity)."""
    _check_kind(inp.kind)
    if not inp.tau > 0:
        raise TerminalLayerError("vega is singular at tau = 0")
    return _sigma_derivs(inp)[0]


def volga(inp):
    """``d^2 P / dsigma^2`` from its direct closed form."""
    if not inp.tau > 0:
        raise TerminalLayerError("volga is singular at tau = 0")
    return _sigma_derivs(inp)[1]


def _sigma_derivs(inp):
    tau, x, k, r, sig = inp.tau, inp.spot, inp.strike, inp.rate, inp.sigma
    if inp.kind == "bump":
        # P as a function of q = sigma^2 tau: P = C (w/S) exp(-mu^2 / 2S^2),
        # S^2 = w^2 + q, mu = log(x/K) + r tau - q/2.
        w = BUMP_WIDTH
        s2 = w * w + sig * sig * tau
        mu = np.log(x / k) + r * tau - 0.5 * sig * sig * tau
        p = float(price(tau, x, k, r, sig, "bump"))
        l1 = -1.0 / (2 * s2) + mu / (2 * s2) + mu * mu / (2 * s2 * s2)
        l2 = 1.0 / (2 * s2 * s2) - 1.0 / (4 * s2) - mu / (s2 * s2) - mu * mu / s2**3
        dq = 2.0 * sig * tau
        p1 = p * l1
        p2 = p * (l2 + l1 * l1)
        return p1 * dq, p2 * dq * dq + p1 * 2.0 * tau
    sqt = sig * np.sqrt(tau)
    d1 = (np.log(x / k) + (r + 0.5 * sig * sig) * tau) / sqt
    d2 = d1 - sqt
    v = x * _npdf(d1) * np.sqrt(tau)
    return float(v), float(v * d1 * d2 / sig)


def log_greeks(inp):
    """All ``D``-combinations used by the price expansion, plus vega and volga."""
    t = log_derivatives(inp, order=4)
    v, vv = _sigma_derivs(inp)
    return LogGreeks(
        d1=dop(t, 1, 0),
        d2=dop(t, 0, 1),
        d1d2=dop(t, 1, 1),
        d1sq_d2=dop(t, 2, 1),
        d2sq=dop(t, 0, 2),
        d1sq=dop(t, 2, 0),
        vega=float(v),
        volga=float(vv),
    )


def forward_log_moneyness(tau, spot, strike, rate):
    """``d = log(K / (x e^{r tau}))``."""
    return np.log(strike / spot) - rate * tau


def price_bounds(tau, spot, strike, rate, kind="call"):
    """No-arbitrage (lower, upper) bounds for a call or put."""
    disc_k = strike * np.exp(-rate * tau)
    if kind == "call":
        return max(spot - disc_k, 0.0), spot
    if kind == "put":
        return max(disc_k - spot, 0.0), disc_k
    raise DomainError("implied volatility is defined for calls and puts only")


def implied_vol(target, tau, spot, strike, rate=0.0, kind="call", tol=1e-12, max_iter=200):
    """Invert the Black-Scholes formula in sigma.

    Safeguarded Newton on the price residual; any Newton step leaving the
    current bracket is replaced by bisection.  The bracket starts at
    ``[IV_LOWER, IV_UPPER]``.
    """
    _check_positive(tau=tau, spot=spot, strike=strike)
    lo_b, hi_b = price_bounds(tau, spot, strike, rate, kind)
    if not lo_b < target < hi_b:
        raise NoSolutionError(
            f"price {target!r} is outside the open no-arbitrage interval ({lo_b}, {hi_b})"
        )

    def resid(s):
        return float(price(tau, spot, strike, rate, s, kind)) - target

    lo, hi = IV_LOWER, IV_UPPER
    f_lo, f_hi = resid(lo), resid(hi)
    if f_lo > 0 or f_hi < 0:
        raise NoSolutionError(f"price {target!r} is not attained for sigma in [{lo}, {hi}]")
    if f_lo == 0:
        return lo
    # start from the Brenner-Subrahmanyam guess, clipped into the bracket
    sig = min(max(np.sqrt(2 * np.pi / tau) * target / spot, 0.05), 2.0)
    for _ in range(max_iter):
        f = resid(sig)
        if abs(f) <= tol:
            return sig
        if f > 0:
            hi = sig
        else:
            lo = sig
        v = float(_sigma_derivs(BsInput(tau, spot, strike, rate, sig, kind))[0])
        step_ok = v > 0
        if step_ok:
            cand = sig - f / v
            step_ok = lo < cand < hi
        sig = cand if step_ok else 0.5 * (lo + hi)
        if hi - lo <= 4e-16 * hi:
            if abs(resid(sig)) <= 1e-10:
                return sig
            break
    raise ConvergenceError(f"implied volatility did not converge (last sigma {sig!r})")
