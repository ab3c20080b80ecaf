"""Second-order fast/slow expansion of European prices and implied volatilities.

The price route applies operator polynomials in ``D_1, D_2`` (and ``d/dsigma``)
to the Black-Scholes price at the level volatility.  Sigma derivatives are
rewritten with the vega-gamma identity ``dP/dsigma = tau sigma D_2 P``, so
every term is a finite sum of closed-form log-space derivatives.

Formula map (``s`` is the level volatility, ``N = V1 D1 + V0``,
``N' = rV1 D1 + rV0``, ``V = V3 D1 D2 (+ V2 D2)``, ``V' = rV3 D1 D2 (+ rV2 D2)``,
``S1 = tau s D2`` standing for d/dsigma and ``S2 = tau D2 + tau^2 s^2 D2^2``
for d^2/dsigma^2)::

    P00 = P
    P10 = tau V P
    P01 = tau N S1 P
    P20 = -phi/2 D2 P + tau A P + tau^2/2 V^2 P
          A = A2 D1^2 D2 + A1 D1 D2 + A0 D2 + A D2^2
    P02 = [2 tau^2/3 N N' S1 + tau^2/2 N^2 (S2 + S1/(3 s))
           + tau/3 B2 (S2 + S1/(2 s)) + tau/2 B1 S1] P
    P11 = [tau^2 V N S1 + tau/2 C S1 + tau^2 N V'] P
          C = C2 D1^2 + C1 D1 + C0 + C D2

All group parameters carry their powers of eps/delta, so the six returned
terms are already scaled (``P10`` here is ``sqrt(eps) P_{1,0}`` and so on).
The reduced parameterisation (``s = sigma*``, no ``V2`` terms) is canonical;
the unreduced variant exists to measure what the reduction changes.
"""

import json
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import blackscholes as bs
from .errors import DomainError, SchemaError, TerminalLayerError

TERM_NAMES = ("p00", "p10", "p01", "p20", "p02", "p11")
IV_TERM_NAMES = ("i00", "i10", "i01", "i20", "i02", "i11")
REGIME_RATIO = 0.5


class AsymptoticRegimeWarning(UserWarning):
    """Group parameters too large for the small-eps/delta regime."""


class _JsonRecord:
    """Flat JSON (de)serialisation with exact field checking."""

    @classmethod
    def from_dict(cls, data):
        names = [f.name for f in fields(cls)]
        unknown = sorted(set(data) - set(names))
        if unknown:
            raise SchemaError(f"{cls.__name__}: unknown field(s) {unknown}")
        missing = [n for n in names if n not in data]
        if missing:
            raise SchemaError(f"{cls.__name__}: missing field(s) {missing}")
        values = {}
        for n in names:
            v = data[n]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SchemaError(f"{cls.__name__}: field {n!r} must be a number")
            if not np.isfinite(v):
                raise SchemaError(f"{cls.__name__}: field {n!r} must be finite")
            values[n] = float(v)
        return cls(**values)

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(
                f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
        if not isinstance(data, dict):
            raise SchemaError(f"{cls.__name__}: expected a JSON object")
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    def to_array(self):
        return np.array([getattr(self, f.name) for f in fields(self)])

    @classmethod
    def from_array(cls, values):
        names = [f.name for f in fields(cls)]
        if len(values) != len(names):
            raise SchemaError(f"{cls.__name__} needs {len(names)} values, got {len(values)}")
        return cls(**{n: float(v) for n, v in zip(names, values)})


@dataclass(frozen=True)
class GroupParams(_JsonRecord):
    """The eighteen calibratable group parameters of the reduced expansion.

    ``r_v3``, ``r_v1`` and ``r_v0`` are the ratios ``V3'^eps / sigma_bar'``,
    ``V1'^delta / sigma_bar'`` and ``V0'^delta / sigma_bar'``; ``phi_eps`` is
    ``eps * phi`` frozen at the current fast-factor level.
    """

    sigma_star: float
    v3_eps: float = 0.0
    v1_del: float = 0.0
    v0_del: float = 0.0
    c2_ed: float = 0.0
    c1_ed: float = 0.0
    c0_ed: float = 0.0
    c_ed: float = 0.0
    a2_eps: float = 0.0
    a1_eps: float = 0.0
    a0_eps: float = 0.0
    a_eps: float = 0.0
    b2_del: float = 0.0
    b1_del: float = 0.0
    r_v3: float = 0.0
    r_v1: float = 0.0
    r_v0: float = 0.0
    phi_eps: float = 0.0

    def __post_init__(self):
        if not self.sigma_star > 0:
            raise DomainError(f"sigma_star must be positive, got {self.sigma_star!r}")

    def scaled(self, first, second=None):
        """Scale first-order fields by ``first`` and second-order ones by ``second``.

        ``second`` defaults to ``first**2``.  First-order fields are the
        V's and the derivative ratios; A, B, C and phi are second order.
        """
        if second is None:
            second = first * first
        d = self.to_dict()
        for name in FIRST_ORDER_FIELDS:
            d[name] *= first
        for name in SECOND_ORDER_FIELDS:
            d[name] *= second
        return GroupParams(**d)


FIRST_ORDER_FIELDS = ("v3_eps", "v1_del", "v0_del", "r_v3", "r_v1", "r_v0")
SECOND_ORDER_FIELDS = (
    "c2_ed", "c1_ed", "c0_ed", "c_ed",
    "a2_eps", "a1_eps", "a0_eps", "a_eps",
    "b2_del", "b1_del", "phi_eps",
)


@dataclass(frozen=True)
class SurfaceCoeffs(_JsonRecord):
    """Coefficients of ``{1/tau, 1, tau, tau^2, d/tau, d, d tau, d^2/tau^2, d^2/tau, d^2}``."""

    k: float
    l: float
    m: float
    n: float
    p: float
    q: float
    s: float
    u: float
    v: float
    w: float


@dataclass(frozen=True)
class UnreducedFirstOrder:
    """Level volatility and ``V2^eps`` before the reduction to ``sigma*``.

    ``r_v2`` (``V2'^eps / sigma_bar'``) only matters for the unreduced
    price route and defaults to zero.
    """

    sigma_bar: float
    v2: float
    r_v2: float = 0.0


def reduce_params(u):
    """``sigma* = sqrt(sigma_bar^2 + 2 V2^eps)``."""
    radicand = u.sigma_bar**2 + 2.0 * u.v2
    if not u.sigma_bar > 0 or not radicand > 0:
        raise DomainError(f"sigma_bar^2 + 2 V2 must be positive, got {radicand!r}")
    return float(np.sqrt(radicand))


def check_regime(phi, ratio=REGIME_RATIO, warn=True):
    """Names of fields whose magnitude exceeds ``ratio * sigma_star``."""
    limit = ratio * phi.sigma_star
    offenders = [
        f.name
        for f in fields(phi)
        if f.name != "sigma_star" and abs(getattr(phi, f.name)) >= limit
    ]
    if offenders and warn:
        warnings.warn(
            f"group parameters {offenders} exceed {ratio} * sigma_star; "
            "outside the asymptotic regime",
            AsymptoticRegimeWarning,
            stacklevel=2,
        )
    return offenders


# --- operator polynomials in (D1, D2), stored as {(a, b): coefficient} ---


def _mul(p, q):
    out = {}
    for (a1, b1), c1 in p.items():
        for (a2, b2), c2 in q.items():
            key = (a1 + a2, b1 + b2)
            out[key] = out.get(key, 0.0) + c1 * c2
    return out


def _add(*polys):
    out = {}
    for p in polys:
        for key, c in p.items():
            out[key] = out.get(key, 0.0) + c
    return out


def _scale(p, c):
    return {key: c * v for key, v in p.items()}


def _apply(poly, table):
    return sum(c * bs.dop(table, a, b) for (a, b), c in poly.items() if c != 0.0)


def _term_polys(tau, sig, phi, v2=0.0, r_v2=0.0):
    one = {(0, 0): 1.0}
    d2 = {(0, 1): 1.0}
    vop = {(1, 1): phi.v3_eps, (0, 1): v2}
    vprime = {(1, 1): phi.r_v3, (0, 1): r_v2}
    n1 = {(1, 0): phi.v1_del, (0, 0): phi.v0_del}
    n1p = {(1, 0): phi.r_v1, (0, 0): phi.r_v0}
    aop = {(2, 1): phi.a2_eps, (1, 1): phi.a1_eps, (0, 1): phi.a0_eps, (0, 2): phi.a_eps}
    cop = {(2, 0): phi.c2_ed, (1, 0): phi.c1_ed, (0, 0): phi.c0_ed, (0, 1): phi.c_ed}
    s1 = {(0, 1): tau * sig}
    s2 = {(0, 1): tau, (0, 2): tau * tau * sig * sig}

    p20 = _add(
        _scale(d2, -0.5 * phi.phi_eps),
        _scale(aop, tau),
        _scale(_mul(vop, vop), 0.5 * tau * tau),
    )
    p02 = _add(
        _scale(_mul(_mul(n1, n1p), s1), 2.0 * tau * tau / 3.0),
        _scale(_mul(_mul(n1, n1), _add(s2, _scale(s1, 1.0 / (3.0 * sig)))), 0.5 * tau * tau),
        _scale(_add(s2, _scale(s1, 1.0 / (2.0 * sig))), tau * phi.b2_del / 3.0),
        _scale(s1, 0.5 * tau * phi.b1_del),
    )
    p11 = _add(
        _scale(_mul(_mul(vop, n1), s1), tau * tau),
        _scale(_mul(cop, s1), 0.5 * tau),
        _scale(_mul(n1, vprime), tau * tau),
    )
    return {
        "p00": one,
        "p10": _scale(vop, tau),
        "p01": _scale(_mul(n1, s1), tau),
        "p20": p20,
        "p02": p02,
        "p11": p11,
    }


def _price_terms(tau, spot, strike, rate, kind, sig, phi, v2=0.0, r_v2=0.0):
    if not tau > 0:
        raise TerminalLayerError("expansion terms are singular at tau = 0")
    table = bs.log_derivatives(bs.BsInput(tau, spot, strike, rate, sig, kind), order=6)
    polys = _term_polys(tau, sig, phi, v2, r_v2)
    out = {name: float(_apply(polys[name], table)) for name in TERM_NAMES}
    out["total"] = sum(out[name] for name in TERM_NAMES)
    return out


def price_terms(tau, spot, strike, rate, phi, kind="call"):
    """Scaled price terms ``P00, sqrt(eps)P10, ..., sqrt(eps delta)P11`` and their total."""
    return _price_terms(tau, spot, strike, rate, kind, phi.sigma_star, phi)


def price_terms_unreduced(tau, spot, strike, rate, phi, first_order, kind="call"):
    """Price terms at ``sigma_bar`` with the ``V2`` terms kept.

    ``phi.sigma_star`` is ignored; every other field of ``phi`` is used as is.
    """
    return _price_terms(
        tau, spot, strike, rate, kind, first_order.sigma_bar, phi,
        first_order.v2, first_order.r_v2,
    )


def term_operator(name, tau, phi, sigma=None):
    """Operator polynomial ``{(a, b): c}`` of one price term, for inspection."""
    sig = phi.sigma_star if sigma is None else sigma
    return dict(_term_polys(tau, sig, phi)[name])


# --- implied volatility ---


def _iv_terms(tau, d, s, phi, v2=0.0, r_v2=0.0):
    """The implied-volatility terms evaluated literally, ``V2`` terms included."""
    v3, v1, v0 = phi.v3_eps, phi.v1_del, phi.v0_del
    rv3, rv1, rv0 = phi.r_v3, phi.r_v1, phi.r_v0
    a2, a1, a0, a = phi.a2_eps, phi.a1_eps, phi.a0_eps, phi.a_eps
    c2, c1, c0, c = phi.c2_ed, phi.c1_ed, phi.c0_ed, phi.c_ed
    b2, b1 = phi.b2_del, phi.b1_del
    t = tau

    i00 = s + 0.0 * d
    i10 = v2 / s + v3 * (1 / (2 * s) + d / (t * s**3))
    i01 = v0 * t + v1 * (t / 2 + d / s**2)
    i20 = (
        -phi.phi_eps / (2 * t * s)
        + v2 * v2 * (-1 / (2 * s**3))
        + v2 * v3 * (-3 * d / (t * s**5) - 1 / (2 * s**3))
        + v3 * v3 * (-3 * d**2 / (t**2 * s**7) + 3 / (2 * t * s**5) - 3 * d / (2 * t * s**5))
        + a * (d**2 / (t**2 * s**5) - 1 / (t * s**3) - 1 / (4 * s))
        + a0 / s
        + a1 * (d / (t * s**3) + 1 / (2 * s))
        + a2 * (d**2 / (t**2 * s**5) - 1 / (t * s**3) + d / (t * s**3) + 1 / (4 * s))
    )
    i02 = (
        v0 * v0 * (t**2 / (6 * s))
        + v0 * v1 * (-5 * d * t / (3 * s**3) + t**2 / (6 * s))
        + v1 * v1 * (-7 * d**2 / (3 * s**5) + 5 * t / (6 * s**3) - 5 * d * t / (6 * s**3) + t**2 / (6 * s))
        + v0 * rv0 * (2 * t**2 / 3)
        + v0 * rv1 * (t**2 / 3 + 2 * d * t / (3 * s**2))
        + v1 * rv0 * (t**2 / 3 + 2 * d * t / (3 * s**2))
        + v1 * rv1 * (t**2 / 6 + 2 * d**2 / (3 * s**4) - 2 * t / (3 * s**2) + 2 * d * t / (3 * s**2))
        + b2 * (d**2 / (3 * s**3) + t / (6 * s) - t**2 * s / 12)
        + b1 * (t / 2)
    )
    i11 = (
        v0 * v2 * (-t / s**2)
        + v0 * v3 * (-3 * d / s**4 - t / (2 * s**2))
        + v1 * v2 * (-3 * d / s**4 - t / (2 * s**2))
        + v1 * v3 * (-6 * d**2 / (t * s**6) + 3 / s**4 - 3 * d / s**4)
        + v0 * r_v2 * (t / s)
        + v0 * rv3 * (d / s**3 + t / (2 * s))
        + v1 * r_v2 * (d / s**3 + t / (2 * s))
        + v1 * rv3 * (d**2 / (t * s**5) - 1 / s**3 + d / s**3 + t / (4 * s))
        + c2 * (t / 8 + d**2 / (2 * t * s**4) - 1 / (2 * s**2) + d / (2 * s**2))
        + c1 * (t / 4 + d / (2 * s**2))
        + c0 * (t / 2)
        + c * (-t / 8 + d**2 / (2 * t * s**4) - 1 / (2 * s**2))
    )
    return {"i00": i00, "i10": i10, "i01": i01, "i20": i20, "i02": i02, "i11": i11}


def _check_tau(tau):
    if np.any(~(np.asarray(tau, dtype=float) > 0)):
        raise TerminalLayerError("the implied-volatility expansion divides by tau; tau must be > 0")


def iv_terms(tau, d, phi):
    """Scaled implied-volatility terms (reduced) and their total.

    Works elementwise on arrays of ``tau`` and ``d``.
    """
    _check_tau(tau)
    out = _iv_terms(np.asarray(tau, dtype=float), np.asarray(d, dtype=float), phi.sigma_star, phi)
    out["total"] = sum(out[name] for name in IV_TERM_NAMES)
    return out


def iv_terms_unreduced(tau, d, phi, first_order):
    """Implied-volatility terms at ``sigma_bar`` with the ``V2`` terms kept."""
    _check_tau(tau)
    out = _iv_terms(
        np.asarray(tau, dtype=float), np.asarray(d, dtype=float),
        first_order.sigma_bar, phi, first_order.v2, first_order.r_v2,
    )
    out["total"] = sum(out[name] for name in IV_TERM_NAMES)
    return out


# --- surface coefficients ---


def theta_array(sig, v3, v1, v0, c2, c1, c0, c, a2, a1, a0, a, b2, b1, rv3, rv1, rv0, ph):
    """The ten surface coefficients as plain arithmetic on the eighteen inputs.

    Accepts numpy arrays (including complex ones, which the calibration uses
    for complex-step Jacobians) and returns a tuple ``(k, l, ..., w)``.
    """
    s = sig
    k = 3 * v3**2 / (2 * s**5) - a2 / s**3 - a / s**3 - ph / (2 * s)
    l = (
        3 * v1 * v3 / s**4 - c2 / (2 * s**2) - c / (2 * s**2)
        + a0 / s + a1 / (2 * s) + a2 / (4 * s) - a / (4 * s)
        - v1 * rv3 / s**3 + s + v3 / (2 * s)
    )
    m = (
        b1 / 2 + c0 / 2 + c1 / 4 + c2 / 8 - c / 8 + 5 * v1**2 / (6 * s**3)
        - v0 * v3 / (2 * s**2) + b2 / (6 * s) - 2 * v1 * rv1 / (3 * s**2)
        + v0 * rv3 / (2 * s) + v1 * rv3 / (4 * s) + v0 + v1 / 2
    )
    n = (
        v0**2 / (6 * s) + v0 * v1 / (6 * s) + v1**2 / (6 * s) - b2 * s / 12
        + 2 * v0 * rv0 / 3 + rv0 * v1 / 3 + v0 * rv1 / 3 + v1 * rv1 / 6
    )
    p = -3 * v3**2 / (2 * s**5) + a1 / s**3 + a2 / s**3 + v3 / s**3
    q = (
        -3 * v0 * v3 / s**4 - 3 * v1 * v3 / s**4 + c1 / (2 * s**2) + c2 / (2 * s**2)
        + v0 * rv3 / s**3 + v1 * rv3 / s**3 + v1 / s**2
    )
    s_ = (
        -5 * v0 * v1 / (3 * s**3) - 5 * v1**2 / (6 * s**3)
        + 2 * rv0 * v1 / (3 * s**2) + 2 * v0 * rv1 / (3 * s**2) + 2 * v1 * rv1 / (3 * s**2)
    )
    u = -3 * v3**2 / s**7 + a2 / s**5 + a / s**5
    v = -6 * v1 * v3 / s**6 + c2 / (2 * s**4) + c / (2 * s**4) + v1 * rv3 / s**5
    w = -7 * v1**2 / (3 * s**5) + b2 / (3 * s**3) + 2 * v1 * rv1 / (3 * s**4)
    return k, l, m, n, p, q, s_, u, v, w


# GroupParams field order -> theta_array argument order
PHI_ORDER = (
    "sigma_star", "v3_eps", "v1_del", "v0_del", "c2_ed", "c1_ed", "c0_ed", "c_ed",
    "a2_eps", "a1_eps", "a0_eps", "a_eps", "b2_del", "b1_del", "r_v3", "r_v1", "r_v0",
    "phi_eps",
)


def theta_from_phi(phi):
    """Surface coefficients implied by a set of group parameters."""
    if not phi.sigma_star > 0:
        raise DomainError("sigma_star must be positive")
    args = [getattr(phi, name) for name in PHI_ORDER]
    return SurfaceCoeffs(*(float(x) for x in theta_array(*args)))


def basis(tau, d):
    """Design columns ``[1/tau, 1, tau, tau^2, d/tau, d, d tau, d^2/tau^2, d^2/tau, d^2]``."""
    tau = np.asarray(tau, dtype=float)
    d = np.asarray(d, dtype=float)
    one = np.ones_like(tau * d)
    return np.stack(
        [one / tau, one, tau * one, tau**2 * one,
         d / tau, d * one, d * tau,
         d**2 / tau**2, d**2 / tau, d**2 * one],
        axis=-1,
    )


def surface_eval(tau, d, theta):
    """Implied volatility of the ten-coefficient surface."""
    tau = np.asarray(tau, dtype=float)
    if np.any(~(tau > 0)):
        raise DomainError("tau must be positive")
    t = theta
    d = np.asarray(d, dtype=float)
    out = (
        (t.k / tau + t.l + t.m * tau + t.n * tau**2)
        + d / tau * (t.p + t.q * tau + t.s * tau**2)
        + d**2 / tau**2 * (t.u + t.v * tau + t.w * tau**2)
    )
    return out[()] if out.ndim == 0 else out


# Published calibrations on S&P 500 options (phi_eps included).
PUBLISHED_2006 = GroupParams(
    sigma_star=0.2051, v3_eps=-0.0034, v1_del=0.0023, v0_del=-0.0064,
    c2_ed=-0.0073, c1_ed=-0.0171, c0_ed=0.0183, c_ed=0.0047,
    a2_eps=-0.0002, a1_eps=0.0038, a0_eps=-0.0183, a_eps=0.0011,
    b2_del=0.0080, b1_del=0.0183, r_v3=0.0146, r_v1=-0.3104, r_v0=0.9856,
    phi_eps=-0.0181,
)
PUBLISHED_2010 = GroupParams(
    sigma_star=0.2269, v3_eps=-0.0062, v1_del=-0.0026, v0_del=0.0208,
    c2_ed=-0.0031, c1_ed=-0.00034, c0_ed=-0.0035, c_ed=0.0033,
    a2_eps=0.0034, a1_eps=0.0034, a0_eps=-0.0004, a_eps=-0.0012,
    b2_del=0.0012, b1_del=-0.0035, r_v3=-0.1590, r_v1=0.0914, r_v0=-0.0729,
    phi_eps=-0.0443,
)
