"""Two-stage calibration of the implied-volatility surface.

Stage 1 fits the ten surface coefficients by weighted linear least squares
across all expiries jointly.  Stage 2 looks for the group parameters of
smallest Euclidean norm that reproduce those coefficients exactly.
"""

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from . import blackscholes as bs
from .asymptotics import (
    PHI_ORDER,
    GroupParams,
    SurfaceCoeffs,
    basis,
    surface_eval,
    theta_array,
)
from .errors import CalibrationError, DomainError, InfeasibleError, NoSolutionError, RankError

MIN_TAU = 5.0 / 365.0
MAX_CONDITION = 1e12
BASIS_NAMES = ("1/tau", "1", "tau", "tau^2", "d/tau", "d", "d*tau", "d^2/tau^2", "d^2/tau", "d^2")
THETA_NAMES = ("k", "l", "m", "n", "p", "q", "s", "u", "v", "w")
TIE_RTOL = 1e-10


@dataclass(frozen=True)
class OptionQuote:
    """One market observation; ``iv`` takes precedence over ``price`` when both are set."""

    expiry_years: float
    strike: float
    spot: float
    rate: float = 0.0
    kind: str = "call"
    iv: float | None = None
    price: float | None = None
    weight: float = 1.0

    def __post_init__(self):
        for name in ("expiry_years", "strike", "spot"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.kind not in ("call", "put"):
            raise DomainError(f"kind must be 'call' or 'put', got {self.kind!r}")
        if self.iv is None and self.price is None:
            raise DomainError("a quote needs an implied volatility or a price")
        if self.iv is not None and not self.iv > 0:
            raise DomainError(f"iv must be positive, got {self.iv!r}")
        if not self.weight >= 0:
            raise DomainError(f"weight must be non-negative, got {self.weight!r}")


@dataclass
class PreparedQuotes:
    """Quotes reduced to ``(tau, d, iv, weight)`` arrays."""

    tau: np.ndarray
    d: np.ndarray
    iv: np.ndarray
    weight: np.ndarray
    spot: np.ndarray
    rate: np.ndarray
    index: np.ndarray  # position of each kept quote in the raw input
    dropped: list  # (index, reason)

    def __len__(self):
        return len(self.tau)


def prepare_quotes(quotes, min_tau=MIN_TAU):
    """Compute forward log-moneyness and market implied vols.

    Quotes shorter than ``min_tau`` and prices that cannot be inverted are
    dropped and listed in ``dropped``.
    """
    rows, dropped = [], []
    for i, q in enumerate(quotes):
        if q.expiry_years < min_tau:
            dropped.append((i, f"expiry {q.expiry_years!r} below minimum {min_tau!r}"))
            continue
        iv = q.iv
        if iv is None:
            try:
                iv = bs.implied_vol(q.price, q.expiry_years, q.spot, q.strike, q.rate, q.kind)
            except (NoSolutionError, DomainError) as exc:
                dropped.append((i, f"price not invertible: {exc}"))
                continue
        d = float(bs.forward_log_moneyness(q.expiry_years, q.spot, q.strike, q.rate))
        rows.append((q.expiry_years, d, iv, q.weight, q.spot, q.rate, i))
    if not rows:
        raise CalibrationError("no usable quotes after filtering")
    cols = list(zip(*rows))
    return PreparedQuotes(
        *(np.array(c, dtype=float) for c in cols[:6]),
        index=np.array(cols[6], dtype=int),
        dropped=dropped,
    )


def vega_weights(prepared):
    """Black-Scholes vega at the market vol, per unit spot."""
    sqt = prepared.iv * np.sqrt(prepared.tau)
    d1 = -prepared.d / sqt + 0.5 * sqt
    return np.exp(-0.5 * d1 * d1) / np.sqrt(2 * np.pi) * np.sqrt(prepared.tau)


# --- stage 1 ---


@dataclass
class ThetaFit:
    theta: SurfaceCoeffs
    stderr: np.ndarray
    condition_number: float
    residuals: np.ndarray  # model - market
    sse: float


def fit_theta(prepared, weights="uniform", ridge=0.0, max_condition=MAX_CONDITION):
    """Joint weighted least-squares fit of the ten surface coefficients.

    Solved by QR of the weighted design matrix.  The condition number is
    measured after scaling every column to unit norm, so it reflects
    collinearity rather than units.  ``ridge`` adds ``ridge * |theta|^2``.
    """
    if weights not in ("uniform", "vega"):
        raise CalibrationError(f"unknown weighting {weights!r}")
    w = prepared.weight.copy()
    if weights == "vega":
        w = w * vega_weights(prepared)
    keep = w > 0
    if not np.any(keep):
        raise CalibrationError("every quote has zero weight")
    design = basis(prepared.tau, prepared.d)
    sw = np.sqrt(w[keep])
    a = design[keep] * sw[:, None]
    b = prepared.iv[keep] * sw
    if ridge > 0:
        a = np.vstack([a, np.sqrt(ridge) * np.eye(10)])
        b = np.concatenate([b, np.zeros(10)])

    norms = np.linalg.norm(a, axis=0)
    norms[norms == 0] = 1.0
    _, sv, vt = np.linalg.svd(a / norms, full_matrices=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if not cond <= max_condition:
        weak = vt[sv < sv[0] / max_condition] if np.isfinite(cond) else vt[-1:]
        if len(weak) == 0:
            weak = vt[-1:]
        directions = []
        for vec in weak:
            order = np.argsort(-np.abs(vec))
            directions.append([BASIS_NAMES[j] for j in order if abs(vec[j]) > 0.1])
        raise RankError(
            f"design matrix is rank deficient (condition number {cond:.3g}); "
            f"collinear basis functions: {directions}",
            cond,
            directions,
        )

    qm, r = np.linalg.qr(a / norms)
    theta = solve_triangular(r, qm.T @ b) / norms
    resid = design @ theta - prepared.iv
    n_fit = int(keep.sum())
    wr = resid[keep] * sw
    sse = float(wr @ wr)
    dof = n_fit - 10
    if dof > 0:
        rinv = solve_triangular(r, np.eye(10))
        cov = (rinv @ rinv.T) * (sse / dof) / np.outer(norms, norms)
        stderr = np.sqrt(np.diag(cov))
    else:
        stderr = np.full(10, np.nan)
    return ThetaFit(SurfaceCoeffs(*(float(x) for x in theta)), stderr, cond, resid, sse)


# --- stage 2 ---


@dataclass(frozen=True)
class RecoveryOptions:
    """Multi-start settings for stage 2.

    ``scale`` optionally divides each group parameter by a positive number
    before taking the norm (diagonal scaling); the default is the raw norm.
    """

    n_starts: int = 32
    seed: int = 0
    tol: float = 1e-8
    max_iter: int = 500
    spread: float = 0.05
    scale: tuple | None = None
    workers: int = 1


@dataclass(frozen=True)
class Recovery:
    phi: GroupParams
    constraint_residual: float
    norm_sq: float
    start_index: int
    feasible_starts: int


def theta_vector(x):
    """Surface coefficients of an 18-vector of group parameters."""
    return np.array(theta_array(*x))


def theta_jacobian(x):
    """``d theta / d phi`` (10 x 18) by complex-step differentiation."""
    h = 1e-30
    z = np.tile(np.asarray(x, dtype=complex)[:, None], (1, 18))
    z[np.arange(18), np.arange(18)] += 1j * h
    return np.array(theta_array(*z)).imag / h


# Positions in the 18-vector: first-order parameters enter the surface
# nonlinearly; second-order ones enter linearly through a matrix that depends
# on sigma* alone.
FIRST = np.array([0, 1, 2, 3, 14, 15, 16])
SECOND = np.array([4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 17])
# The s row holds no second-order parameter and the n and w rows share B2
# only, so the linear block always has rank 8.
LINEAR_RANK = 8


def _start_points(theta, opts):
    sigma = theta.l if theta.l > 0 else 0.2
    base = np.zeros(7)
    base[0] = sigma
    starts = [base]
    for i in range(1, opts.n_starts):
        rng = np.random.default_rng(np.random.SeedSequence([opts.seed, i]))
        x = rng.normal(0.0, opts.spread, 7)
        x[0] = sigma * math.exp(rng.normal(0.0, 0.3))
        starts.append(x)
    return starts


def _split(first):
    """Offset ``g`` and linear block ``M`` with ``theta = g + M @ second``."""
    z = np.zeros((18, 12))
    z[FIRST] = np.asarray(first)[:, None]
    z[SECOND, np.arange(1, 12)] = 1.0
    cols = np.array(theta_array(*z))
    return cols[:, 0], cols[:, 1:] - cols[:, [0]]


def _second_order(first, target, scale2):
    """Second-order block of least scaled norm, and the unreachable remainder."""
    g, m = _split(first)
    u, sv, vt = np.linalg.svd(m * scale2)
    rhs = target - g
    coef = (u[:, :LINEAR_RANK].T @ rhs) / sv[:LINEAR_RANK]
    second = scale2 * (vt[:LINEAR_RANK].T @ coef)
    return second, rhs - m @ second


def _reduced_constraints(first, target):
    """The two constraints the second-order block cannot absorb.

    The s row carries no second-order parameter.  In the n and w rows B2
    enters with coefficients ``-sigma/12`` and ``1/(3 sigma^3)``, so the
    combination ``n + sigma^4/4 w`` is free of it.
    """
    g, _ = _split(first)
    sig = first[0]
    r = target - g
    return np.array([r[6], r[3] + 0.25 * sig**4 * r[9]])


def _assemble(first, second):
    x = np.zeros(18)
    x[FIRST] = first
    x[SECOND] = second
    return x


def _project(x, target, tol, max_iter=50):
    """Minimum-norm Gauss-Newton corrections onto ``theta(x) = target``."""
    for _ in range(max_iter):
        c = theta_vector(x) - target
        if np.max(np.abs(c)) <= 1e-3 * tol:
            break
        x_new = x - np.linalg.lstsq(theta_jacobian(x), c, rcond=None)[0]
        if not x_new[0] > 0:
            break
        x = x_new
    return x, float(np.max(np.abs(theta_vector(x) - target)))


def _solve_from(f0, target, opts, scale):
    """One local solve of the reduced problem from a start point.

    The second-order block is eliminated exactly; what remains is a smooth
    seven-variable problem with two equality constraints, solved by SLSQP
    with ``log sigma*`` as the free variable.
    """
    sf, ss = scale[FIRST], scale[SECOND]

    def unpack(u):
        f = u.copy()
        f[0] = math.exp(u[0])
        return f

    def objective(u):
        f = unpack(u)
        second, _ = _second_order(f, target, ss)
        return float(np.sum((f / sf) ** 2) + np.sum((second / ss) ** 2))

    def constraints(u):
        return _reduced_constraints(unpack(u), target)

    u0 = np.array(f0, dtype=float)
    u0[0] = math.log(f0[0])
    # keep sigma* in [1e-6, 10] so line searches cannot overflow
    bounds = [(math.log(1e-6), math.log(10.0))] + [(None, None)] * 6
    sol = minimize(objective, u0, method="SLSQP", bounds=bounds,
                   constraints=[{"type": "eq", "fun": constraints}],
                   options={"maxiter": opts.max_iter, "ftol": 1e-16})
    f = unpack(sol.x)
    second, _ = _second_order(f, target, ss)
    return _project(_assemble(f, second), target, opts.tol)


def recover_phi(theta, options=None):
    """Group parameters of minimal norm whose surface coefficients equal ``theta``.

    The surface is affine in the eleven second-order parameters for fixed
    first-order ones, so those are eliminated exactly and each start solves
    a seven-variable problem with two equality constraints.  Among feasible
    results the smallest norm wins; norms equal to a relative ``1e-10`` go to
    the lower start index.
    """
    opts = options or RecoveryOptions()
    target = np.array([getattr(theta, n) for n in THETA_NAMES], dtype=float)
    if not np.all(np.isfinite(target)):
        raise CalibrationError("surface coefficients must be finite")
    scale = np.ones(18) if opts.scale is None else np.asarray(opts.scale, dtype=float)
    starts = _start_points(theta, opts)

    def run(x0):
        try:
            with np.errstate(all="ignore"), warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                return _solve_from(x0, target, opts, scale)
        except (ValueError, OverflowError, FloatingPointError, np.linalg.LinAlgError):
            return None, math.inf

    if opts.workers > 1:
        with ThreadPoolExecutor(max_workers=opts.workers) as ex:
            results = list(ex.map(run, starts))
    else:
        results = [run(x0) for x0 in starts]

    best, best_norm, best_i, best_resid = None, math.inf, -1, math.inf
    feasible = 0
    closest = math.inf
    for i, (x, resid) in enumerate(results):
        if x is None or not np.all(np.isfinite(x)) or not x[0] > 0:
            continue
        closest = min(closest, resid)
        if resid > opts.tol:
            continue
        feasible += 1
        norm = float(np.sum((x / scale) ** 2))
        if norm < best_norm * (1 - TIE_RTOL):
            best, best_norm, best_i, best_resid = x, norm, i, resid
    if best is None:
        raise InfeasibleError(
            f"no start reached the constraint tolerance {opts.tol!r}; best residual {closest!r}",
            closest,
        )
    phi = GroupParams(**{n: float(v) for n, v in zip(PHI_ORDER, best)})
    return Recovery(phi, best_resid, float(np.sum(best**2)), best_i, feasible)


# --- full pipeline ---


@dataclass
class FitReport:
    theta: SurfaceCoeffs
    phi: GroupParams
    rmse_total: float
    rmse_by_expiry: dict
    residuals: list
    constraint_residual: float
    condition_number: float
    theta_stderr: list = field(default_factory=list)
    dropped: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        out = asdict(self)
        out["theta"] = self.theta.to_dict()
        out["phi"] = self.phi.to_dict()
        out["dropped"] = [{"index": i, "reason": r} for i, r in self.dropped]
        return out

    def to_json(self):
        return json.dumps(_finite(self.to_dict()), indent=2, sort_keys=True)


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def expiry_label(tau):
    """Days to maturity used to label per-expiry outputs."""
    return int(round(tau * 365))


def calibrate(quotes, weights="uniform", min_tau=MIN_TAU, ridge=0.0, options=None):
    """Prepare quotes, fit the surface, recover group parameters, report the fit."""
    opts = options or RecoveryOptions()
    prepared = prepare_quotes(quotes, min_tau)
    fit = fit_theta(prepared, weights, ridge)
    rec = recover_phi(fit.theta, opts)
    resid = fit.residuals
    by_expiry = {}
    for tau in np.unique(prepared.tau):
        sel = prepared.tau == tau
        by_expiry[repr(float(tau))] = float(np.sqrt(np.mean(resid[sel] ** 2)))
    residuals = [
        {"index": int(i), "expiry_years": float(t), "d": float(d), "residual": float(r)}
        for i, t, d, r in zip(prepared.index, prepared.tau, prepared.d, resid)
    ]
    metadata = {
        "weights": weights,
        "min_tau": min_tau,
        "ridge": ridge,
        "seed": opts.seed,
        "n_starts": opts.n_starts,
        "n_quotes": len(quotes),
        "n_used": len(prepared),
        "start_index": rec.start_index,
        "feasible_starts": rec.feasible_starts,
        "phi_norm_sq": rec.norm_sq,
    }
    report = FitReport(
        theta=fit.theta,
        phi=rec.phi,
        rmse_total=float(np.sqrt(np.mean(resid**2))),
        rmse_by_expiry=by_expiry,
        residuals=residuals,
        constraint_residual=rec.constraint_residual,
        condition_number=fit.condition_number,
        theta_stderr=[float(x) for x in fit.stderr],
        dropped=list(prepared.dropped),
        metadata=metadata,
    )
    return report, prepared


def plot_tables(report, prepared):
    """Per-expiry CSV text keyed by file name ``fit_<DTM>.csv``."""
    model = surface_eval(prepared.tau, prepared.d, report.theta)
    out = {}
    for tau in np.unique(prepared.tau):
        sel = np.flatnonzero(prepared.tau == tau)
        sel = sel[np.argsort(prepared.d[sel], kind="stable")]
        lines = ["d,market_iv,model_iv,residual"]
        for j in sel:
            mi, ma = float(model[j]), float(prepared.iv[j])
            lines.append(f"{float(prepared.d[j])!r},{ma!r},{mi!r},{mi - ma!r}")
        name = f"fit_{expiry_label(tau)}.csv"
        if name in out:
            name = f"fit_{expiry_label(tau)}_{float(tau)!r}.csv"
        out[name] = "\n".join(lines) + "\n"
    return out
