"""Closed-form bid policies for second-price auctions with Gaussian winning prices.

Every function broadcasts over numpy arrays, so a :class:`BidContext` may hold
one opportunity or a whole population. Bids may be ``np.inf``; the formulas
below then evaluate to their exact limits (``Phi -> 1``, ``phi -> 0``).

Notation used in comments: ``z = (b - w_hat) / sigma``, ``a = alpha / M`` is the
per-opportunity risk aversion, ``B`` the budget per opportunity.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .special import _cdf, _log_cdf, _pdf, lambert_w0_exp

__all__ = [
    "Family",
    "BidContext",
    "PolicyParams",
    "win_probability",
    "expected_revenue",
    "expected_expense",
    "risk_transform",
    "risk_transform_plus_one",
    "lagrangian_rnp",
    "lagrangian_rap",
    "rap_stationary_bid",
    "default_max_bid",
    "bid_rnp",
    "bid_rap",
    "bid",
    "entropic_risk",
]


class Family(str, Enum):
    RNP = "rnp"
    RAP = "rap"


@dataclass(frozen=True)
class BidContext:
    """Model outputs for one or many opportunities.

    ``theta`` is the click probability, ``w_hat``/``sigma`` the mean and
    standard deviation of the Gaussian winning price, ``v_hat`` the value of a
    click.
    """

    theta: np.ndarray
    w_hat: np.ndarray
    sigma: np.ndarray
    v_hat: float

    def __post_init__(self):
        for name in ("theta", "w_hat", "sigma"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr if arr.ndim else float(arr))
        if not np.all((self.theta >= 0.0) & (self.theta <= 1.0)):
            raise ValueError("theta must lie in [0, 1]")
        if not np.all(self.sigma > 0.0):
            raise ValueError("sigma must be strictly positive")
        v = np.asarray(self.v_hat, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("v_hat must be finite and nonnegative")
        object.__setattr__(self, "v_hat", v if v.ndim else float(v))

    @property
    def value(self):
        """Expected value of the opportunity, ``v_hat * theta``."""
        return self.v_hat * self.theta

    def __len__(self):
        return int(np.size(self.theta))

    def take(self, idx):
        v = self.v_hat if np.ndim(self.v_hat) == 0 else np.asarray(self.v_hat)[idx]
        return BidContext(
            np.asarray(self.theta)[idx], np.asarray(self.w_hat)[idx], np.asarray(self.sigma)[idx], v
        )


@dataclass(frozen=True)
class PolicyParams:
    """Everything needed to price a bid besides the opportunity itself.

    ``alpha`` is the batch-level risk aversion; the per-opportunity value
    ``alpha / batch_size`` enters the formulas. ``max_bid=None`` uses the
    per-opportunity default ``10 * (w_hat + 6 sigma)``.
    """

    family: Family = Family.RNP
    lam: float = 0.0
    alpha: float = 0.0
    batch_size: int = 10_000
    budget: float = 1.0
    max_bid: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lam must be finite and >= 0")
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError("alpha must be finite and >= 0")
        if int(self.batch_size) < 1:
            raise ValueError("batch_size must be a positive integer")
        if not (self.budget > 0 and np.isfinite(self.budget)):
            raise ValueError("budget must be positive and finite")
        if self.max_bid is not None and not self.max_bid > 0:
            raise ValueError("max_bid must be positive")
        if self.family is Family.RAP and not self.alpha_prime > 0:
            raise ValueError("RAP requires alpha > 0")

    @property
    def alpha_prime(self) -> float:
        return self.alpha / self.batch_size

    def replace(self, **changes) -> "PolicyParams":
        fields = dict(
            family=self.family, lam=self.lam, alpha=self.alpha, batch_size=self.batch_size,
            budget=self.budget, max_bid=self.max_bid,
        )
        fields.update(changes)
        return PolicyParams(**fields)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "lambda": float(self.lam),
            "alpha": float(self.alpha),
            "batch_size": int(self.batch_size),
            "budget_per_opp": float(self.budget),
            "max_bid": None if self.max_bid is None else float(self.max_bid),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyParams":
        return cls(
            family=d["family"], lam=d["lambda"], alpha=d["alpha"], batch_size=d["batch_size"],
            budget=d["budget_per_opp"], max_bid=d.get("max_bid"),
        )


def _z(ctx, b):
    return (np.asarray(b, dtype=float) - ctx.w_hat) / ctx.sigma


def win_probability(ctx: BidContext, b):
    """P(W <= b | X) under the Gaussian price model."""
    return _cdf(_z(ctx, b))


def expected_revenue(ctx: BidContext, b):
    return ctx.value * win_probability(ctx, b)


def expected_expense(ctx: BidContext, b):
    """E[W 1{W <= b} | X] = w_hat Phi(z) - sigma phi(z)."""
    z = _z(ctx, b)
    return ctx.w_hat * _cdf(z) - ctx.sigma * _pdf(z)


def _gammas(ctx, ap, budget):
    g2 = -ap * budget
    shift = ap * ctx.w_hat + 0.5 * (ap * ctx.sigma) ** 2  # gamma_1 - gamma_2
    return g2 + shift, g2, shift


def _check_ap(ap):
    if not ap > 0:
        raise ValueError("risk transform needs alpha / batch_size > 0; use the risk-neutral path")


def risk_transform(ctx: BidContext, params: PolicyParams, b):
    """Normalized expected exponential utility of one opportunity's expense.

    Returns ``h = -E[exp(a W s(b, W)) | X] * exp(-a B)``; the batch utility
    constraint is equivalent to ``E[h] >= -1``.
    """
    ap = params.alpha_prime
    _check_ap(ap)
    g1, g2, _ = _gammas(ctx, ap, params.budget)
    z = _z(ctx, b)
    z1 = z - ap * ctx.sigma
    with np.errstate(over="ignore"):
        tail = np.exp(g1 + _log_cdf(z1))
    e2 = np.exp(g2)
    return -tail - e2 + e2 * _cdf(z)


def _cdf_diff(z, z1):
    # Phi(z) - Phi(z1) for z >= z1, taken in whichever tail keeps precision
    upper = z1 > 0
    return np.where(upper, _cdf(-z1) - _cdf(-z), _cdf(z) - _cdf(z1))


def risk_transform_plus_one(ctx: BidContext, params: PolicyParams, b):
    """``1 + h(b, X)`` without the cancellation of forming ``h`` first.

    This is ``-residual`` of a single opportunity: nonnegative means the
    entropic budget constraint has slack. Behaves like ``a * (B - g)`` as
    ``a -> 0``.
    """
    ap = params.alpha_prime
    _check_ap(ap)
    g1, g2, shift = _gammas(ctx, ap, params.budget)
    z = _z(ctx, b)
    z1 = z - ap * ctx.sigma
    e2 = np.exp(g2)
    with np.errstate(over="ignore", invalid="ignore"):
        p1 = _cdf(z1)
        # e^{g2} [Phi(z) - Phi(z1) - expm1(shift) Phi(z1)]
        small = -np.expm1(g2) + e2 * (_cdf_diff(z, z1) - np.expm1(np.minimum(shift, 30.0)) * p1)
        large = -np.expm1(g2) + e2 * _cdf(z) - np.exp(g1 + _log_cdf(z1))
    return np.where(shift < 30.0, small, large)


def lagrangian_rnp(ctx: BidContext, lam, budget, b):
    """Risk-neutral Lagrangian: revenue - g - lam * (g - B)."""
    g = expected_expense(ctx, b)
    return expected_revenue(ctx, b) - g - lam * (g - budget)


def lagrangian_rap(ctx: BidContext, params: PolicyParams, b):
    """Risk-averse Lagrangian: revenue - g + lam * (1 + h).

    The penalty is ``-lam * (-1 - h)``, i.e. the multiplier times the
    constraint residual, mirroring the risk-neutral case.
    """
    profit = expected_revenue(ctx, b) - expected_expense(ctx, b)
    lam = params.lam
    if np.all(lam == 0):
        return profit + np.zeros(np.shape(b))
    with np.errstate(invalid="ignore", over="ignore"):
        pen = lam * risk_transform_plus_one(ctx, params, b)
    # exp overflow in h means an unbounded constraint violation
    pen = np.where(np.isnan(pen), -np.inf, pen)
    return profit + pen


def rap_stationary_bid(ctx: BidContext, params: PolicyParams):
    """Unclamped stationary point of the risk-averse Lagrangian.

    ``b = c - W0(lam a exp(a (c - B))) / a`` with ``c = v_hat theta + lam exp(-a B)``.
    The Lambert argument is handled in log space so it cannot overflow.
    """
    ap = params.alpha_prime
    _check_ap(ap)
    lam = params.lam
    c = ctx.value + lam * np.exp(-ap * params.budget)
    with np.errstate(divide="ignore"):
        log_arg = np.log(lam * ap) + ap * (c - params.budget)
    w = lambert_w0_exp(log_arg)
    return c - w / ap


def default_max_bid(ctx: BidContext):
    return 10.0 * (ctx.w_hat + 6.0 * ctx.sigma)


# relative margin an endpoint candidate must win by
_TIE_RTOL = 1e-12


def _pick(candidates, values, max_bid, scale):
    """Choose among ``(0, interior, inf)`` by objective value.

    Both objectives are unimodal in ``b`` (their derivative is the price
    density times a decreasing function), so in exact arithmetic the interior
    candidate is never beaten. An endpoint therefore wins only when it is
    better by more than rounding, e.g. when the interior value overflowed;
    otherwise an interior optimum deep in the price tail could lose to an
    endpoint by one ulp. Between the endpoints, ties go to the smaller bid.
    ``scale`` is the magnitude of the terms summed into the objective.
    """
    v0, vi, vinf = values
    with np.errstate(invalid="ignore"):
        mags = [np.where(np.isfinite(v), np.abs(v), 0.0) for v in values]
        tol = _TIE_RTOL * (np.maximum(np.maximum(mags[0], mags[1]), mags[2]) + scale)
        endpoint = np.where(vinf > v0, 2, 0)
        best_end = np.maximum(v0, vinf)
        use_end = ~(vi >= best_end - tol)
    idx = np.where(use_end, endpoint, 1)
    chosen = np.choose(idx, candidates)
    return np.where(np.isposinf(chosen), max_bid, chosen)


def _resolve_max_bid(ctx, max_bid):
    if max_bid is None:
        return default_max_bid(ctx)
    return np.broadcast_to(np.asarray(max_bid, dtype=float), np.shape(ctx.w_hat))


def bid_rnp(ctx: BidContext, lam, budget, max_bid=None):
    """Risk-neutral bid: best of ``{0, v_hat theta / (1 + lam), inf}``.

    The infinite candidate is scored analytically and executed as ``max_bid``.
    """
    if np.any(np.asarray(lam) < 0):
        raise ValueError("lam must be >= 0")
    mb = _resolve_max_bid(ctx, max_bid)
    shape = np.broadcast(ctx.theta, ctx.w_hat).shape
    zero = np.zeros(shape)
    interior = np.minimum(np.broadcast_to(ctx.value / (1.0 + lam), shape), mb)
    inf = np.full(shape, np.inf)
    cands = [zero, interior, inf]
    vals = [lagrangian_rnp(ctx, lam, budget, c) for c in cands]
    out = _pick(cands, vals, mb, ctx.value + (1.0 + lam) * ctx.w_hat + lam * budget)
    return float(out) if out.ndim == 0 else out


def bid_rap(ctx: BidContext, params: PolicyParams):
    """Risk-averse bid: best of ``{0, clamp(stationary point), inf}``."""
    mb = _resolve_max_bid(ctx, params.max_bid)
    shape = np.broadcast(ctx.theta, ctx.w_hat).shape
    zero = np.zeros(shape)
    interior = np.clip(np.broadcast_to(rap_stationary_bid(ctx, params), shape), 0.0, mb)
    inf = np.full(shape, np.inf)
    cands = [zero, interior, inf]
    vals = [lagrangian_rap(ctx, params, c) for c in cands]
    # 1 + h sums terms of order 1 and exp(gamma_2) <= 1
    out = _pick(cands, vals, mb, ctx.value + ctx.w_hat + 4.0 * params.lam)
    return float(out) if out.ndim == 0 else out


def bid(ctx: BidContext, params: PolicyParams):
    if params.family is Family.RNP:
        return bid_rnp(ctx, params.lam, params.budget, params.max_bid)
    return bid_rap(ctx, params)


def entropic_risk(samples, alpha):
    """``(1/alpha) log mean(exp(alpha * x))``, shifted by the max to avoid overflow."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("entropic_risk needs at least one sample")
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    m = x.max()
    y = alpha * (x - m)
    # log(mean(e^y)) with y <= 0; log1p/expm1 keep precision when alpha is tiny
    return float(m + np.log1p(np.mean(np.expm1(y))) / alpha)
