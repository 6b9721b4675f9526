"""Lagrange multiplier calibration and risk-aversion selection."""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .market import MarketData, MarketModel, as_market_data
from .policy import BidContext, Family, PolicyParams, bid, expected_expense, risk_transform_plus_one
from .simulation import BatchConfig, run_experiment

__all__ = [
    "CalibrationError",
    "NonMonotoneResidualError",
    "ConstraintResidual",
    "CalibrationReport",
    "population_context",
    "constraint_residual",
    "default_residual_tol",
    "calibrate_lambda",
    "select_alpha",
    "DEFAULT_ALPHA_GRID",
]

# per-opportunity risk aversion alpha / M; multiply by M to get alpha
DEFAULT_ALPHA_GRID = (0.01, 0.05, 0.28, 0.5, 1.0, 2.0, 5.0)
LAMBDA_CAP = 2.0 ** 60


class CalibrationError(RuntimeError):
    pass


class NonMonotoneResidualError(CalibrationError):
    pass


@dataclass(frozen=True)
class ConstraintResidual:
    lam: float
    residual: float
    feasible: bool


@dataclass
class CalibrationReport:
    family: str
    lambda_star: float
    residual_at_star: float
    iterations: int
    bracket: Tuple[float, float]
    params: PolicyParams
    alpha_star: Optional[float] = None
    trace: List[ConstraintResidual] = field(default_factory=list)
    alpha_grid_results: List[dict] = field(default_factory=list)
    flagged: bool = False
    residual_tol: float = 0.0

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "lambda_star": self.lambda_star,
            "alpha_star": self.alpha_star,
            "residual_at_star": self.residual_at_star,
            "residual_tol": self.residual_tol,
            "iterations": self.iterations,
            "bracket": list(self.bracket),
            "params": self.params.to_dict(),
            "trace": [asdict(t) for t in self.trace],
            "alpha_grid_results": list(self.alpha_grid_results),
            "flagged": self.flagged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationReport":
        return cls(
            family=d["family"],
            lambda_star=d["lambda_star"],
            alpha_star=d.get("alpha_star"),
            residual_at_star=d["residual_at_star"],
            residual_tol=d.get("residual_tol", 0.0),
            iterations=d["iterations"],
            bracket=tuple(d["bracket"]),
            params=PolicyParams.from_dict(d["params"]),
            trace=[ConstraintResidual(**t) for t in d.get("trace", [])],
            alpha_grid_results=list(d.get("alpha_grid_results", [])),
            flagged=d.get("flagged", False),
        )

    def dumps(self, **header) -> str:
        doc = dict(header)
        doc["report"] = self.to_dict()
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def population_context(model: Optional[MarketModel], population) -> BidContext:
    """Bid contexts for a population given as a ``BidContext``, ``MarketData`` or feature matrix."""
    if isinstance(population, BidContext):
        return population
    if model is None:
        raise ValueError("a market model is needed to score raw features")
    if isinstance(population, MarketData):
        X = population.X
    elif isinstance(population, (list, tuple)) and population and hasattr(population[0], "features"):
        X = as_market_data(population).X
    else:
        X = np.asarray(population, dtype=float)
    if len(X) == 0:
        raise ValueError("population is empty")
    return model.context(X)


def default_residual_tol(params: PolicyParams) -> float:
    """1e-9 * B, in the units of the residual (RAP residuals scale like ``alpha' B``)."""
    if params.family is Family.RNP:
        return 1e-9 * params.budget
    return 1e-9 * params.budget * params.alpha_prime


def _residual(ctx: BidContext, params: PolicyParams) -> float:
    b = bid(ctx, params)
    if params.family is Family.RNP:
        return float(np.mean(expected_expense(ctx, b))) - params.budget
    return -float(np.mean(risk_transform_plus_one(ctx, params, b)))


def constraint_residual(model, params: PolicyParams, population, tol: float = 0.0) -> ConstraintResidual:
    """Empirical constraint residual of the bid policy at ``params.lam``.

    ``mean(g) - B`` for RNP and ``-1 - mean(h)`` for RAP; feasible when
    ``residual <= tol``.
    """
    ctx = population_context(model, population)
    r = _residual(ctx, params)
    return ConstraintResidual(float(params.lam), r, bool(r <= tol))


def calibrate_lambda(model, params: PolicyParams, population, tol: float = 1e-6,
                     residual_tol: Optional[float] = None) -> CalibrationReport:
    """Smallest feasible multiplier by doubling then bisection.

    A multiplier is feasible when its residual is ``<= 0``. Returns
    ``lambda* = 0`` when the unpenalized policy is feasible. Otherwise doubles
    from 1 until feasible (giving up past ``2**60``) and bisects until the
    bracket is narrower than ``tol * max(1, hi)`` or the feasible end has a
    residual in ``[-residual_tol, 0]``. The returned multiplier is always the
    feasible end. Residuals that rise with the multiplier by more than
    ``residual_tol`` raise :class:`NonMonotoneResidualError`.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    ctx = population_context(model, population)
    rtol = default_residual_tol(params) if residual_tol is None else float(residual_tol)
    trace: List[ConstraintResidual] = []

    def evaluate(lam):
        r = _residual(ctx, params.replace(lam=lam))
        if not math.isfinite(r):
            raise CalibrationError(f"residual is not finite at lambda={lam!r}")
        trace.append(ConstraintResidual(lam, r, r <= 0.0))
        return r

    def report(lam, r, lo, hi):
        return CalibrationReport(
            family=params.family.value,
            lambda_star=lam,
            alpha_star=params.alpha if params.family is Family.RAP else None,
            residual_at_star=r,
            residual_tol=rtol,
            iterations=len(trace),
            bracket=(lo, hi),
            params=params.replace(lam=lam),
            trace=trace,
        )

    r0 = evaluate(0.0)
    if r0 <= 0.0:
        return report(0.0, r0, 0.0, 0.0)

    lo, r_lo, hi = 0.0, r0, 1.0
    while True:
        r_hi = evaluate(hi)
        if r_hi <= 0.0:
            break
        if r_hi > r_lo + rtol:
            raise NonMonotoneResidualError(
                f"residual rose from {r_lo!r} at lambda={lo!r} to {r_hi!r} at lambda={hi!r}"
            )
        if hi >= LAMBDA_CAP:
            raise CalibrationError(
                f"no feasible lambda up to 2**60; residual there is {r_hi!r} (tolerance {rtol!r})"
            )
        lo, r_lo, hi = hi, r_hi, hi * 2.0

    while hi - lo > tol * max(1.0, hi) and r_hi < -rtol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        r_mid = evaluate(mid)
        if not (r_lo + rtol >= r_mid >= r_hi - rtol):
            raise NonMonotoneResidualError(
                f"residual {r_mid!r} at lambda={mid!r} is outside the bracket values {r_lo!r}, {r_hi!r}"
            )
        if r_mid <= 0.0:
            hi, r_hi = mid, r_mid
        else:
            lo, r_lo = mid, r_mid
    return report(hi, r_hi, lo, hi)


def select_alpha(model: MarketModel, base_params: PolicyParams, validation, alpha_grid: Sequence[float],
                 batches: int, population=None, seed: int = 0, max_early_stop: float = 0.05,
                 tol: float = 1e-6) -> CalibrationReport:
    """Pick the risk aversion with the best validation Sharpe ratio.

    Each ``alpha`` gets its own multiplier from :func:`calibrate_lambda` on
    ``population`` (defaults to the validation features), then the policy is
    backtested on ``validation``. Among grid points whose early-stop frequency
    is at most ``max_early_stop`` the highest profit Sharpe ratio wins. If none
    qualifies the lowest early-stop frequency is returned and the report is
    flagged.
    """
    validation = as_market_data(validation)
    if len(validation) == 0:
        raise ValueError("validation set is empty")
    if not alpha_grid:
        raise ValueError("alpha_grid is empty")
    pop_ctx = population_context(model, validation if population is None else population)
    val_ctx = model.context(validation.X)
    config = BatchConfig(
        budget=base_params.budget, batch_size=base_params.batch_size, n_batches=batches, seed=seed
    )

    rows, reports = [], []
    for alpha in alpha_grid:
        p = base_params.replace(family=Family.RAP, alpha=float(alpha))
        try:
            rep = calibrate_lambda(None, p, pop_ctx, tol=tol)
        except CalibrationError as exc:
            rows.append({"alpha": float(alpha), "error": str(exc)})
            reports.append(None)
            continue
        bids = bid(val_ctx, rep.params)
        summary, _ = run_experiment(bids, validation, config, model.customer_value)
        row = {"alpha": float(alpha), "lambda": rep.lambda_star}
        row.update(summary.to_dict())
        rows.append(row)
        reports.append(rep)

    ok = [i for i, r in enumerate(rows) if reports[i] is not None]
    if not ok:
        raise CalibrationError("calibration failed for every alpha in the grid")

    def sharpe_key(i):
        s = rows[i]["sharpe_ratio"]
        return -math.inf if s is None else s

    passing = [i for i in ok if rows[i]["early_stop_frequency"] <= max_early_stop]
    if passing:
        best = max(passing, key=sharpe_key)  # max keeps the first of equal keys
        flagged = False
    else:
        best = min(ok, key=lambda i: rows[i]["early_stop_frequency"])
        flagged = True
    chosen = reports[best]
    chosen.alpha_grid_results = rows
    chosen.flagged = flagged
    return chosen
