"""Budget-constrained bidding in second-price display auctions.

Risk-neutral and exponential-utility bid policies in closed form, the market
estimators that feed them, multiplier calibration and a batch backtester.
"""

from .bidders import RiskAverseBidder, RiskNeutralBidder
from .calibration import (
    DEFAULT_ALPHA_GRID,
    CalibrationError,
    CalibrationReport,
    ConstraintResidual,
    NonMonotoneResidualError,
    calibrate_lambda,
    constraint_residual,
    select_alpha,
)
from .market import (
    LogSchemaError,
    MarketData,
    MarketModel,
    Opportunity,
    SyntheticMarketSpec,
    generate_market,
    load_log,
    write_log,
)
from .policy import (
    BidContext,
    Family,
    PolicyParams,
    bid,
    bid_rap,
    bid_rnp,
    expected_expense,
    lagrangian_rap,
    lagrangian_rnp,
    risk_transform,
)
from .simulation import BatchConfig, BatchResult, MetricsSummary, export_cdf, run_batch, run_experiment
from .special import lambert_w0, normal_cdf, normal_pdf

__version__ = "0.1.0"

__all__ = [
    "BatchConfig",
    "BatchResult",
    "BidContext",
    "CalibrationError",
    "CalibrationReport",
    "ConstraintResidual",
    "DEFAULT_ALPHA_GRID",
    "Family",
    "LogSchemaError",
    "MarketData",
    "MarketModel",
    "MetricsSummary",
    "NonMonotoneResidualError",
    "Opportunity",
    "PolicyParams",
    "RiskAverseBidder",
    "RiskNeutralBidder",
    "SyntheticMarketSpec",
    "bid",
    "bid_rap",
    "bid_rnp",
    "calibrate_lambda",
    "constraint_residual",
    "expected_expense",
    "export_cdf",
    "generate_market",
    "lagrangian_rap",
    "lagrangian_rnp",
    "lambert_w0",
    "load_log",
    "normal_cdf",
    "normal_pdf",
    "risk_transform",
    "run_batch",
    "run_experiment",
    "select_alpha",
    "write_log",
]
