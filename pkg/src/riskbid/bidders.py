"""Estimator wrappers around the bid policies.

``fit(X)`` calibrates the budget multiplier on a population of opportunities
and ``predict(X)`` returns bids, so a bidder can be passed anywhere a policy
object with ``predict`` is accepted (for instance :func:`run_experiment`).
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .calibration import calibrate_lambda
from .policy import Family, PolicyParams, bid

__all__ = ["RiskNeutralBidder", "RiskAverseBidder"]


class _BaseBidder(BaseEstimator):
    def _params(self, lam=0.0):
        raise NotImplementedError

    def fit(self, X, y=None):
        """Calibrate ``lambda_`` so the budget constraint holds on ``X``."""
        if self.market_model is None:
            raise ValueError("market_model is required")
        if self.lam is not None:
            params = self._params(float(self.lam))
            self.report_ = None
        else:
            self.report_ = calibrate_lambda(self.market_model, self._params(), X, tol=self.tol)
            params = self.report_.params
        self.params_ = params
        self.lambda_ = params.lam
        self.n_features_in_ = self.market_model.n_features_in_
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        ctx = self.market_model.context(np.asarray(X, dtype=float))
        return np.atleast_1d(bid(ctx, self.params_))


class RiskNeutralBidder(_BaseBidder):
    """Bids ``v_hat * theta / (1 + lambda)`` under an expected-spend budget.

    Parameters
    ----------
    market_model : MarketModel
        Fitted estimator of click probability and winning-price distribution.
    budget : float
        Budget per opportunity.
    lam : float or None
        Fixed multiplier. ``None`` calibrates it during ``fit``.
    """

    def __init__(self, market_model=None, budget=1.0, lam=None, max_bid=None, tol=1e-6, batch_size=10_000):
        self.market_model = market_model
        self.budget = budget
        self.lam = lam
        self.max_bid = max_bid
        self.tol = tol
        self.batch_size = batch_size

    def _params(self, lam=0.0):
        return PolicyParams(
            Family.RNP, lam=lam, batch_size=self.batch_size, budget=self.budget, max_bid=self.max_bid
        )


class RiskAverseBidder(_BaseBidder):
    """Exponential-utility bidder with batch risk aversion ``alpha``.

    ``alpha`` is defined on the batch scale; the per-opportunity aversion is
    ``alpha / batch_size``.
    """

    def __init__(self, market_model=None, budget=1.0, alpha=1.0, lam=None, max_bid=None, tol=1e-6,
                 batch_size=10_000):
        self.market_model = market_model
        self.budget = budget
        self.alpha = alpha
        self.lam = lam
        self.max_bid = max_bid
        self.tol = tol
        self.batch_size = batch_size

    def _params(self, lam=0.0):
        return PolicyParams(
            Family.RAP, lam=lam, alpha=self.alpha, batch_size=self.batch_size, budget=self.budget,
            max_bid=self.max_bid,
        )
