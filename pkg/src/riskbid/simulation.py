"""Second-price batch backtester with budget early stop."""

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .market import MarketData, as_market_data

__all__ = [
    "BatchConfig",
    "BatchResult",
    "MetricsSummary",
    "run_batch",
    "run_experiment",
    "summarize",
    "sharpe_ratio",
    "export_cdf",
    "read_cdf",
]


@dataclass(frozen=True)
class BatchConfig:
    budget: float
    batch_size: int = 10_000
    n_batches: int = 30
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if int(self.batch_size) < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.budget > 0:
            raise ValueError("budget must be > 0")
        if int(self.n_batches) < 1:
            raise ValueError("n_batches must be >= 1")


@dataclass(frozen=True)
class BatchResult:
    profit: float
    expense: float
    clicks: int
    impressions: int
    opportunities_seen: int
    early_stopped: bool


@dataclass(frozen=True)
class MetricsSummary:
    avg_clicks: float
    avg_profit: float
    avg_expense: float
    avg_impression_rate: float
    sharpe_ratio: Optional[float]
    early_stop_frequency: float
    n_batches: int

    def to_dict(self) -> dict:
        return asdict(self)


def _bids_for(policy, data: MarketData):
    if callable(policy) and not hasattr(policy, "predict"):
        bids = policy(data.X)
    elif hasattr(policy, "predict"):
        bids = policy.predict(data.X)
    else:
        bids = policy
    bids = np.asarray(bids, dtype=float)
    if bids.shape != (len(data),):
        raise ValueError(f"policy returned {bids.shape} bids for {len(data)} opportunities")
    if np.any(np.isnan(bids)):
        raise ValueError("policy returned NaN bids")
    return bids


def _check_labels(data: MarketData):
    if not data.has_prices():
        raise ValueError("every opportunity needs a realized winning price to be simulated")
    if not data.has_clicks():
        raise ValueError("every opportunity needs a click label to be simulated")


def _simulate(bids, price, clicked, total_budget, customer_value) -> BatchResult:
    won = bids >= price
    spend = np.cumsum(np.where(won, price, 0.0))
    # the win that reaches the budget is kept; processing stops right after it
    hit = np.flatnonzero(spend >= total_budget)
    stop = int(hit[0]) + 1 if hit.size else len(bids)
    won = won[:stop]
    expense = float(spend[stop - 1]) if stop else 0.0
    clicks = int(np.sum(clicked[:stop][won]))
    return BatchResult(
        profit=float(customer_value * clicks - expense),
        expense=expense,
        clicks=clicks,
        impressions=int(np.sum(won)),
        opportunities_seen=stop,
        early_stopped=bool(hit.size),
    )


def run_batch(policy, batch, budget: float, customer_value: float, batch_size: Optional[int] = None) -> BatchResult:
    """Replay one batch in order against a fixed total budget ``M * budget``.

    ``policy`` is a bid array, a callable ``X -> bids`` or an object with
    ``predict``. An auction is won when ``bid >= winning_price`` and costs the
    winning price. ``batch_size`` defaults to the batch length.
    """
    data = as_market_data(batch)
    _check_labels(data)
    m = len(data) if batch_size is None else int(batch_size)
    bids = _bids_for(policy, data)
    return _simulate(bids, data.price, data.clicked, m * budget, customer_value)


def _batch_indices(n, config: BatchConfig) -> List[np.ndarray]:
    m = config.batch_size
    if n < m:
        if not config.shuffle:
            raise ValueError(f"dataset has {n} rows, fewer than one batch of {m}, and shuffling is disabled")
        raise ValueError(f"dataset has {n} rows, fewer than one batch of {m}")
    out = []
    if config.shuffle:
        rng = np.random.default_rng(config.seed)
        order, pos = rng.permutation(n), 0
        for _ in range(config.n_batches):
            if pos + m > n:
                order, pos = rng.permutation(n), 0
            out.append(order[pos:pos + m])
            pos += m
    else:
        pos = 0
        for _ in range(config.n_batches):
            out.append(np.arange(pos, pos + m) % n)
            pos = (pos + m) % n
    return out


def sharpe_ratio(profits: Sequence[float]) -> Optional[float]:
    """Mean over sample standard deviation; ``None`` when undefined."""
    p = np.asarray(profits, dtype=float)
    if p.size < 2:
        return None
    sd = float(np.std(p, ddof=1))
    if sd == 0.0 or not math.isfinite(sd):
        return None
    return float(np.mean(p)) / sd


def summarize(results: Sequence[BatchResult], batch_size: int, budget: float) -> MetricsSummary:
    if not results:
        raise ValueError("no batch results to summarize")
    profits = [r.profit for r in results]
    return MetricsSummary(
        avg_clicks=float(np.mean([r.clicks for r in results])),
        avg_profit=float(np.mean(profits)),
        avg_expense=float(np.mean([r.expense for r in results])),
        avg_impression_rate=float(np.mean([r.impressions / r.opportunities_seen for r in results])),
        sharpe_ratio=sharpe_ratio(profits),
        early_stop_frequency=float(np.mean([r.expense / batch_size >= budget for r in results])),
        n_batches=len(results),
    )


def run_experiment(policy, dataset, config: BatchConfig, customer_value: float) -> Tuple[MetricsSummary, List[BatchResult]]:
    """Run ``config.n_batches`` batches and summarize them.

    Batches are contiguous slices of a seeded permutation, without
    replacement inside an epoch; a fresh permutation starts each epoch.
    """
    data = as_market_data(dataset)
    _check_labels(data)
    bids = _bids_for(policy, data)
    results = [
        _simulate(bids[idx], data.price[idx], data.clicked[idx], config.batch_size * config.budget, customer_value)
        for idx in _batch_indices(len(data), config)
    ]
    return summarize(results, config.batch_size, config.budget), results


def export_cdf(results: Sequence[BatchResult], quantity: str, path):
    """Write ``value,cdf`` rows: sorted batch values with levels ``k/n``."""
    if quantity not in ("profit", "expense"):
        raise ValueError("quantity must be 'profit' or 'expense'")
    if not results:
        raise ValueError("no batch results to export")
    values = sorted(getattr(r, quantity) for r in results)
    n = len(values)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "cdf"])
        for k, v in enumerate(values, start=1):
            w.writerow([repr(float(v)), repr(k / n)])


def read_cdf(path) -> Tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["value", "cdf"]:
        raise ValueError(f"{path}: not a CDF export")
    body = np.array([[float(a), float(b)] for a, b in rows[1:]]).reshape(-1, 2)
    return body[:, 0], body[:, 1]


def metrics_json(summary: MetricsSummary, **extra) -> str:
    doc = dict(extra)
    doc["metrics"] = summary.to_dict()
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
