"""Stochastic market model: CTR, Gaussian winning price, constant click value.

Estimators follow the scikit-learn API. The hypothesis class is generalized
linear: logistic regression for the click probability and log-link least
squares for both the mean price and the squared residual, whose square root
(floored at ``sqrt(epsilon)``) is the price standard deviation.
"""

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.linear_model import LogisticRegression, TweedieRegressor
from sklearn.utils.validation import check_array, check_is_fitted

from .policy import BidContext

__all__ = [
    "Opportunity",
    "MarketData",
    "FeatureVocabulary",
    "LogSchemaError",
    "DegenerateFeaturesWarning",
    "LogLinearRegressor",
    "CTRClassifier",
    "ResidualStdRegressor",
    "MarketModel",
    "SyntheticMarketSpec",
    "generate_market",
    "train_mean_price",
    "train_std_price",
    "predict",
    "load_log",
    "write_log",
    "MODEL_FORMAT_VERSION",
]

MODEL_FORMAT_VERSION = 1
PRICE_COL = "winning_price"
CLICK_COL = "clicked"
_CTR_CLIP = 1e-12


class LogSchemaError(ValueError):
    """A CSV log does not follow the expected schema."""


class DegenerateFeaturesWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Opportunity:
    id: str
    features: Tuple[float, ...]
    winning_price: Optional[float] = None
    clicked: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(float(v) for v in self.features))
        if self.winning_price is not None and not math.isfinite(self.winning_price):
            raise ValueError("winning_price must be finite when present")


@dataclass(eq=False)
class MarketData:
    """Columnar dataset of opportunities.

    Missing prices and click labels are stored as NaN.
    """

    ids: np.ndarray
    X: np.ndarray
    price: np.ndarray
    clicked: np.ndarray
    feature_names: Tuple[str, ...] = ()
    vocabulary: Optional["FeatureVocabulary"] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        n = self.X.shape[0]
        self.ids = np.asarray(self.ids, dtype=str).reshape(n)
        self.price = np.asarray(self.price, dtype=float).reshape(n)
        self.clicked = np.asarray(self.clicked, dtype=float).reshape(n)
        if np.any(np.isinf(self.price)):
            raise ValueError("winning prices must be finite")
        if not self.feature_names:
            self.feature_names = tuple(f"x{j}" for j in range(self.X.shape[1]))
        self.feature_names = tuple(self.feature_names)
        if len(self.feature_names) != self.X.shape[1]:
            raise ValueError("feature_names does not match X")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            p, c = self.price[idx], self.clicked[idx]
            return Opportunity(
                id=str(self.ids[idx]),
                features=tuple(self.X[idx]),
                winning_price=None if np.isnan(p) else float(p),
                clicked=None if np.isnan(c) else bool(c),
            )
        return MarketData(
            self.ids[idx], self.X[idx], self.price[idx], self.clicked[idx],
            self.feature_names, self.vocabulary,
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, MarketData):
            return NotImplemented
        return (
            self.feature_names == other.feature_names
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.price, other.price, equal_nan=True)
            and np.array_equal(self.clicked, other.clicked, equal_nan=True)
        )

    @classmethod
    def from_opportunities(cls, opps: Iterable[Opportunity], feature_names=()) -> "MarketData":
        opps = list(opps)
        if not opps:
            d = len(feature_names)
            return cls(np.empty(0, dtype=str), np.empty((0, d)), np.empty(0), np.empty(0), feature_names)
        dims = {len(o.features) for o in opps}
        if len(dims) != 1:
            raise ValueError("opportunities have inconsistent feature dimensionality")
        return cls(
            ids=[o.id for o in opps],
            X=[o.features for o in opps],
            price=[np.nan if o.winning_price is None else o.winning_price for o in opps],
            clicked=[np.nan if o.clicked is None else float(o.clicked) for o in opps],
            feature_names=feature_names,
        )

    def has_prices(self) -> bool:
        return not np.any(np.isnan(self.price))

    def has_clicks(self) -> bool:
        return not np.any(np.isnan(self.clicked))

    def mean_price(self) -> float:
        """Historical average winning price over rows that have one."""
        p = self.price[~np.isnan(self.price)]
        if p.size == 0:
            raise ValueError("no winning prices in dataset")
        return float(np.mean(p))


def as_market_data(data) -> MarketData:
    if isinstance(data, MarketData):
        return data
    return MarketData.from_opportunities(data)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _constant_columns(X):
    if X.shape[0] == 0:
        return np.zeros(X.shape[1], dtype=bool)
    return np.all(X == X[0], axis=0)


def _check_fit_input(X, y, min_samples):
    X = check_array(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError("X and y have different numbers of rows")
    if np.any(~np.isfinite(y)):
        raise ValueError("targets must be present and finite")
    if X.shape[0] < min_samples:
        raise ValueError(f"need at least {min_samples} rows, got {X.shape[0]}")
    const = _constant_columns(X)
    if np.any(const):
        warnings.warn(
            f"{int(const.sum())} constant feature column(s) ignored during fit",
            DegenerateFeaturesWarning,
            stacklevel=3,
        )
    return X, y, ~const


def _check_predict_input(est, X):
    check_is_fitted(est)
    X = check_array(X, dtype=float, ensure_min_samples=0)
    if X.shape[1] != est.n_features_in_:
        raise ValueError(
            f"X has {X.shape[1]} features, but {type(est).__name__} was fit with {est.n_features_in_}"
        )
    return X


class LogLinearRegressor(RegressorMixin, BaseEstimator):
    """Least squares regression with a log link: ``E[y|X] = exp(X @ coef + intercept)``.

    Targets are rescaled by their mean before fitting, so the fit is
    insensitive to the magnitude of ``y`` (squared residuals can be tiny).
    """

    def __init__(self, min_samples=1, max_iter=1000, tol=1e-10):
        self.min_samples = min_samples
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X, y, keep = _check_fit_input(X, y, self.min_samples)
        scale = float(np.mean(y))
        if not scale > 0:
            raise ValueError("log-link regression needs a positive mean target")
        coef = np.zeros(X.shape[1])
        if np.any(keep):
            glm = TweedieRegressor(
                power=0, link="log", alpha=0.0, solver="newton-cholesky",
                max_iter=self.max_iter, tol=self.tol,
            )
            glm.fit(X[:, keep], y / scale)
            coef[keep] = glm.coef_
            intercept = float(glm.intercept_)
        else:
            intercept = 0.0
        self.coef_ = coef
        self.intercept_ = intercept + math.log(scale)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        X = _check_predict_input(self, X)
        return np.exp(X @ self.coef_ + self.intercept_)


class CTRClassifier(ClassifierMixin, BaseEstimator):
    """Unpenalized logistic regression for the click probability."""

    def __init__(self, min_samples=1, max_iter=1000, tol=1e-10):
        self.min_samples = min_samples
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X, y, keep = _check_fit_input(X, y, self.min_samples)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("click labels must be 0/1")
        if np.all(y == y[0]):
            raise ValueError("click labels are all identical; the CTR model is not identifiable")
        coef = np.zeros(X.shape[1])
        if np.any(keep):
            lr = LogisticRegression(penalty=None, solver="newton-cholesky", max_iter=self.max_iter, tol=self.tol)
            lr.fit(X[:, keep], y)
            coef[keep] = lr.coef_.ravel()
            intercept = float(lr.intercept_[0])
        else:
            p = float(np.mean(y))
            intercept = math.log(p / (1.0 - p))
        self.coef_ = coef
        self.intercept_ = intercept
        self.classes_ = np.array([0.0, 1.0])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_ctr(self, X):
        X = _check_predict_input(self, X)
        return np.clip(expit(X @ self.coef_ + self.intercept_), _CTR_CLIP, 1.0 - _CTR_CLIP)

    def predict_proba(self, X):
        p = self.predict_ctr(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_ctr(X) >= 0.5).astype(float)


class ResidualStdRegressor(BaseEstimator):
    """Conditional price standard deviation from squared residuals.

    Fits ``z(X) ~ E[(W - w_hat(X))^2 | X]`` and predicts
    ``sqrt(max(z(X), epsilon))``.
    """

    def __init__(self, epsilon=1e-4, min_samples=1, max_iter=1000, tol=1e-10):
        self.epsilon = epsilon
        self.min_samples = min_samples
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y, mean_estimator):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        X = check_array(X, dtype=float)
        resid_sq = (np.asarray(y, dtype=float).ravel() - mean_estimator.predict(X)) ** 2
        if np.any(~np.isfinite(resid_sq)):
            raise ValueError("winning prices must be present and finite")
        if np.max(resid_sq, initial=0.0) == 0.0:
            self.variance_ = None
        else:
            self.variance_ = LogLinearRegressor(self.min_samples, self.max_iter, self.tol).fit(X, resid_sq)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_variance(self, X):
        X = _check_predict_input(self, X)
        if self.variance_ is None:
            return np.zeros(X.shape[0])
        return self.variance_.predict(X)

    def predict(self, X):
        return np.sqrt(np.maximum(self.predict_variance(X), self.epsilon))


class MarketModel(BaseEstimator):
    """Click probability, mean price and price spread for each opportunity.

    Parameters
    ----------
    customer_value : float
        Value of one click (constant across opportunities). Its default is
        arbitrary; set it in the currency units of your prices.
    epsilon : float
        Variance floor; ``sigma >= sqrt(epsilon)`` always.
    min_samples : int
        Smallest training set accepted.
    """

    def __init__(self, customer_value=50.0, epsilon=1e-4, min_samples=100):
        self.customer_value = customer_value
        self.epsilon = epsilon
        self.min_samples = min_samples

    def fit(self, X, price, clicked):
        if not self.customer_value > 0:
            raise ValueError("customer_value must be > 0")
        X = check_array(X, dtype=float)
        price = np.asarray(price, dtype=float)
        if np.any(np.isnan(price)):
            raise ValueError("training rows must all have a winning price")
        self.mean_price_ = LogLinearRegressor(self.min_samples).fit(X, price)
        self.std_price_ = ResidualStdRegressor(self.epsilon, self.min_samples).fit(X, price, self.mean_price_)
        self.ctr_ = CTRClassifier(self.min_samples).fit(X, clicked)
        self.n_features_in_ = X.shape[1]
        return self

    def fit_data(self, data: MarketData):
        data = as_market_data(data)
        self.fit(data.X, data.price, data.clicked)
        self.vocabulary_ = data.vocabulary
        self.feature_names_in_ = np.asarray(data.feature_names, dtype=object)
        return self

    def predict(self, X):
        """Return ``(theta, w_hat, sigma)`` arrays."""
        check_is_fitted(self)
        X = _check_predict_input(self, X)
        return self.ctr_.predict_ctr(X), self.mean_price_.predict(X), self.std_price_.predict(X)

    def context(self, X) -> BidContext:
        theta, w_hat, sigma = self.predict(X)
        return BidContext(theta, w_hat, sigma, float(self.customer_value))

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        check_is_fitted(self)
        var = self.std_price_.variance_
        vocab = getattr(self, "vocabulary_", None)
        names = getattr(self, "feature_names_in_", None)
        return {
            "format": "riskbid.market_model",
            "version": MODEL_FORMAT_VERSION,
            "n_features": int(self.n_features_in_),
            "feature_names": None if names is None else [str(n) for n in names],
            "customer_value": float(self.customer_value),
            "epsilon": float(self.epsilon),
            "ctr": {"coef": self.ctr_.coef_.tolist(), "intercept": float(self.ctr_.intercept_)},
            "mean_price": {"coef": self.mean_price_.coef_.tolist(), "intercept": float(self.mean_price_.intercept_)},
            "price_variance": None if var is None else {"coef": var.coef_.tolist(), "intercept": float(var.intercept_)},
            "vocabulary": None if vocab is None else vocab.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarketModel":
        if d.get("format") != "riskbid.market_model":
            raise ValueError("not a riskbid market model document")
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {d.get('version')}")
        n = int(d["n_features"])
        model = cls(customer_value=d["customer_value"], epsilon=d["epsilon"])
        model.ctr_ = _restore(CTRClassifier(), d["ctr"], n)
        model.ctr_.classes_ = np.array([0.0, 1.0])
        model.mean_price_ = _restore(LogLinearRegressor(), d["mean_price"], n)
        std = ResidualStdRegressor(epsilon=d["epsilon"])
        std.variance_ = None if d["price_variance"] is None else _restore(LogLinearRegressor(), d["price_variance"], n)
        std.n_features_in_ = n
        model.std_price_ = std
        model.n_features_in_ = n
        if d.get("vocabulary") is not None:
            model.vocabulary_ = FeatureVocabulary.from_dict(d["vocabulary"])
        if d.get("feature_names") is not None:
            model.feature_names_in_ = np.asarray(d["feature_names"], dtype=object)
        return model

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "MarketModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def from_spec(cls, spec: "SyntheticMarketSpec", customer_value=50.0, epsilon=1e-4) -> "MarketModel":
        """The exact generating model of a synthetic market."""
        d = spec.feature_dim
        model = cls(customer_value=customer_value, epsilon=epsilon)
        model.ctr_ = _restore(CTRClassifier(), {"coef": spec.ctr_weights, "intercept": spec.ctr_intercept}, d)
        model.ctr_.classes_ = np.array([0.0, 1.0])
        model.mean_price_ = _restore(
            LogLinearRegressor(), {"coef": spec.price_weights, "intercept": spec.price_intercept}, d
        )
        std = ResidualStdRegressor(epsilon=epsilon)
        # sigma = r * w_hat  =>  sigma^2 = exp(2 (a + X w) + 2 log r)
        std.variance_ = _restore(
            LogLinearRegressor(),
            {
                "coef": [2.0 * w for w in spec.price_weights],
                "intercept": 2.0 * (spec.price_intercept + math.log(spec.noise_ratio)),
            },
            d,
        )
        std.n_features_in_ = d
        model.std_price_ = std
        model.n_features_in_ = d
        return model


def _restore(est, params, n_features):
    est.coef_ = np.asarray(params["coef"], dtype=float).reshape(n_features)
    est.intercept_ = float(params["intercept"])
    est.n_features_in_ = n_features
    return est


def train_mean_price(data, min_samples=100) -> LogLinearRegressor:
    data = as_market_data(data)
    if not data.has_prices():
        raise ValueError("every row needs a winning price to train the price model")
    return LogLinearRegressor(min_samples=min_samples).fit(data.X, data.price)


def train_std_price(data, mean_est, epsilon=1e-4, min_samples=100) -> ResidualStdRegressor:
    data = as_market_data(data)
    if not data.has_prices():
        raise ValueError("every row needs a winning price to train the price model")
    return ResidualStdRegressor(epsilon=epsilon, min_samples=min_samples).fit(data.X, data.price, mean_est)


def predict(model: MarketModel, features):
    """``(theta, w_hat, sigma)`` for one feature vector (floats) or a matrix (arrays)."""
    f = np.asarray(features, dtype=float)
    theta, w_hat, sigma = model.predict(np.atleast_2d(f))
    if f.ndim == 1:
        return float(theta[0]), float(w_hat[0]), float(sigma[0])
    return theta, w_hat, sigma


# ---------------------------------------------------------------------------
# Synthetic market
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticMarketSpec:
    """Generator for an i.i.d. market with known ground truth.

    Features are standard normal. ``theta = expit(ctr_intercept + X @ ctr_weights)``,
    ``w_hat = exp(price_intercept + X @ price_weights)``, ``sigma = noise_ratio * w_hat``
    and ``W ~ N(w_hat, sigma)`` untruncated.
    """

    feature_dim: int = 6
    ctr_weights: Tuple[float, ...] = (0.4, -0.3, 0.25, 0.0, 0.15, -0.1)
    ctr_intercept: float = -3.5
    price_weights: Tuple[float, ...] = (0.25, 0.1, -0.2, 0.15, 0.0, 0.1)
    price_intercept: float = 0.0
    noise_ratio: float = 0.25
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ctr_weights", tuple(float(v) for v in self.ctr_weights))
        object.__setattr__(self, "price_weights", tuple(float(v) for v in self.price_weights))
        if int(self.feature_dim) < 1:
            raise ValueError("feature_dim must be positive")
        if len(self.ctr_weights) != self.feature_dim or len(self.price_weights) != self.feature_dim:
            raise ValueError("weight vectors must have length feature_dim")
        if not (0.0 < self.noise_ratio <= 1.0 / 3.0):
            raise ValueError("noise_ratio must lie in (0, 1/3] so that w_hat >= 3 sigma")
        if not all(math.isfinite(v) for v in (*self.ctr_weights, *self.price_weights, self.ctr_intercept, self.price_intercept)):
            raise ValueError("weights must be finite")

    def true_ctr(self, X):
        return expit(self.ctr_intercept + np.asarray(X) @ np.asarray(self.ctr_weights))

    def true_mean_price(self, X):
        return np.exp(self.price_intercept + np.asarray(X) @ np.asarray(self.price_weights))

    def true_std_price(self, X):
        return self.noise_ratio * self.true_mean_price(X)

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "ctr_weights": list(self.ctr_weights),
            "ctr_intercept": self.ctr_intercept,
            "price_weights": list(self.price_weights),
            "price_intercept": self.price_intercept,
            "noise_ratio": self.noise_ratio,
            "seed": self.seed,
        }


def generate_market(spec: SyntheticMarketSpec, n: int) -> MarketData:
    """Draw ``n`` i.i.d. opportunities with realized prices and clicks."""
    if int(n) < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((n, spec.feature_dim))
    w_hat = spec.true_mean_price(X)
    price = w_hat + spec.noise_ratio * w_hat * rng.standard_normal(n)
    clicked = (rng.random(n) < spec.true_ctr(X)).astype(float)
    width = len(str(n - 1))
    ids = np.array([f"{i:0{width}d}" for i in range(n)])
    return MarketData(ids, X, price, clicked)


# ---------------------------------------------------------------------------
# CSV logs
# ---------------------------------------------------------------------------

@dataclass
class FeatureVocabulary:
    """One-hot vocabulary for categorical log columns.

    Unseen categories encode as an all-zero block.
    """

    categories: Dict[str, List[str]] = field(default_factory=dict)

    @classmethod
    def build(cls, columns: Sequence[str], values: Dict[str, List[str]]) -> "FeatureVocabulary":
        return cls({c: sorted(set(values[c])) for c in columns})

    def encoded_names(self, column: str) -> List[str]:
        return [f"{column}={v}" for v in self.categories[column]]

    def encode(self, column: str, values: Sequence[str]) -> np.ndarray:
        cats = self.categories[column]
        index = {v: j for j, v in enumerate(cats)}
        out = np.zeros((len(values), len(cats)))
        for i, v in enumerate(values):
            j = index.get(v)
            if j is not None:
                out[i, j] = 1.0
        return out

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in sorted(self.categories.items())}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureVocabulary":
        return cls({k: list(v) for k, v in d.items()})


def _parse_optional_float(text, line_no, col):
    text = text.strip()
    if text == "":
        return math.nan
    try:
        v = float(text)
    except ValueError:
        raise LogSchemaError(f"line {line_no}: column {col!r} is not numeric: {text!r}") from None
    if not math.isfinite(v):
        raise LogSchemaError(f"line {line_no}: column {col!r} is not finite: {text!r}")
    return v


def load_log(path, categorical: Sequence[str] = (), vocabulary: Optional[FeatureVocabulary] = None) -> MarketData:
    """Read a CSV log ``id,<features...>,winning_price,clicked``.

    Columns listed in ``categorical`` are one-hot encoded, using ``vocabulary``
    when given (e.g. the one persisted with a trained model) or one built from
    this file otherwise. All other feature columns must be numeric. Errors
    name the offending line.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LogSchemaError(f"{path}: missing header") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0] != "id" or header[-2:] != [PRICE_COL, CLICK_COL]:
            raise LogSchemaError(f"{path}: header must be 'id,<features...>,{PRICE_COL},{CLICK_COL}'")
        feat_cols = header[1:-2]
        unknown = set(categorical) - set(feat_cols)
        if unknown:
            raise LogSchemaError(f"{path}: categorical columns not in header: {sorted(unknown)}")
        cat_idx = {c: feat_cols.index(c) for c in categorical}
        num_cols = [c for c in feat_cols if c not in cat_idx]

        ids, nums, prices, clicks = [], [], [], []
        raw_cats: Dict[str, List[str]] = {c: [] for c in categorical}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise LogSchemaError(f"line {line_no}: expected {len(header)} fields, got {len(row)}")
            ids.append(row[0])
            feats = row[1:-2]
            vals = []
            for c, text in zip(feat_cols, feats):
                if c in cat_idx:
                    raw_cats[c].append(text.strip())
                    continue
                v = _parse_optional_float(text, line_no, c)
                if math.isnan(v):
                    raise LogSchemaError(f"line {line_no}: feature {c!r} is blank")
                vals.append(v)
            nums.append(vals)
            prices.append(_parse_optional_float(row[-2], line_no, PRICE_COL))
            c = row[-1].strip()
            if c not in ("", "0", "1"):
                raise LogSchemaError(f"line {line_no}: {CLICK_COL} must be 0, 1 or blank, got {c!r}")
            clicks.append(math.nan if c == "" else float(c))

    n = len(ids)
    X_num = np.asarray(nums, dtype=float).reshape(n, len(num_cols))
    blocks, names = [X_num], list(num_cols)
    if categorical:
        if vocabulary is None:
            vocabulary = FeatureVocabulary.build(categorical, raw_cats)
        for c in categorical:
            blocks.append(vocabulary.encode(c, raw_cats[c]))
            names.extend(vocabulary.encoded_names(c))
    X = np.hstack(blocks) if blocks else np.empty((n, 0))
    return MarketData(np.asarray(ids, dtype=str), X, prices, clicks, tuple(names), vocabulary if categorical else None)


def _fmt(v):
    return "" if np.isnan(v) else repr(float(v))


def write_log(data: MarketData, path):
    """Write numeric-feature data in the CSV log schema (lossless for floats)."""
    data = as_market_data(data)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *data.feature_names, PRICE_COL, CLICK_COL])
        for i in range(len(data)):
            c = data.clicked[i]
            w.writerow([
                data.ids[i],
                *(repr(float(v)) for v in data.X[i]),
                _fmt(data.price[i]),
                "" if np.isnan(c) else str(int(c)),
            ])
