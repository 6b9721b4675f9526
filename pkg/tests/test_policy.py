import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from riskbid.policy import (
    BidContext,
    Family,
    PolicyParams,
    bid,
    bid_rap,
    bid_rnp,
    default_max_bid,
    entropic_risk,
    expected_expense,
    expected_revenue,
    lagrangian_rap,
    lagrangian_rnp,
    rap_stationary_bid,
    risk_transform,
    risk_transform_plus_one,
    win_probability,
)
from riskbid.special import normal_pdf

import oracles


def random_ctx(rng):
    # expected value between 5% and 300% of the mean price: the range where bids compete
    w = rng.uniform(0.5, 200.0)
    theta = rng.uniform(1e-3, 0.9)
    return BidContext(
        theta=theta,
        w_hat=w,
        sigma=w * rng.uniform(0.05, 1 / 3),
        v_hat=w * rng.uniform(0.05, 3.0) / theta,
    )


def rap(lam, alpha_prime, budget, **kw):
    return PolicyParams(Family.RAP, lam=lam, alpha=alpha_prime, batch_size=1, budget=budget, **kw)


# --- value types -----------------------------------------------------------

def test_context_validation():
    with pytest.raises(ValueError):
        BidContext(0.1, 10.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        BidContext(1.5, 10.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        BidContext(0.1, math.nan, 1.0, 1.0)
    ctx = BidContext(np.array([0.1, 0.2]), np.array([1.0, 2.0]), np.array([0.1, 0.2]), 10.0)
    assert len(ctx) == 2
    assert ctx.take([1]).w_hat.tolist() == [2.0]
    np.testing.assert_allclose(ctx.value, [1.0, 2.0])


def test_params_validation_and_round_trip():
    with pytest.raises(ValueError):
        PolicyParams(Family.RAP, alpha=0.0)
    with pytest.raises(ValueError):
        PolicyParams(lam=-1.0)
    with pytest.raises(ValueError):
        PolicyParams(budget=0.0)
    with pytest.raises(ValueError):
        PolicyParams(max_bid=0.0)
    p = PolicyParams("rap", lam=0.5, alpha=20.0, batch_size=100, budget=3.0, max_bid=9.0)
    assert p.alpha_prime == 0.2
    assert PolicyParams.from_dict(p.to_dict()) == p
    # alpha is ignored by the risk-neutral family
    assert PolicyParams(Family.RNP, alpha=0.0).family is Family.RNP


# --- building blocks ------------------------------------------------------

def test_win_probability_examples():
    ctx = BidContext(0.1, 100.0, 10.0, 1.0)
    assert win_probability(ctx, 100.0) == 0.5
    assert win_probability(ctx, math.inf) == 1.0
    assert win_probability(ctx, 110.0) == pytest.approx(stats.norm.cdf(1.0), rel=1e-12)
    assert win_probability(ctx, 110.0) == pytest.approx(0.8413447, abs=1e-7)


def test_expected_revenue_examples():
    ctx = BidContext(0.01, 100.0, 10.0, 1000.0)
    assert expected_revenue(ctx, 100.0) == pytest.approx(5.0, rel=1e-15)
    assert expected_revenue(ctx, 0.0) <= 1000 * 0.01 * stats.norm.cdf(-10.0) * (1 + 1e-12)


def test_expected_expense_examples():
    ctx = BidContext(0.1, 100.0, 10.0, 1.0)
    assert expected_expense(ctx, 100.0) == pytest.approx(50.0 - 10.0 * normal_pdf(0.0), rel=1e-15)
    assert expected_expense(ctx, 100.0) == pytest.approx(46.0105772, abs=1e-7)
    assert expected_expense(ctx, math.inf) == 100.0
    assert abs(expected_expense(ctx, 0.0)) <= 1e-8


def _g_quad(ctx, b):
    f = lambda w: w * stats.norm.pdf(w, ctx.w_hat, ctx.sigma)
    return integrate.quad(f, ctx.w_hat - 40 * ctx.sigma, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]


def _h_quad(ctx, ap, budget, b):
    f = lambda w: math.exp(ap * w) * stats.norm.pdf(w, ctx.w_hat, ctx.sigma)
    inside = integrate.quad(f, ctx.w_hat - 40 * ctx.sigma, b, epsabs=0, epsrel=1e-12, limit=200)[0]
    return -math.exp(-ap * budget) * (inside + stats.norm.sf(b, ctx.w_hat, ctx.sigma))


def test_expense_matches_quadrature():
    rng = np.random.default_rng(3)
    for _ in range(60):
        ctx = random_ctx(rng)
        b = rng.uniform(0.0, ctx.w_hat + 4 * ctx.sigma)
        assert expected_expense(ctx, b) == pytest.approx(_g_quad(ctx, b), rel=1e-9, abs=1e-10 * ctx.w_hat)


def test_risk_transform_matches_quadrature():
    rng = np.random.default_rng(4)
    for _ in range(60):
        ctx = random_ctx(rng)
        ap = 10 ** rng.uniform(-4, 0) / ctx.w_hat
        budget = ctx.w_hat * rng.uniform(0.05, 1.5)
        b = rng.uniform(0.0, ctx.w_hat + 4 * ctx.sigma)
        p = rap(1.0, ap, budget)
        oracle = _h_quad(ctx, ap, budget, b)
        assert risk_transform(ctx, p, b) == pytest.approx(oracle, rel=1e-9)
        assert risk_transform_plus_one(ctx, p, b) == pytest.approx(1 + oracle, abs=1e-9 * abs(oracle))


def test_closed_forms_match_monte_carlo():
    rng = np.random.default_rng(5)
    n = 200_000
    for _ in range(8):
        ctx = random_ctx(rng)
        b = rng.uniform(0.5, 1.5) * ctx.w_hat
        ap, budget = 0.5 / ctx.w_hat, 0.6 * ctx.w_hat
        W = rng.normal(ctx.w_hat, ctx.sigma, n)
        C = rng.random(n) < ctx.theta
        won = W <= b
        for sample, value in (
            (ctx.v_hat * C * won, expected_revenue(ctx, b)),
            (W * won, expected_expense(ctx, b)),
            (-np.exp(ap * W * won - ap * budget), risk_transform(ctx, rap(1.0, ap, budget), b)),
        ):
            se = sample.std(ddof=1) / math.sqrt(n)
            assert abs(sample.mean() - value) <= 4 * se


def test_risk_transform_limits():
    ctx = BidContext(0.1, 100.0, 10.0, 1.0)
    p = rap(1.0, 1e-10, 50.0)
    for b in (0.0, 80.0, 100.0, 130.0, math.inf):
        assert abs(risk_transform(ctx, p, b) + 1.0) <= 1e-8
    with pytest.raises(ValueError):
        risk_transform(ctx, PolicyParams(Family.RNP), 1.0)


def test_first_order_expansion_of_risk_transform():
    rng = np.random.default_rng(6)
    for _ in range(50):
        ctx = random_ctx(rng)
        budget = ctx.w_hat * rng.uniform(0.1, 1.2)
        b = rng.uniform(0.0, ctx.w_hat + 3 * ctx.sigma)
        target = budget - expected_expense(ctx, b)
        errs = []
        for ap in (1e-4 / ctx.w_hat, 1e-6 / ctx.w_hat):
            errs.append(abs(risk_transform_plus_one(ctx, rap(1.0, ap, budget), b) / ap - target))
        assert errs[1] <= 1e-3 * abs(target) + 1e-12 * ctx.w_hat
        # the error is first order: shrinking a by 100 shrinks it by about 100
        if errs[0] > 1e-9 * ctx.w_hat:
            assert errs[1] < errs[0] / 50


def test_risk_transform_does_not_overflow():
    ctx = BidContext(0.5, 1000.0, 300.0, 1e5)
    p = rap(1.0, 5.0, 10.0)  # gamma_1 is in the thousands
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with oracles.mp.workdps(60):
            exact = float(oracles.one_plus_h(ctx, 5.0, 10.0, 0.0))
        assert risk_transform_plus_one(ctx, p, 0.0) == pytest.approx(exact, rel=1e-12)
        assert risk_transform_plus_one(ctx, p, math.inf) == -math.inf
        assert lagrangian_rap(ctx, p, math.inf) == -math.inf
        b = bid_rap(ctx, p)
        assert 0.0 <= b <= default_max_bid(ctx)


# --- Lagrangians ------------------------------------------------------------

def test_lagrangian_infinite_bid_limits():
    rng = np.random.default_rng(7)
    for _ in range(20):
        ctx = random_ctx(rng)
        lam, budget, ap = rng.uniform(0, 3), ctx.w_hat * rng.uniform(0.1, 2), 0.3 / ctx.w_hat
        assert lagrangian_rnp(ctx, lam, budget, math.inf) == pytest.approx(
            ctx.value - (1 + lam) * ctx.w_hat + lam * budget, rel=1e-12, abs=1e-12 * ctx.w_hat
        )
        g1 = 0.5 * ap ** 2 * ctx.sigma ** 2 + ap * ctx.w_hat - ap * budget
        assert lagrangian_rap(ctx, rap(lam, ap, budget), math.inf) == pytest.approx(
            ctx.value - ctx.w_hat + lam * (1 - math.exp(g1)), rel=1e-10, abs=1e-10 * ctx.w_hat
        )
    ctx = BidContext(0.2, 3.0, 1.0, 40.0)
    assert lagrangian_rnp(ctx, 0.0, 1.0, math.inf) == pytest.approx(8.0 - 3.0)


def test_lagrangian_rnp_tail():
    ctx = BidContext(0.0, 100.0, 10.0, 1.0)
    assert abs(lagrangian_rnp(ctx, 0.0, 1.0, 0.0)) <= 1e-8


def test_rap_without_penalty_equals_rnp_without_penalty():
    rng = np.random.default_rng(8)
    for _ in range(20):
        ctx = random_ctx(rng)
        b = np.linspace(0, ctx.w_hat * 3, 50)
        np.testing.assert_allclose(
            lagrangian_rap(ctx, rap(0.0, 0.01, ctx.w_hat), b), lagrangian_rnp(ctx, 0.0, ctx.w_hat, b), rtol=1e-15
        )


def test_rap_lagrangian_approaches_rnp_at_matched_multiplier():
    # lam * (1 + h) ~ lam * a * (B - g), so the penalties agree when lam_rap = lam_rnp / a
    rng = np.random.default_rng(9)
    for _ in range(20):
        ctx = random_ctx(rng)
        lam, budget = rng.uniform(0, 3), ctx.w_hat * rng.uniform(0.2, 1.0)
        b = np.linspace(0, ctx.w_hat * 2, 30)
        target = lagrangian_rnp(ctx, lam, budget, b)
        diffs = []
        for ap in (1e-3 / ctx.w_hat, 1e-5 / ctx.w_hat):
            diffs.append(np.max(np.abs(lagrangian_rap(ctx, rap(lam / ap, ap, budget), b) - target)))
        assert diffs[1] < diffs[0] / 50 + 1e-9 * ctx.w_hat * (1 + lam)


def test_rnp_stationary_point():
    rng = np.random.default_rng(10)
    for _ in range(300):
        ctx = random_ctx(rng)
        lam, budget = rng.uniform(0, 5), ctx.w_hat * rng.uniform(0.05, 1.5)
        assert oracles.rnp_stationarity(ctx, lam, budget, ctx.value / (1 + lam)) <= 1e-6


def test_rap_stationary_point():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(300):
        ctx = random_ctx(rng)
        lam, budget = rng.uniform(0, 5), ctx.w_hat * rng.uniform(0.05, 1.5)
        p = rap(lam, 10 ** rng.uniform(-3, 0.5) / ctx.w_hat, budget)
        b = rap_stationary_bid(ctx, p)
        if b <= 0:
            continue
        checked += 1
        assert oracles.rap_stationarity(ctx, lam, p.alpha_prime, budget, b) <= 1e-6
    assert checked > 200


def _grid_max(f, hi):
    grid = np.arange(0.0, hi, 1e-3)
    return np.max(f(grid))


@pytest.mark.parametrize("seed", range(5))
def test_rnp_bid_matches_grid_search(seed):
    rng = np.random.default_rng(100 + seed)
    for _ in range(20):
        ctx = random_ctx(np.random.default_rng(rng.integers(2 ** 32)))
        ctx = BidContext(ctx.theta, ctx.w_hat / 20, ctx.sigma / 20, ctx.v_hat / 20)  # keeps the grid small
        lam, budget = rng.uniform(0, 3), ctx.w_hat * rng.uniform(0.05, 1.5)
        b = bid_rnp(ctx, lam, budget, max_bid=math.inf)
        hi = 3 * max(ctx.value, ctx.w_hat + 6 * ctx.sigma)
        best = _grid_max(lambda x: lagrangian_rnp(ctx, lam, budget, x), hi)
        got = lagrangian_rnp(ctx, lam, budget, b)
        assert got >= best - 1e-6 * max(1.0, abs(best))
        assert abs(got - best) <= 1e-6 * max(1.0, abs(best))


@pytest.mark.parametrize("seed", range(5))
def test_rap_bid_matches_grid_search(seed):
    rng = np.random.default_rng(200 + seed)
    for _ in range(20):
        base = random_ctx(rng)
        ctx = BidContext(base.theta, base.w_hat / 20, base.sigma / 20, base.v_hat / 20)
        lam, budget = rng.uniform(0, 3), ctx.w_hat * rng.uniform(0.05, 1.5)
        p = rap(lam, 10 ** rng.uniform(-2, 1) / ctx.w_hat, budget, max_bid=1e9)
        b = bid_rap(ctx, p)
        hi = 3 * max(ctx.value, ctx.w_hat + 6 * ctx.sigma)
        best = _grid_max(lambda x: lagrangian_rap(ctx, p, x), hi)
        got = lagrangian_rap(ctx, p, min(b, hi))
        assert abs(got - best) <= 1e-6 * max(1.0, abs(best))


# --- bid rules --------------------------------------------------------------

def test_rnp_bid_examples():
    ctx = BidContext(0.5, 100.0, 10.0, 300.0)
    assert bid_rnp(ctx, 1.0, 50.0) == 75.0
    ctx = BidContext(0.3, 10.0, 2.0, 20.0)
    assert bid_rnp(ctx, 0.0, 5.0) == pytest.approx(6.0)


def test_bid_rules_reduce_to_truthful_without_penalty():
    rng = np.random.default_rng(12)
    for _ in range(50):
        ctx = random_ctx(rng)
        budget = ctx.w_hat
        assert bid_rnp(ctx, 0.0, budget) == pytest.approx(min(ctx.value, default_max_bid(ctx)), rel=1e-15)
        assert rap_stationary_bid(ctx, rap(0.0, 0.01, budget)) == ctx.value
        assert bid_rap(ctx, rap(0.0, 0.01, budget)) == pytest.approx(min(ctx.value, default_max_bid(ctx)), rel=1e-15)


def test_rnp_interior_candidate_is_homogeneous():
    rng = np.random.default_rng(13)
    for _ in range(50):
        ctx = random_ctx(rng)
        c = rng.uniform(0.1, 0.9)
        scaled = BidContext(ctx.theta, ctx.w_hat, ctx.sigma, ctx.v_hat * c)
        lam = rng.uniform(0, 3)
        b1 = bid_rnp(ctx, lam, ctx.w_hat, max_bid=math.inf)
        b2 = bid_rnp(scaled, lam, ctx.w_hat, max_bid=math.inf)
        assert b2 == pytest.approx(c * b1, rel=1e-14)


@given(
    theta=st.floats(0.0, 1.0), w_hat=st.floats(0.01, 1e4), ratio=st.floats(1e-3, 2.0),
    v_hat=st.floats(0.0, 1e5), lam=st.floats(0.0, 1e6), budget_ratio=st.floats(1e-3, 10.0),
    log_ap=st.floats(-9.0, 2.0),
)
@settings(max_examples=300, deadline=None)
def test_bids_stay_in_range(theta, w_hat, ratio, v_hat, lam, budget_ratio, log_ap):
    ctx = BidContext(theta, w_hat, w_hat * ratio, v_hat)
    budget = w_hat * budget_ratio
    cap = default_max_bid(ctx)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        b = bid_rnp(ctx, lam, budget)
        assert 0.0 <= b <= cap
        b = bid_rap(ctx, rap(lam, 10 ** log_ap / w_hat, budget))
        assert 0.0 <= b <= cap


def test_infinite_candidate_executes_as_max_bid():
    # negative budget slack makes always-winning attractive: w_hat far below the bid value
    ctx = BidContext(0.9, 1.0, 0.3, 1000.0)
    assert bid_rnp(ctx, 0.0, 1.0, max_bid=50.0) == 50.0
    b = bid_rnp(ctx, 0.0, 1.0, max_bid=5000.0)
    assert b == ctx.value


@given(
    theta=st.floats(0.0, 1.0), w_hat=st.floats(0.01, 1e4), v_hat=st.floats(0.0, 1e5),
    lam=st.floats(0.0, 1e8), budget=st.floats(1e-3, 1e4), ap=st.floats(1e-9, 10.0),
)
@settings(max_examples=300, deadline=None)
def test_rap_stationary_bid_is_never_negative(theta, w_hat, v_hat, lam, budget, ap):
    # W(x) / a < c  <=>  lam exp(-a B) < v_hat theta + lam exp(-a B), which always holds
    ctx = BidContext(theta, w_hat, 0.2 * w_hat, v_hat)
    b = rap_stationary_bid(ctx, rap(lam, ap, budget))
    assert b >= -1e-9 * max(1.0, ctx.value + lam)


def test_rap_bids_shrink_with_risk_aversion():
    rng = np.random.default_rng(14)
    grid = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0]
    for _ in range(500):
        ctx = random_ctx(rng)
        lam, budget = rng.uniform(0, 5), ctx.w_hat * rng.uniform(0.02, 1.5)
        bids = [bid_rap(ctx, PolicyParams(Family.RAP, lam, a, 10_000, budget)) for a in grid]
        assert np.all(np.diff(bids) <= 1e-12 * max(bids))


def test_risk_neutral_limit_at_matched_multiplier():
    rng = np.random.default_rng(15)
    ap = 1e-9
    for _ in range(200):
        ctx = random_ctx(rng)
        lam, budget = rng.uniform(0, 5), ctx.w_hat * rng.uniform(0.05, 1.5)
        b_rnp = bid_rnp(ctx, lam, budget)
        b_rap = bid_rap(ctx, rap(lam / ap, ap, budget))
        assert b_rap == pytest.approx(b_rnp, rel=1e-3, abs=1e-12)


def test_vectorized_bids_match_scalar_bids():
    rng = np.random.default_rng(16)
    ctxs = [random_ctx(rng) for _ in range(30)]
    stacked = BidContext(
        np.array([c.theta for c in ctxs]), np.array([c.w_hat for c in ctxs]),
        np.array([c.sigma for c in ctxs]), 7.0,
    )
    scalar = [BidContext(c.theta, c.w_hat, c.sigma, 7.0) for c in ctxs]
    for params in (PolicyParams(Family.RNP, 0.4, budget=20.0), PolicyParams(Family.RAP, 3.0, 0.1, 1, 20.0)):
        np.testing.assert_array_equal(bid(stacked, params), [bid(c, params) for c in scalar])


# --- entropic risk ----------------------------------------------------------

def test_entropic_risk_examples():
    assert entropic_risk([3.0] * 5, 2.0) == pytest.approx(3.0, rel=1e-15)
    assert entropic_risk([0.0, 1.0], 1.0) == pytest.approx(math.log((1 + math.e) / 2), rel=1e-15)
    assert entropic_risk([0.0, 1.0], 1.0) == pytest.approx(0.6201145, abs=1e-7)
    x = np.random.default_rng(0).normal(5, 2, 1000)
    assert entropic_risk(x, 1e-8) == pytest.approx(x.mean(), rel=1e-6)
    assert math.isfinite(entropic_risk([1e4, 2e4], 10.0))
    with pytest.raises(ValueError):
        entropic_risk([], 1.0)
    with pytest.raises(ValueError):
        entropic_risk([1.0], 0.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.floats(1e-6, 10.0))
@settings(max_examples=200, deadline=None)
def test_entropic_risk_dominates_mean(xs, alpha):
    assert entropic_risk(xs, alpha) >= np.mean(xs) - 1e-9 * (1 + np.max(np.abs(xs)))
    assert entropic_risk(xs, alpha) <= max(xs) + 1e-9 * (1 + abs(max(xs)))
