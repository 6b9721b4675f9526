"""Arbitrary-precision reference implementations used as test oracles."""

import mpmath

mp = mpmath.mp


def _phi_cdf(ctx, b):
    z = (mpmath.mpf(b) - ctx.w_hat) / ctx.sigma
    return mpmath.npdf(z), mpmath.ncdf(z)


def g(ctx, b):
    pdf, cdf = _phi_cdf(ctx, b)
    return ctx.w_hat * cdf - ctx.sigma * pdf


def revenue(ctx, b):
    return mpmath.mpf(ctx.v_hat) * ctx.theta * _phi_cdf(ctx, b)[1]


def one_plus_h(ctx, ap, budget, b):
    ap, w, s, B = (mpmath.mpf(v) for v in (ap, ctx.w_hat, ctx.sigma, budget))
    g1 = ap * ap * s * s / 2 + ap * w - ap * B
    g2 = -ap * B
    z = (mpmath.mpf(b) - w) / s
    return 1 - mpmath.exp(g1) * mpmath.ncdf(z - ap * s) - mpmath.exp(g2) + mpmath.exp(g2) * mpmath.ncdf(z)


def lagrangian_rnp(ctx, lam, budget, b):
    gb = g(ctx, b)
    return revenue(ctx, b) - gb - lam * (gb - budget)


def lagrangian_rap(ctx, lam, ap, budget, b):
    return revenue(ctx, b) - g(ctx, b) + lam * one_plus_h(ctx, ap, budget, b)


def _digits(ctx, b):
    # G changes by about phi(z) across the step, so far tails need extra digits
    z = (float(b) - ctx.w_hat) / ctx.sigma
    return 40 + int(z * z / 4.6)


def central_diff(f, b, h):
    with mp.workdps(max(mp.dps, 50)):
        b, h = mpmath.mpf(b), mpmath.mpf(h)
        return (f(b + h) - f(b - h)) / (2 * h)


def density(ctx, b):
    with mp.workdps(max(mp.dps, 50)):
        return _phi_cdf(ctx, b)[0] / ctx.sigma


def rnp_stationarity(ctx, lam, budget, b):
    """|dG/db| relative to the size of the derivative's two terms."""
    with mp.workdps(_digits(ctx, b)):
        d = central_diff(lambda x: lagrangian_rnp(ctx, lam, budget, x), b, 1e-6 * ctx.sigma)
        f = density(ctx, b)
        return float(abs(d) / (f * (ctx.v_hat * ctx.theta + (1 + lam) * abs(mpmath.mpf(b)))))


def rap_stationarity(ctx, lam, ap, budget, b):
    with mp.workdps(_digits(ctx, b)):
        d = central_diff(lambda x: lagrangian_rap(ctx, lam, ap, budget, x), b, 1e-6 * ctx.sigma)
        f = density(ctx, b)
        ap_, b_ = mpmath.mpf(ap), mpmath.mpf(b)
        terms = ctx.v_hat * ctx.theta + lam * mpmath.exp(-ap_ * budget) + abs(b_) + lam * mpmath.exp(ap_ * (b_ - budget))
        return float(abs(d) / (f * terms))
