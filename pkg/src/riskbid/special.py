"""Scalar numerical kernels: standard normal pdf/cdf and the principal Lambert W branch.

All functions accept scalars or numpy arrays and broadcast elementwise.
"""

import numpy as np
from scipy import special as _sp

__all__ = ["normal_pdf", "normal_cdf", "log_normal_cdf", "lambert_w0", "lambert_w0_exp"]

_INV_SQRT_2PI = 0.3989422804014327
_INV_E = np.exp(-1.0)
_MAX_ITER = 50


def _scalar_or_array(x, out):
    if np.ndim(x) == 0:
        return float(out)
    return out


def normal_pdf(z):
    """Standard normal density. Non-finite input raises ``ValueError``."""
    z_arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z_arr)):
        raise ValueError("normal_pdf requires finite input")
    return _scalar_or_array(z, _INV_SQRT_2PI * np.exp(-0.5 * z_arr * z_arr))


def normal_cdf(z):
    """Standard normal cdf, exact 0/1 at -inf/+inf.

    Backed by the Cephes ``ndtr`` routine (erf/erfc rational approximations),
    which keeps full relative precision deep in the lower tail.
    """
    z_arr = np.asarray(z, dtype=float)
    if np.any(np.isnan(z_arr)):
        raise ValueError("normal_cdf is undefined for NaN")
    return _scalar_or_array(z, _sp.ndtr(z_arr))


def log_normal_cdf(z):
    z_arr = np.asarray(z, dtype=float)
    if np.any(np.isnan(z_arr)):
        raise ValueError("log_normal_cdf is undefined for NaN")
    return _scalar_or_array(z, _sp.log_ndtr(z_arr))


# Unchecked variants for hot loops in the policy code, where +-inf bids are legal.
def _pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


_cdf = _sp.ndtr
_log_cdf = _sp.log_ndtr


def _initial_guess(x):
    w = np.empty_like(x)

    near_branch = x < -0.25
    p = np.sqrt(np.maximum(2.0 * (np.e * x[near_branch] + 1.0), 0.0))
    w[near_branch] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3

    mid = (~near_branch) & (x < np.e)
    w[mid] = np.log1p(x[mid])

    big = x >= np.e
    l1 = np.log(x[big])
    l2 = np.log(l1)
    w[big] = l1 - l2 + l2 / l1
    return w


def _halley(x, w):
    for _ in range(_MAX_ITER):
        ew = np.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        # wp1 == 0 only at the branch point, where f == 0 as well
        safe = np.where(wp1 == 0.0, 1.0, wp1)
        denom = ew * safe - (w + 2.0) * f / (2.0 * safe)
        step = np.where((f == 0.0) | (denom == 0.0), 0.0, f / np.where(denom == 0.0, 1.0, denom))
        w = w - step
        if np.all(np.abs(step) <= 4e-16 * (1.0 + np.abs(w))):
            break
    return w


def lambert_w0(x):
    """Principal branch W0 of the Lambert W function, real arguments only.

    Solves ``w * exp(w) == x`` for ``w >= -1``. Raises ``ValueError`` for
    ``x < -1/e``. Halley iteration from series/asymptotic seeds, capped at
    50 iterations.
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(np.isnan(x_arr)):
        raise ValueError("lambert_w0 is undefined for NaN")
    # one ulp of slack for -1/e itself, which is not exactly representable
    if np.any(x_arr < -_INV_E * (1.0 + 2e-16)):
        raise ValueError("lambert_w0 domain is x >= -1/e")

    out = np.empty_like(x_arr)
    branch = x_arr <= -_INV_E
    out[branch] = -1.0
    inf = np.isposinf(x_arr)
    out[inf] = np.inf

    todo = ~(branch | inf)
    if np.any(todo):
        xs = x_arr[todo]
        out[todo] = _halley(xs, _initial_guess(xs))
    if np.ndim(x) == 0:
        return float(out[0])
    return out.reshape(np.shape(x))


def lambert_w0_exp(log_x):
    """``W0(exp(log_x))`` without forming ``exp(log_x)``.

    For ``log_x`` past the float64 exponent range this solves
    ``w + log(w) = log_x`` by Newton's method instead.
    """
    lx = np.atleast_1d(np.asarray(log_x, dtype=float))
    out = np.empty_like(lx)
    small = lx < 700.0
    with np.errstate(under="ignore"):
        out[small] = lambert_w0(np.exp(lx[small]))
    big = ~small
    if np.any(big):
        L = lx[big]
        w = L - np.log(L)
        for _ in range(_MAX_ITER):
            f = w + np.log(w) - L
            step = f / (1.0 + 1.0 / w)
            w = w - step
            if np.all(np.abs(step) <= 4e-16 * w):
                break
        out[big] = w
    if np.ndim(log_x) == 0:
        return float(out[0])
    return out.reshape(np.shape(log_x))
