"""Densities, survival functions and samplers used by both fitters.

All samplers draw from a :class:`numpy.random.Generator`; build one from a
``(seed, stream)`` pair with :class:`RngStream` so that independent chains
never share state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
_SQRT_HALF_PI = math.sqrt(math.pi / 2)

# standardized lower bound above which the exponential tail sampler is used
TAIL_SWITCH = 4.0


class FactorizationError(ValueError):
    """The precision matrix is not symmetric positive-definite."""


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return RngStream(int(rng)).generator()


def _check_scale(sigma2):
    if np.any(~(np.asarray(sigma2) > 0)):
        raise ValueError("variance must be positive")


# -- normal helpers ---------------------------------------------------------

def norm_logpdf(x, mu, sigma2):
    return -_LOG_SQRT_2PI - 0.5 * np.log(sigma2) - 0.5 * (x - mu) ** 2 / sigma2


def norm_cdf(x):
    return special.ndtr(x)


def norm_sf(x):
    return special.ndtr(-np.asarray(x, dtype=float))


def norm_logsf(x):
    return special.log_ndtr(-np.asarray(x, dtype=float))


def mills_ratio(x):
    """sf(x) / pdf(x), computed without cancellation for large x."""
    return _SQRT_HALF_PI * special.erfcx(np.asarray(x, dtype=float) / math.sqrt(2))


# -- log-normal -------------------------------------------------------------

def lognormal_pdf(t, mu, sigma2):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("log-normal density needs t > 0")
    _check_scale(sigma2)
    out = np.exp(norm_logpdf(np.log(t), mu, sigma2) - np.log(t))
    return out if out.ndim else float(out)


def lognormal_logpdf(t, mu, sigma2):
    logt = np.log(t)
    return norm_logpdf(logt, mu, sigma2) - logt


def lognormal_survival(t, mu, sigma2):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("log-normal survival needs t >= 0")
    _check_scale(sigma2)
    with np.errstate(divide="ignore"):
        z = (np.log(t) - mu) / np.sqrt(sigma2)
    out = norm_sf(z)
    return out if out.ndim else float(out)


def lognormal_logsurvival(t, mu, sigma2):
    return norm_logsf((np.log(t) - mu) / np.sqrt(sigma2))


# -- truncated normal -------------------------------------------------------

def _std_bounds(mu, sigma, lower, upper):
    a = (lower - mu) / sigma
    b = (upper - mu) / sigma
    return a, b


def truncnorm_moments(mu, sigma2, lower=-np.inf, upper=np.inf):
    """Mean and variance of Normal(mu, sigma2) restricted to (lower, upper).

    Works elementwise on arrays. Tails are handled through the scaled Mills
    ratio so standardized bounds up to |30| keep full precision.
    """
    mu, sigma2, lower, upper = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                                    for v in (mu, sigma2, lower, upper)))
    _check_scale(sigma2)
    if np.any(~(lower < upper)):
        raise ValueError("truncation interval is empty")
    sigma = np.sqrt(sigma2)
    a, b = _std_bounds(mu, sigma, lower, upper)

    # work with the interval on the upper side of zero; mirror otherwise
    with np.errstate(invalid="ignore"):
        flip = (a + b) < 0
    a, b = np.where(flip, -b, a), np.where(flip, -a, b)
    m = np.empty_like(a)
    v = np.empty_like(a)

    tail = a >= 0
    if np.any(tail):
        at, bt = a[tail], b[tail]
        with np.errstate(over="ignore", invalid="ignore"):
            e = np.exp(0.5 * (at * at - bt * bt))  # pdf(b) / pdf(a)
            rb = np.where(np.isinf(bt), 0.0, mills_ratio(bt))
            d = mills_ratio(at) - e * rb
            mt = (1.0 - e) / d
            be = np.where(np.isinf(bt), 0.0, (bt - at) * e)
        m[tail] = mt
        v[tail] = 1.0 - mt * (mt - at) - be / d

    mid = ~tail  # a < 0 <= b after mirroring
    if np.any(mid):
        am, bm = a[mid], b[mid]
        z = special.ndtr(bm) - special.ndtr(am)
        pa = np.exp(-0.5 * am * am) / math.sqrt(2 * math.pi)
        pb = np.where(np.isinf(bm), 0.0, np.exp(-0.5 * bm * bm) / math.sqrt(2 * math.pi))
        with np.errstate(invalid="ignore"):
            apa = np.where(np.isinf(am), 0.0, am * pa)
            bpb = np.where(np.isinf(bm), 0.0, bm * pb)
        mm = (pa - pb) / z
        m[mid] = mm
        v[mid] = 1.0 + (apa - bpb) / z - mm * mm

    m = np.where(flip, -m, m)
    mean = mu + sigma * m
    var = sigma2 * np.clip(v, 0.0, 1.0)
    if mean.ndim == 0:
        return float(mean), float(var)
    return mean, var


def _tail_std(a, b, rng):
    """Standard normal draws restricted to (a, b) with a > 0, elementwise.

    Uses a translated-exponential proposal, or a uniform proposal when the
    interval is too narrow for the exponential to be efficient.
    """
    out = np.empty_like(a)
    narrow = (b - a) < 2.0 / a
    todo = np.arange(len(a))
    while todo.size:
        at, bt, nt = a[todo], b[todo], narrow[todo]
        lam = 0.5 * (at + np.sqrt(at * at + 4.0))
        u1 = 1.0 - rng.random(todo.size)  # (0, 1]
        u2 = rng.random(todo.size)
        x_exp = at - np.log(u1) / lam
        x_uni = at + (1.0 - u1) * np.where(nt, bt - at, 0.0)
        x = np.where(nt, x_uni, x_exp)
        with np.errstate(over="ignore"):
            logacc = np.where(nt, 0.5 * (at * at - x * x), -0.5 * (x - lam) ** 2)
        ok = (np.log(u2) <= logacc) & (x <= bt)
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def _std_truncnorm(a, b, rng):
    """Vectorized standard normal restricted to (a, b), with a < b."""
    with np.errstate(invalid="ignore"):
        flip = (a + b) < 0
    a, b = np.where(flip, -b, a), np.where(flip, -a, b)
    x = np.empty_like(a)

    tail = a > TAIL_SWITCH
    if np.any(tail):
        x[tail] = _tail_std(a[tail], b[tail], rng)
    body = ~tail
    if np.any(body):
        ab, bb = a[body], b[body]
        u = rng.random(ab.size)
        pos = ab >= 0
        # interval above zero: invert through the survival function
        sa, sb = special.ndtr(-ab), special.ndtr(-bb)
        xs = -special.ndtri(sb + (1.0 - u) * (sa - sb))
        ca, cb = special.ndtr(ab), special.ndtr(bb)
        xc = special.ndtri(ca + u * (cb - ca))
        x[body] = np.where(pos, xs, xc)
    x = np.clip(x, a, b)
    return np.where(flip, -x, x)


def sample_truncated_normal(mu, sigma2, lower=-np.inf, upper=np.inf, rng=None, size=None):
    """Draw Normal(mu, sigma2) conditioned on lower < x < upper.

    Inputs broadcast elementwise. Far-tail bounds use exponential rejection,
    so the cost stays bounded however extreme the truncation is.
    """
    rng = as_generator(0 if rng is None else rng)
    arrs = [np.asarray(v, dtype=float) for v in (mu, sigma2, lower, upper)]
    shape = np.broadcast_shapes(*(v.shape for v in arrs)) if size is None else (
        (size,) if np.isscalar(size) else tuple(size))
    mu, sigma2, lower, upper = (np.broadcast_to(v, shape).reshape(-1) for v in arrs)
    _check_scale(sigma2)
    if np.any(~(lower < upper)):
        raise ValueError("truncation interval is empty")
    sigma = np.sqrt(sigma2)
    a, b = _std_bounds(mu, sigma, lower, upper)
    x = np.clip(mu + sigma * _std_truncnorm(a, b, rng), lower, upper)
    x = x.reshape(shape)
    return float(x) if x.ndim == 0 else x


# -- other samplers ---------------------------------------------------------

def sample_dirichlet(alpha, rng, size=None):
    alpha = np.asarray(alpha, dtype=float)
    if np.any(~(alpha > 0)):
        raise ValueError("Dirichlet concentration must be positive")
    g = rng.standard_gamma(alpha, size=None if size is None else (size, len(alpha)))
    return g / g.sum(axis=-1, keepdims=True)


def sample_gamma(shape, rate, rng, size=None):
    """Gamma draw with the given shape and *rate* (mean = shape / rate)."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(~(shape > 0)) or np.any(~(rate > 0)):
        raise ValueError("Gamma shape and rate must be positive")
    out = rng.standard_gamma(shape, size=size) / rate
    return float(out) if np.ndim(out) == 0 else out


def _check_simplex(probs):
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("probabilities must form a simplex")
    return probs


def sample_categorical(probs, rng, size=None):
    """Draw 0-based labels. ``probs`` may be a single simplex or an (n, K)
    array with one simplex per row."""
    probs = _check_simplex(probs)
    if probs.ndim == 1:
        n = 1 if size is None else size
        cdf = np.cumsum(probs)
        lab = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(probs) - 1)
        # never land on a zero-mass trailing component due to rounding
        while np.any(probs[lab] == 0):
            lab = np.where(probs[lab] == 0, lab - 1, lab)
        return int(lab[0]) if size is None else lab
    return categorical_rows(probs, rng)


def categorical_rows(probs, rng):
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    lab = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(lab, probs.shape[1] - 1)


def sample_categorical_log(logw, rng):
    """Row-wise categorical draw from unnormalized log-masses (n, K)."""
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    return categorical_rows(w, rng)


def sample_mvnormal(mean, precision, rng):
    """Multivariate normal parameterized by its precision matrix."""
    mean = np.asarray(mean, dtype=float)
    P = np.asarray(precision, dtype=float)
    if P.shape != (len(mean), len(mean)) or not np.allclose(P, P.T, rtol=1e-10, atol=1e-12):
        raise FactorizationError("precision must be a symmetric square matrix")
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise FactorizationError("precision matrix is not positive-definite") from None
    z = rng.standard_normal(len(mean))
    # P = L L'  =>  x = mean + L'^{-1} z has covariance P^{-1}
    return mean + solve_triangular(L.T, z, lower=False, check_finite=False)
