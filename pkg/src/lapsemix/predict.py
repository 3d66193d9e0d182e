"""Survival curves and conditional churn probabilities from a fitted model.

Every query accepts either a point estimate (:class:`MixtureParams`, e.g.
from EM) or posterior draws (:class:`PosteriorDraws`). With draws, the
quantity is evaluated per draw and then averaged, and a pointwise 95%
interval is reported.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dists import norm_sf
from .gibbs import PosteriorDraws
from .model import MixtureParams


def _profile(x, p):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (p,):
        raise ValueError(f"covariate profile has {x.size} values, model expects {p}")
    return np.concatenate([[1.0], x])


def _as_arrays(model):
    """(weights, coefs, variances) with a leading draw axis."""
    if isinstance(model, MixtureParams):
        return model.weights[None], model.coefficients[None], model.variances[None]
    if isinstance(model, PosteriorDraws):
        return model.weights, model.coefficients, model.variances
    raise TypeError(f"expected MixtureParams or PosteriorDraws, got {type(model).__name__}")


def _survival_matrix(weights, coefs, variances, xd, t):
    """S(t | x) for every draw (rows) and time (columns); S(inf) = 0."""
    t = np.asarray(t, dtype=float)
    mu = coefs @ xd                       # (M, K)
    sd = np.sqrt(variances)
    with np.errstate(divide="ignore"):
        logt = np.log(t)
    z = (logt[None, :, None] - mu[:, None, :]) / sd[:, None, :]
    return np.einsum("mk,mtk->mt", weights, norm_sf(z))


def mixture_survival(params: MixtureParams, x, t):
    """S(t | x) = sum_j eta_j [1 - Phi((log t - x'beta_j) / sigma_j)]."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be non-negative")
    xd = _profile(x, params.p)
    out = _survival_matrix(*_as_arrays(params), xd, t_arr.reshape(-1))[0]
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if t_arr.ndim == 0 else out.reshape(t_arr.shape)


@dataclass(frozen=True)
class SurvivalCurve:
    time: np.ndarray
    mean: np.ndarray
    lo95: np.ndarray | None
    hi95: np.ndarray | None
    x: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "mean", "lo95", "hi95"])
            lo = self.mean if self.lo95 is None else self.lo95
            hi = self.mean if self.hi95 is None else self.hi95
            for row in zip(self.time, self.mean, lo, hi):
                w.writerow([repr(float(v)) for v in row])


def default_grid(times, n=200):
    times = np.asarray(times, dtype=float)
    return np.geomspace(times.min(), times.max(), n)


def posterior_survival_curve(model, x, grid) -> SurvivalCurve:
    """Pointwise mean and 2.5%/97.5% quantiles of S(t | x) over draws."""
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be positive and strictly increasing")
    w, b, v = _as_arrays(model)
    xd = _profile(x, b.shape[2] - 1)
    S = np.clip(_survival_matrix(w, b, v, xd, grid), 0.0, 1.0)
    if S.shape[0] == 1:
        return SurvivalCurve(grid, S[0], None, None, xd[1:])
    lo, hi = np.quantile(S, [0.025, 0.975], axis=0)
    # the mean of nonincreasing curves is nonincreasing up to rounding
    mean = np.minimum.accumulate(np.clip(S.mean(axis=0), lo, hi))
    return SurvivalCurve(grid, mean, lo, hi, xd[1:])


@dataclass(frozen=True)
class ProbabilityEstimate:
    estimate: float
    lo95: float | None
    hi95: float | None
    a: float
    b: float
    c: float
    x: tuple

    def to_dict(self) -> dict:
        d = {"estimate": self.estimate}
        if self.lo95 is not None:
            d.update(lo95=self.lo95, hi95=self.hi95)
        d.update(a=self.a, b=None if math.isinf(self.b) else self.b, c=self.c, x=list(self.x))
        return d

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def conditional_probabilities(model, x, a, b, c) -> np.ndarray:
    """P(a < T <= b | T > c) for every draw (one value for a point estimate)."""
    if not (a >= 0 and c >= 0 and b >= a):
        raise ValueError("need a >= 0, c >= 0 and b >= a")
    if c > a:
        raise ValueError("the conditioning time c must not exceed a")
    w, coefs, v = _as_arrays(model)
    xd = _profile(x, coefs.shape[2] - 1)
    pts = [c, max(a, c)] + ([] if math.isinf(b) else [b])
    S = _survival_matrix(w, coefs, v, xd, np.array(pts, dtype=float))
    s_c, s_a = S[:, 0], S[:, 1]
    s_b = np.zeros_like(s_c) if math.isinf(b) else S[:, 2]
    if np.any(s_c <= 1e-300):
        raise ValueError(f"S({c}) is numerically zero; the conditional query is unanswerable")
    return (s_a - s_b) / s_c


def conditional_churn_prob(model, x, a, b, c) -> ProbabilityEstimate:
    """P(a < T <= b | T > c), with ``b = inf`` allowed."""
    a, b, c = float(a), float(b), float(c)
    probs = conditional_probabilities(model, x, a, b, c)
    xt = tuple(float(v) for v in np.atleast_1d(x))
    if isinstance(model, MixtureParams):
        return ProbabilityEstimate(float(probs[0]), None, None, a, b, c, xt)
    lo, hi = np.quantile(probs, [0.025, 0.975])
    est = min(max(float(probs.mean()), float(lo)), float(hi))
    return ProbabilityEstimate(est, float(lo), float(hi), a, b, c, xt)
