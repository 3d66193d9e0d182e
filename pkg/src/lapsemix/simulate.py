"""Synthetic lapse data: the two-component benchmark and an insurance
portfolio with categorical policyholder factors."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dists import RngStream, norm_sf, sample_truncated_normal
from .model import MixtureParams, ParamsError, SurvivalDataset

BENCHMARK_PARAMS = MixtureParams(
    weights=[0.6, 0.4],
    coefficients=[[3.3, 0.5], [4.0, 0.8]],
    variances=[0.3, 0.039],
)


@dataclass(frozen=True)
class SimSpec:
    """What to simulate.

    ``covariates`` is either an explicit ``(n, p)`` array or a sequence of
    per-column Bernoulli probabilities for binary covariates.
    """

    n: int = 1000
    params: MixtureParams = BENCHMARK_PARAMS
    covariates: Sequence[float] | np.ndarray = (0.5,)
    censoring: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0.0 <= self.censoring < 1.0:
            raise ValueError("censoring fraction must be in [0, 1)")


@dataclass
class Truth:
    params: MixtureParams
    components: np.ndarray  # 0-based
    true_times: np.ndarray
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"true_params": self.params.to_dict(),
                "components": [int(c) + 1 for c in self.components],
                "true_times": self.true_times.tolist(),
                **self.extra}


def write_truth_json(truth: Truth, path) -> None:
    Path(path).write_text(json.dumps(truth.to_dict()) + "\n", encoding="utf-8")


def _draw_covariates(spec: SimSpec, rng) -> np.ndarray:
    cov = np.asarray(spec.covariates, dtype=float)
    if cov.ndim == 2:
        if cov.shape[0] != spec.n:
            raise ValueError("explicit covariate matrix must have n rows")
        return cov
    return (rng.random((spec.n, len(cov))) < cov).astype(float)


def simulate_mixture_dataset(spec: SimSpec) -> tuple[SurvivalDataset, Truth]:
    """Draw log-times from the mixture and censor a random subset.

    Each record is censored independently with probability ``spec.censoring``.
    A censored record reports a log-time drawn from its component normal
    truncated to (-inf, y_i], so it never exceeds the true log-time y_i.
    """
    params = spec.params
    rng = RngStream(spec.seed).generator()
    x = _draw_covariates(spec, rng)
    if x.shape[1] != params.p:
        raise ValueError(f"params expect {params.p} covariates, spec gives {x.shape[1]}")
    X = np.column_stack([np.ones(spec.n), x])
    comp = np.minimum(np.searchsorted(np.cumsum(params.weights), rng.random(spec.n), side="right"),
                      params.K - 1)
    mu = np.einsum("ij,ij->i", X, params.coefficients[comp])
    sd = np.sqrt(params.variances[comp])
    y = mu + sd * rng.standard_normal(spec.n)
    censored = rng.random(spec.n) < spec.censoring
    y_obs = y.copy()
    if censored.any():
        y_obs[censored] = sample_truncated_normal(mu[censored], params.variances[comp][censored],
                                                  -np.inf, y[censored], rng)
    data = SurvivalDataset(np.exp(y_obs), (~censored).astype(np.int8), x)
    return data, Truth(params, comp, np.exp(y))


# ---------------------------------------------------------------------------
# insurance portfolio

# dummy columns; the reference levels are male, 18-29, standard and monthly
PORTFOLIO_FACTORS = ("female", "age30_59", "age60plus", "gold", "yearly")
PORTFOLIO_LEVEL_PROBS = {
    "gender": (0.5, 0.5),
    "age": (1 / 3, 1 / 3, 1 / 3),
    "type": (0.5, 0.5),
    "payment": (0.5, 0.5),
}
SCENARIO_PROFILES = {
    "scenario1": (0.0, 1.0, 0.0, 0.0, 0.0),  # male, 30-59, standard, monthly
    "scenario2": (0.0, 0.0, 1.0, 1.0, 1.0),  # male, 60+, gold, yearly
    "scenario3": (1.0, 0.0, 1.0, 0.0, 0.0),  # female, 60+, standard, monthly
}
OBSERVATION_WINDOW = 100.0  # months

# Calibration constants, not estimates of any real book. Produced by
# scripts/calibrate_portfolio.py: least squares of the true-model churn
# probabilities of the three scenario profiles against the target
# conditional probabilities, eta fixed at 0.6. Times are in months.
PORTFOLIO_TABLE = {
    "weights": [0.6, 0.4],
    "variances": [2.6837, 1.866],
    "coefficients": {
        "(Intercept)": [1.656, 4.2358],
        "female": [1.4522, 0.8479],
        "age30_59": [-0.5165, -0.858],
        "age60plus": [0.5165, 0.858],
        "gold": [-0.9358, 0.0101],
        "yearly": [-0.9358, 0.0101],
    },
}
# rate (per month) of the exponential random-censoring clock that brings
# the expected censoring fraction of the default table to 0.427
PORTFOLIO_CENSORING_RATE = 0.007607


def portfolio_params(table: dict | MixtureParams | None = None) -> MixtureParams:
    """Mixture parameters from a named coefficient table (or pass-through)."""
    if table is None:
        table = PORTFOLIO_TABLE
    if isinstance(table, MixtureParams):
        params = table
    else:
        names = ("(Intercept)",) + PORTFOLIO_FACTORS
        try:
            coef_table = table["coefficients"]
            missing = [k for k in names if k not in coef_table]
            if missing:
                raise ParamsError(f"coefficient table is missing {', '.join(missing)}")
            B = np.array([coef_table[k] for k in names], dtype=float).T
            params = MixtureParams(table["weights"], B, table["variances"])
        except KeyError as exc:
            raise ParamsError(f"coefficient table missing key {exc}") from None
    if params.p != len(PORTFOLIO_FACTORS):
        raise ParamsError(f"portfolio model needs {len(PORTFOLIO_FACTORS)} covariates, got {params.p}")
    return params


def _portfolio_cells():
    """Every covariate combination with its probability."""
    cells, probs = [], []
    pg, pa, pt, pp = (PORTFOLIO_LEVEL_PROBS[k] for k in ("gender", "age", "type", "payment"))
    for g in range(2):
        for a in range(3):
            for t in range(2):
                for m in range(2):
                    cells.append((g, a == 1, a == 2, t, m))
                    probs.append(pg[g] * pa[a] * pt[t] * pp[m])
    return np.array(cells, dtype=float), np.array(probs)


def expected_portfolio_censoring(params: MixtureParams, rate: float) -> float:
    """Expected censored fraction under the portfolio censoring scheme.

    A lapse is observed when it precedes both the administrative follow-up
    ``F ~ U(0, 100)`` and the random clock ``R ~ Exp(rate)``, so the event
    probability is the integral of P(T <= s) against the density of
    min(F, R), averaged over the covariate cells.
    """
    from scipy.integrate import quad

    cells, probs = _portfolio_cells()
    X = np.column_stack([np.ones(len(cells)), cells])
    mu = X @ params.coefficients.T
    sd = np.sqrt(params.variances)
    L = OBSERVATION_WINDOW

    def surv(t):
        return np.sum(params.weights * norm_sf((np.log(t) - mu) / sd), axis=1)

    # P(T <= min(F, R)) = int_0^L P(T <= s) g(s) ds, g the density of min(F, R)
    def integrand(s):
        g = np.exp(-rate * s) * (1.0 / L + rate * (1.0 - s / L))
        return np.dot(probs, 1.0 - surv(s)) * g

    p_event, _ = quad(integrand, 0.0, L, limit=400, epsabs=1e-12, epsrel=1e-10)
    return 1.0 - p_event


def simulate_insurance_portfolio(n: int, seed: int = 0, table=None, censoring_rate=None,
                                 *, return_truth: bool = False):
    """Simulate a book of policies observed over a 100-month window.

    Factors are drawn independently with ``PORTFOLIO_LEVEL_PROBS``. Each
    policy enters uniformly in the window, so its administrative follow-up
    is ``U(0, 100)`` months; a second exponential clock models censoring
    for other reasons (death, transfer, data loss). The lapse time comes
    from the two-component log-normal mixture.
    """
    if int(n) < 1:
        raise ValueError("n must be positive")
    n = int(n)
    params = portfolio_params(table)
    if censoring_rate is None:
        censoring_rate = PORTFOLIO_CENSORING_RATE
    if censoring_rate < 0:
        raise ValueError("censoring_rate must be non-negative")
    rng = RngStream(seed).generator()
    gender = rng.choice(2, size=n, p=PORTFOLIO_LEVEL_PROBS["gender"])
    age = rng.choice(3, size=n, p=PORTFOLIO_LEVEL_PROBS["age"])
    ptype = rng.choice(2, size=n, p=PORTFOLIO_LEVEL_PROBS["type"])
    pay = rng.choice(2, size=n, p=PORTFOLIO_LEVEL_PROBS["payment"])
    x = np.column_stack([gender, age == 1, age == 2, ptype, pay]).astype(float)
    X = np.column_stack([np.ones(n), x])
    comp = np.minimum(np.searchsorted(np.cumsum(params.weights), rng.random(n), side="right"),
                      params.K - 1)
    mu = np.einsum("ij,ij->i", X, params.coefficients[comp])
    t_true = np.exp(mu + np.sqrt(params.variances[comp]) * rng.standard_normal(n))
    follow_up = OBSERVATION_WINDOW * (1.0 - rng.random(n))
    clock = rng.exponential(1.0 / censoring_rate, n) if censoring_rate > 0 else np.full(n, np.inf)
    limit = np.minimum(follow_up, clock)
    event = t_true <= limit
    data = SurvivalDataset(np.where(event, t_true, limit), event.astype(np.int8), x,
                           names=PORTFOLIO_FACTORS)
    if return_truth:
        return data, Truth(params, comp, t_true)
    return data
