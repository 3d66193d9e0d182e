"""Data-augmented Gibbs sampler for the log-normal mixture survival model.

One sweep updates, in order: allocations, weights, the latent log-times of
censored records, component precisions, regression coefficients, and
finally relabels components so intercepts are ascending.

Arrays use 0-based component labels throughout; coefficients are stored as
a ``(K, p + 1)`` array with the intercept in column 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .diagnostics import ParamSummary, summarize_chain
from .dists import (FactorizationError, RngStream, norm_logpdf, sample_categorical_log,
                    sample_truncated_normal)
from .model import MixtureParams, PriorSpec, SurvivalDataset, log_times

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class GibbsConfig:
    iterations: int = 20000
    burn_in: int = 10000
    thin: int = 1
    seed: int = 0
    K: int = 2
    stream: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.thin < 1 or self.K < 1:
            raise ValueError("iterations, thin and K must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.retained < 100:
            raise ValueError(f"only {self.retained} draws retained; need at least 100")

    @property
    def retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class PosteriorDraws:
    """Retained post-burn-in draws. Arrays are indexed by retained draw."""

    iteration: np.ndarray   # (M,) 1-based sweep number
    weights: np.ndarray     # (M, K)
    coefficients: np.ndarray  # (M, K, p + 1)
    variances: np.ndarray   # (M, K)
    counts: np.ndarray      # (M, K)

    @property
    def M(self) -> int:
        return len(self.iteration)

    @property
    def K(self) -> int:
        return self.weights.shape[1]

    @property
    def p(self) -> int:
        return self.coefficients.shape[2] - 1

    def params(self, m: int) -> MixtureParams:
        w = self.weights[m]
        return MixtureParams(w / w.sum(), self.coefficients[m], self.variances[m])

    def __iter__(self):
        return (self.params(m) for m in range(self.M))

    def columns(self) -> dict[str, np.ndarray]:
        """Chains keyed by parameter name (components numbered from 1)."""
        cols = {}
        K, d = self.K, self.p + 1
        for j in range(K):
            cols[f"eta_{j + 1}"] = self.weights[:, j]
        for j in range(K):
            for c in range(d):
                cols[f"beta_{j + 1}_{c}"] = self.coefficients[:, j, c]
        for j in range(K):
            cols[f"sigma2_{j + 1}"] = self.variances[:, j]
        return cols

    def posterior_mean(self) -> MixtureParams:
        w = self.weights.mean(axis=0)
        return MixtureParams.sorted(w, self.coefficients.mean(axis=0), self.variances.mean(axis=0))


# -- initialization ---------------------------------------------------------

def initial_state(dataset: SurvivalDataset, K: int):
    """Deterministic start: split observed log-times into K quantile groups
    and fit each group by least squares.

    Returns ``(weights, coefficients, variances, labels)``.
    """
    y = log_times(dataset)
    X = dataset.design
    n, d = X.shape
    ranks = np.empty(n, dtype=np.int64)
    ranks[np.argsort(y, kind="stable")] = np.arange(n)
    labels = (ranks * K) // n
    weights = np.bincount(labels, minlength=K) / n
    coefs = np.zeros((K, d))
    variances = np.empty(K)
    for j in range(K):
        sel = labels == j
        Xj, yj = X[sel], y[sel]
        coefs[j] = np.linalg.lstsq(Xj, yj, rcond=None)[0]
        resid = yj - Xj @ coefs[j]
        variances[j] = max(float(np.mean(resid ** 2)), 1e-8 * max(float(np.var(y)), 1.0))
    return weights, coefs, variances, labels


# -- sweep steps ------------------------------------------------------------

def step_allocations(z, X, weights, coefs, variances, rng):
    """Sample labels with mass proportional to eta_j N(z_i | x_i'beta_j, sigma2_j)."""
    if len(weights) == 1:
        return np.zeros(len(z), dtype=np.int64)
    mu = X @ coefs.T
    with np.errstate(divide="ignore"):
        logw = np.log(weights) + norm_logpdf(z[:, None], mu, variances)
    return sample_categorical_log(logw, rng)


def allocation_probabilities(z, X, weights, coefs, variances):
    mu = X @ coefs.T
    with np.errstate(divide="ignore"):
        logw = np.log(weights) + norm_logpdf(z[:, None], mu, variances)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=1, keepdims=True)


def step_weights(counts, alpha, rng):
    """Dirichlet(alpha + counts) draw."""
    g = rng.standard_gamma(np.asarray(alpha, dtype=float) + counts)
    return g / g.sum()


def step_augment(y, censored, X, labels, coefs, variances, rng):
    """Impute latent log-times of censored records from the component normal
    truncated to [y_i, inf). Event records keep their observed log-time."""
    z = y.copy()
    if not censored.any():
        return z
    idx = np.flatnonzero(censored)
    lab = labels[idx]
    mu = np.einsum("ij,ij->i", X[idx], coefs[lab])
    z[idx] = sample_truncated_normal(mu, variances[lab], y[idx], np.inf, rng)
    return z


def step_precision(z, X, labels, coefs, a, b, rng):
    """Gamma(a + n_j/2, b + SSR_j/2) draw of each precision; returns variances."""
    K = coefs.shape[0]
    shape = np.asarray(a, dtype=float).copy()
    rate = np.asarray(b, dtype=float).copy()
    resid = z - np.einsum("ij,ij->i", X, coefs[labels])
    shape += 0.5 * np.bincount(labels, minlength=K)
    rate += 0.5 * np.bincount(labels, weights=resid * resid, minlength=K)
    # Gamma(0.01, .) prior draws can underflow to 0 for empty components
    phi = np.maximum(rng.standard_gamma(shape) / rate, _TINY)
    return 1.0 / phi


def step_coefficients(z, X, labels, variances, m, tau2, rng):
    """Conjugate Gaussian update of each coefficient vector.

    Precision P = I/tau2 + phi X_j'X_j and mean P^{-1}(m/tau2 + phi X_j'z_j),
    with X_j, z_j the records currently allocated to component j.
    """
    K, d = m.shape
    out = np.empty((K, d))
    eye = np.eye(d)
    for j in range(K):
        sel = labels == j
        Xj = X[sel]
        phi = 1.0 / variances[j]
        P = eye / tau2[j] + phi * (Xj.T @ Xj)
        h = m[j] / tau2[j] + phi * (Xj.T @ z[sel])
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            raise FactorizationError(f"coefficient precision of component {j + 1} is not SPD") from None
        mean = cho_solve((L, True), h, check_finite=False)
        out[j] = mean + solve_triangular(L.T, rng.standard_normal(d), lower=False, check_finite=False)
    return out


def enforce_ordering(weights, coefs, variances, labels):
    """Permute components so intercepts ascend (stable for ties) and remap
    labels by the same permutation."""
    perm = np.argsort(coefs[:, 0], kind="stable")
    if np.array_equal(perm, np.arange(len(perm))):
        return weights, coefs, variances, labels
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return weights[perm], coefs[perm], variances[perm], inv[labels]


# -- driver -----------------------------------------------------------------

@dataclass
class GibbsState:
    weights: np.ndarray
    coefficients: np.ndarray
    variances: np.ndarray
    labels: np.ndarray
    imputed: np.ndarray = field(repr=False)


def run_gibbs(dataset: SurvivalDataset, prior: PriorSpec | None = None,
              config: GibbsConfig | None = None, init=None, *, return_state=False):
    """Run the sampler and keep thinned post-burn-in draws.

    ``init`` optionally overrides the quantile-split start with a
    ``(weights, coefficients, variances, labels)`` tuple; it is put in
    intercept order before the first sweep.
    """
    config = config or GibbsConfig()
    K = config.K
    prior = prior or PriorSpec.default(K, dataset.p)
    if prior.K != K or prior.m.shape[1] != dataset.p + 1:
        raise ValueError("prior does not match K or the covariate count")
    rng = RngStream(config.seed, config.stream).generator()

    X = np.ascontiguousarray(dataset.design)
    y = log_times(dataset)
    censored = dataset.status == 0
    if init is None:
        init = initial_state(dataset, K)
    w, B, s2, labels = (np.array(v, copy=True) for v in init)
    w, B, s2, labels = enforce_ordering(w, B, s2, labels.astype(np.int64))
    z = y.copy()

    M = config.retained
    d = X.shape[1]
    out_iter = np.empty(M, dtype=np.int64)
    out_w = np.empty((M, K))
    out_b = np.empty((M, K, d))
    out_s2 = np.empty((M, K))
    out_n = np.empty((M, K), dtype=np.int64)
    kept = 0
    for it in range(1, config.iterations + 1):
        labels = step_allocations(z, X, w, B, s2, rng)
        counts = np.bincount(labels, minlength=K)
        w = step_weights(counts, prior.alpha, rng)
        z = step_augment(y, censored, X, labels, B, s2, rng)
        s2 = step_precision(z, X, labels, B, prior.a, prior.b, rng)
        B = step_coefficients(z, X, labels, s2, prior.m, prior.tau2, rng)
        w, B, s2, labels = enforce_ordering(w, B, s2, labels)
        if it > config.burn_in and (it - config.burn_in) % config.thin == 0 and kept < M:
            out_iter[kept] = it
            out_w[kept] = w
            out_b[kept] = B
            out_s2[kept] = s2
            out_n[kept] = np.bincount(labels, minlength=K)
            kept += 1
    draws = PosteriorDraws(out_iter, out_w, out_b, out_s2, out_n)
    if return_state:
        return draws, GibbsState(w, B, s2, labels, z)
    return draws


def posterior_summary(draws: PosteriorDraws) -> dict[str, ParamSummary]:
    if draws.M < 100:
        raise ValueError("posterior summaries need at least 100 retained draws")
    return {name: summarize_chain(col) for name, col in draws.columns().items()}


# -- file formats -----------------------------------------------------------

def draws_header(K: int, p: int) -> list[str]:
    cols = ["iter"] + [f"eta_{j + 1}" for j in range(K)]
    cols += [f"beta_{j + 1}_{c}" for j in range(K) for c in range(p + 1)]
    cols += [f"sigma2_{j + 1}" for j in range(K)]
    cols += [f"n_{j + 1}" for j in range(K)]
    return cols


def write_draws_csv(draws: PosteriorDraws, path) -> None:
    K, d = draws.K, draws.p + 1
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(draws_header(K, draws.p))
        for m in range(draws.M):
            w.writerow([int(draws.iteration[m])]
                       + [repr(float(v)) for v in draws.weights[m]]
                       + [repr(float(v)) for v in draws.coefficients[m].reshape(K * d)]
                       + [repr(float(v)) for v in draws.variances[m]]
                       + [int(v) for v in draws.counts[m]])


def read_draws_csv(path) -> PosteriorDraws:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row])
    K = sum(1 for h in header if h.startswith("eta_"))
    nb = sum(1 for h in header if h.startswith("beta_"))
    if K == 0 or nb % K or header != draws_header(K, nb // K - 1):
        raise ValueError(f"{path}: not a draws file (unexpected header)")
    d = nb // K
    c = 1
    weights = data[:, c:c + K]; c += K
    coefs = data[:, c:c + K * d].reshape(-1, K, d); c += K * d
    variances = data[:, c:c + K]; c += K
    counts = data[:, c:c + K].astype(np.int64)
    return PosteriorDraws(data[:, 0].astype(np.int64), weights, coefs, variances, counts)


def write_summary_json(summary: dict[str, ParamSummary], path) -> None:
    Path(path).write_text(json.dumps({k: v.to_dict() for k, v in summary.items()}, indent=2) + "\n",
                          encoding="utf-8")
