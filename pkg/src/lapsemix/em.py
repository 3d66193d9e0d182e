"""Point estimation of the censored log-normal mixture by EM.

Two variants share the same building blocks:

``"exact"`` (default)
    The EM for right-censored data. Censored rows get responsibilities from
    eta_j S_j(t_i), and each component regresses on its own truncated-normal
    conditional mean, with the truncated variance added to the residual sum
    of squares. The observed-data log-likelihood never decreases.

``"plugin"``
    Censored log-times are replaced by one responsibility-weighted
    truncated mean, responsibilities are computed on the completed
    log-times as if they were observed, and every component regresses on
    that single completed vector. Cheaper, but not monotone under censoring.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dists import norm_logpdf, truncnorm_moments
from .gibbs import enforce_ordering, initial_state
from .likelihood import component_loglik, observed_loglik
from .model import MixtureParams, SurvivalDataset, log_times

COLLAPSE_THRESHOLD = 1e-8


class ComponentCollapse(RuntimeError):
    """A component's total responsibility fell below the collapse threshold."""


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 500
    tolerance: float = 1e-6
    n_starts: int = 1
    seed: int = 0
    init: MixtureParams | None = None
    variant: str = "exact"

    def __post_init__(self):
        if self.variant not in ("exact", "plugin"):
            raise ValueError(f"unknown EM variant {self.variant!r}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1 or self.n_starts < 1:
            raise ValueError("max_iterations and n_starts must be positive")


@dataclass
class EmResult:
    params: MixtureParams
    iterations: int
    converged: bool
    loglik_trajectory: list[float] = field(default_factory=list)
    seconds: float = math.nan

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "iterations": self.iterations,
                "converged": self.converged, "loglik_trajectory": self.loglik_trajectory}

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def e_step_responsibilities(z, X, weights, coefs, variances) -> np.ndarray:
    """w_ij proportional to eta_j N(z_i | x_i'beta_j, sigma2_j), rows normalized in log-space."""
    mu = X @ np.asarray(coefs).T
    with np.errstate(divide="ignore"):
        logw = np.log(weights) + norm_logpdf(np.asarray(z)[:, None], mu, variances)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=1, keepdims=True)


def _censored_moments(y, X, censored, coefs, variances):
    """Per-component truncated-normal mean and variance for censored rows."""
    mu = X[censored] @ np.asarray(coefs).T
    lower = y[censored][:, None]
    return truncnorm_moments(mu, np.broadcast_to(variances, mu.shape), lower, np.inf)


def e_step_impute(y, X, censored, resp, coefs, variances):
    """Events keep y_i; censored rows get sum_j w_ij E_j(z | z >= y_i)."""
    z = np.array(y, dtype=float, copy=True)
    if censored.any():
        mean, _ = _censored_moments(y, X, censored, coefs, variances)
        z[censored] = np.sum(resp[censored] * mean, axis=1)
    return z


def e_step_exact(dataset, weights, coefs, variances):
    """Responsibilities under the censored likelihood and per-component
    completed log-times.

    Returns ``(resp, targets, cens_var)`` where ``targets`` is (n, K): the
    observed log-time for events, E_j(z | z >= y_i) for censored rows.
    """
    y = log_times(dataset)
    X = dataset.design
    censored = dataset.status == 0
    ll = component_loglik(dataset, weights, coefs, variances)
    ll -= ll.max(axis=1, keepdims=True)
    resp = np.exp(ll)
    resp /= resp.sum(axis=1, keepdims=True)
    targets = np.repeat(y[:, None], len(weights), axis=1)
    cens_var = None
    if censored.any():
        mean, cens_var = _censored_moments(y, X, censored, coefs, variances)
        targets[censored] = mean
    return resp, targets, cens_var


def m_step(X, z, resp, censored=None, cens_var=None):
    """Weighted least squares per component plus the variance update.

    ``z`` is either one completed vector shared by all components or an
    (n, K) array of per-component targets. ``cens_var`` is the
    (n_censored, K) truncated variance added for censored rows. Variances
    use the residuals against the new coefficients. Returns unordered
    ``(weights, coefficients, variances)``.
    """
    n, d = X.shape
    K = resp.shape[1]
    tot = resp.sum(axis=0)
    if np.any(tot < COLLAPSE_THRESHOLD):
        j = int(np.argmin(tot))
        raise ComponentCollapse(f"component {j + 1} collapsed (total responsibility {tot[j]:.3g})")
    weights = tot / n
    coefs = np.empty((K, d))
    variances = np.empty(K)
    for j in range(K):
        wj = resp[:, j]
        zj = z[:, j] if z.ndim == 2 else z
        Xw = X * wj[:, None]
        coefs[j] = np.linalg.solve(X.T @ Xw, Xw.T @ zj)
        r = zj - X @ coefs[j]
        ssr = np.dot(wj, r * r)
        if cens_var is not None and censored is not None and censored.any():
            ssr += np.dot(wj[censored], cens_var[:, j])
        variances[j] = ssr / tot[j]
    return weights, coefs, variances


def _max_rel_change(old, new):
    diffs = [np.max(np.abs(b - a) / np.maximum(np.abs(a), 1e-12)) for a, b in zip(old, new)]
    return float(max(diffs))


def _run_single(dataset, start, config):
    y = log_times(dataset)
    X = dataset.design
    censored = dataset.status == 0
    w, B, s2, resp = start
    traj = [observed_loglik(dataset, weights=w, coefs=B, variances=s2)]
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        if config.variant == "exact":
            resp, targets, cens_var = e_step_exact(dataset, w, B, s2)
            w_new, B_new, s2_new = m_step(X, targets, resp, censored, cens_var)
        else:
            # imputation uses the previous responsibilities
            z = e_step_impute(y, X, censored, resp, B, s2)
            resp = e_step_responsibilities(z, X, w, B, s2)
            cens_var = _censored_moments(y, X, censored, B, s2)[1] if censored.any() else None
            w_new, B_new, s2_new = m_step(X, z, resp, censored, cens_var)
        perm = np.argsort(B_new[:, 0], kind="stable")
        w_new, B_new, s2_new, resp = w_new[perm], B_new[perm], s2_new[perm], resp[:, perm]
        change = _max_rel_change((w, B, s2), (w_new, B_new, s2_new))
        w, B, s2 = w_new, B_new, s2_new
        traj.append(observed_loglik(dataset, weights=w, coefs=B, variances=s2))
        if change < config.tolerance:
            converged = True
            break
    return EmResult(MixtureParams(w / w.sum(), B, s2), it, converged, traj)


def _start_from_params(dataset, params):
    y = log_times(dataset)
    resp = e_step_responsibilities(y, dataset.design, params.weights, params.coefficients,
                                   params.variances)
    return (params.weights.copy(), params.coefficients.copy(), params.variances.copy(), resp)


def default_start(dataset, K):
    w, B, s2, labels = initial_state(dataset, K)
    w, B, s2, labels = enforce_ordering(w, B, s2, labels)
    resp = np.zeros((dataset.n, K))
    resp[np.arange(dataset.n), labels] = 1.0
    return w, B, s2, resp


def run_em(dataset: SurvivalDataset, K: int, config: EmConfig | None = None) -> EmResult:
    """Fit by EM from the quantile-split start (or ``config.init``).

    With ``n_starts > 1`` further starts jitter the default one and the
    result with the highest final log-likelihood is returned.
    """
    import time

    config = config or EmConfig()
    t0 = time.perf_counter()
    if config.init is not None:
        if config.init.K != K:
            raise ValueError("initial parameters have the wrong K")
        starts = [_start_from_params(dataset, config.init)]
    else:
        starts = [default_start(dataset, K)]
    rng = np.random.default_rng(config.seed)
    w0, B0, s20, _ = starts[0]
    for _ in range(config.n_starts - 1):
        B = B0 + rng.normal(scale=0.5 * np.sqrt(s20)[:, None], size=B0.shape)
        s2 = s20 * np.exp(rng.normal(scale=0.3, size=K))
        w = rng.dirichlet(np.full(K, 5.0))
        order = np.argsort(B[:, 0], kind="stable")
        params = MixtureParams(w[order], B[order], s2[order])
        starts.append(_start_from_params(dataset, params))
    best = None
    for start in starts:
        try:
            res = _run_single(dataset, start, config)
        except ComponentCollapse:
            if len(starts) == 1:
                raise
            continue
        if best is None or res.loglik_trajectory[-1] > best.loglik_trajectory[-1]:
            best = res
    if best is None:
        raise ComponentCollapse("every EM start collapsed a component")
    best.seconds = time.perf_counter() - t0
    return best
