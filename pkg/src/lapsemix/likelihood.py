"""Observed-data likelihood of the censored log-normal mixture."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .dists import norm_logpdf, norm_logsf
from .model import SurvivalDataset, log_times


def component_loglik(dataset: SurvivalDataset, weights, coefs, variances) -> np.ndarray:
    """log eta_j + log f_j(t_i) for events, log eta_j + log S_j(t_i) for
    censored records; shape (n, K). Densities are on the time scale."""
    y = log_times(dataset)
    mu = dataset.design @ np.asarray(coefs).T
    var = np.asarray(variances)
    dens = norm_logpdf(y[:, None], mu, var) - y[:, None]
    surv = norm_logsf((y[:, None] - mu) / np.sqrt(var))
    with np.errstate(divide="ignore"):
        lw = np.log(np.asarray(weights))
    return lw + np.where(dataset.status[:, None] == 1, dens, surv)


def observed_loglik(dataset: SurvivalDataset, params=None, *, weights=None, coefs=None,
                    variances=None) -> float:
    """Mixture log-likelihood with lapses contributing the density and
    censored records the survival function."""
    if params is not None:
        weights, coefs, variances = params.weights, params.coefficients, params.variances
    return float(logsumexp(component_loglik(dataset, weights, coefs, variances), axis=1).sum())
