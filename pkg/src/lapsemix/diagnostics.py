"""Chain diagnostics: effective sample size and posterior summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalized autocorrelation at every lag, via FFT (biased estimator)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n] / n
    if acov[0] <= 0:
        return np.full(n, np.nan)
    return acov / acov[0]


def effective_sample_size(chain) -> float:
    """ESS = M / (1 + 2 sum rho_k), truncating the autocorrelation sum with
    Geyer's initial monotone positive sequence.

    Returns ``nan`` for a constant chain.
    """
    x = np.asarray(chain, dtype=float)
    n = len(x)
    if n < 10:
        raise ValueError("need at least 10 draws for an ESS estimate")
    rho = autocorrelation(x)
    if np.isnan(rho[0]):
        return math.nan
    # pair sums Gamma_k = rho_{2k} + rho_{2k+1}
    m = (n - 1) // 2
    gam = rho[0:2 * m:2] + rho[1:2 * m + 1:2]
    stop = np.flatnonzero(gam <= 0)
    gam = gam[:stop[0]] if stop.size else gam
    gam = np.minimum.accumulate(gam)
    tau = -1.0 + 2.0 * gam.sum()
    # ESS is capped at M * log10(M) for antithetic chains
    return float(n / max(tau, 1.0 / math.log10(max(n, 10))))


@dataclass(frozen=True)
class ParamSummary:
    mean: float
    lo95: float
    hi95: float
    ess: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"mean": self.mean, "lo95": self.lo95, "hi95": self.hi95,
                "ess": None if self.degenerate else self.ess}


def summarize_chain(chain) -> ParamSummary:
    x = np.asarray(chain, dtype=float)
    lo, hi = np.quantile(x, [0.025, 0.975])  # type-7 (linear) quantiles
    mean = float(x.mean())
    if np.ptp(x) == 0:
        return ParamSummary(float(x[0]), float(x[0]), float(x[0]), math.nan, degenerate=True)
    # guard the ordering against last-ulp rounding in the mean
    mean = min(max(mean, float(lo)), float(hi))
    return ParamSummary(mean, float(lo), float(hi), effective_sample_size(x))
