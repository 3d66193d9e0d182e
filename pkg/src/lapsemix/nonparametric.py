"""Kaplan-Meier curves and a life-table hazard estimate."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import SurvivalDataset


@dataclass(frozen=True)
class KmCurve:
    time: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    group: str | None = None

    def __call__(self, t):
        """Right-continuous step function evaluated at ``t``."""
        idx = np.searchsorted(self.time, np.asarray(t, dtype=float), side="right")
        return np.where(idx == 0, 1.0, self.survival[np.maximum(idx - 1, 0)])


def _product_limit(times, status, group=None) -> KmCurve:
    if len(times) == 0:
        raise ValueError(f"group {group!r} is empty")
    ev_times = np.unique(times[status == 1])
    # ties: events at t precede censorings at t, so censored-at-t stay at risk
    sorted_t = np.sort(times)
    at_risk = len(times) - np.searchsorted(sorted_t, ev_times, side="left")
    sorted_ev = np.sort(times[status == 1])
    events = (np.searchsorted(sorted_ev, ev_times, side="right")
              - np.searchsorted(sorted_ev, ev_times, side="left"))
    surv = np.cumprod(1.0 - events / at_risk)
    return KmCurve(ev_times, surv, at_risk, events, group)


def kaplan_meier(dataset: SurvivalDataset, group_by: int | str | None = None) -> dict:
    """Product-limit survival estimate, optionally one curve per level of a
    covariate (given by column index or name).

    Returns ``{group_label: KmCurve}``; the ungrouped curve is keyed ``None``.
    """
    if group_by is None:
        return {None: _product_limit(dataset.times, dataset.status)}
    if isinstance(group_by, str):
        if group_by not in dataset.names:
            raise KeyError(f"unknown covariate column {group_by!r}")
        col = dataset.names.index(group_by)
    else:
        col = int(group_by)
        if not 0 <= col < dataset.p:
            raise KeyError(f"covariate index {col} out of range")
    x = dataset.covariates[:, col]
    out = {}
    for level in np.unique(x):
        sel = x == level
        label = f"{dataset.names[col]}={level:g}"
        out[label] = _product_limit(dataset.times[sel], dataset.status[sel], label)
    return out


@dataclass(frozen=True)
class HazardTable:
    start: np.ndarray
    width: float
    at_risk: np.ndarray
    events: np.ndarray
    hazard: np.ndarray


def empirical_hazard(dataset: SurvivalDataset, bin_width: float = 1.0) -> HazardTable:
    """Life-table hazard: events in [s, s + w) over (at risk at s) * w."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    t = dataset.times
    nbins = int(np.floor(t.max() / bin_width)) + 1
    start = np.arange(nbins) * bin_width
    sorted_t = np.sort(t)
    at_risk = len(t) - np.searchsorted(sorted_t, start, side="left")
    bins = np.minimum((t // bin_width).astype(np.int64), nbins - 1)
    events = np.bincount(bins[dataset.status == 1], minlength=nbins)
    with np.errstate(divide="ignore", invalid="ignore"):
        hazard = np.where(at_risk > 0, events / (at_risk * bin_width), 0.0)
    return HazardTable(start, bin_width, at_risk, events, hazard)


def write_km_csv(curves: dict, path) -> None:
    grouped = any(k is not None for k in curves)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "survival", "at_risk", "events"] + (["group"] if grouped else []))
        for label, c in curves.items():
            for row in zip(c.time, c.survival, c.at_risk, c.events):
                w.writerow([repr(float(row[0])), repr(float(row[1])), int(row[2]), int(row[3])]
                           + ([label] if grouped else []))
