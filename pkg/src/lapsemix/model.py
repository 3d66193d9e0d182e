"""Data model: survival records, mixture parameters, priors and their file formats."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DatasetError(ValueError):
    """Raised when raw rows cannot be turned into a valid dataset."""


class ParamsError(ValueError):
    """Raised when mixture parameters or priors violate their invariants."""


@dataclass(frozen=True)
class PolicyRecord:
    time: float
    status: int
    covariates: tuple[float, ...] = ()

    def __post_init__(self):
        if not (self.time > 0 and math.isfinite(self.time)):
            raise DatasetError(f"non-positive time {self.time!r}")
        if self.status not in (0, 1):
            raise DatasetError(f"status must be 0 or 1, got {self.status!r}")


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Right-censored survival data held column-wise.

    ``status`` is 1 for an observed lapse and 0 for a censored record.
    ``covariates`` excludes the intercept; :attr:`design` prepends it.
    """

    times: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        status = np.asarray(self.status, dtype=np.int8)
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(len(times), -1)
        if times.ndim != 1 or len(times) == 0:
            raise DatasetError("dataset must contain at least one record")
        if len(status) != len(times) or cov.shape[0] != len(times):
            raise DatasetError("times, status and covariates differ in length")
        bad = np.flatnonzero(~(times > 0) | ~np.isfinite(times))
        if bad.size:
            raise DatasetError(f"non-positive time at row {bad[0]}")
        bad = np.flatnonzero((status != 0) & (status != 1))
        if bad.size:
            raise DatasetError(f"status outside {{0,1}} at row {bad[0]}")
        names = tuple(self.names) or tuple(f"x{c + 1}" for c in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise DatasetError("covariate names do not match covariate count")
        for arr in (times, status, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def h(self) -> int:
        return int(self.status.sum())

    @property
    def censoring_fraction(self) -> float:
        return 1.0 - self.h / self.n

    @property
    def design(self) -> np.ndarray:
        return np.column_stack([np.ones(self.n), self.covariates])

    @property
    def records(self) -> list[PolicyRecord]:
        return [PolicyRecord(float(t), int(s), tuple(map(float, x)))
                for t, s, x in zip(self.times, self.status, self.covariates)]

    def subset(self, mask) -> "SurvivalDataset":
        return SurvivalDataset(self.times[mask], self.status[mask], self.covariates[mask], self.names)

    def __eq__(self, other):
        if not isinstance(other, SurvivalDataset):
            return NotImplemented
        return (self.names == other.names
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.status, other.status)
                and np.array_equal(self.covariates, other.covariates))


def validate_dataset(rows: Sequence[tuple], names: Sequence[str] | None = None) -> SurvivalDataset:
    """Build a dataset from ``(time, status, covariates)`` rows.

    Any invalid row rejects the whole load; the message names the row index.
    """
    if len(rows) == 0:
        raise DatasetError("no rows to load")
    p = None
    times, status, cov = [], [], []
    for i, (t, s, x) in enumerate(rows):
        t = float(t)
        if not (t > 0 and math.isfinite(t)):
            raise DatasetError(f"non-positive time at row {i}")
        if s not in (0, 1) or int(s) != s:
            raise DatasetError(f"status outside {{0,1}} at row {i}")
        x = [float(v) for v in x]
        if p is None:
            p = len(x)
        elif len(x) != p:
            raise DatasetError(f"ragged covariate row at row {i}: expected {p} values, got {len(x)}")
        times.append(t)
        status.append(int(s))
        cov.append(x)
    return SurvivalDataset(np.array(times), np.array(status),
                           np.array(cov, dtype=float).reshape(len(times), p),
                           tuple(names) if names else ())


def log_times(dataset: SurvivalDataset) -> np.ndarray:
    return np.log(dataset.times)


def write_dataset_csv(dataset: SurvivalDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "status", *dataset.names])
        for t, s, x in zip(dataset.times, dataset.status, dataset.covariates):
            # repr() of a float round-trips exactly
            w.writerow([repr(float(t)), int(s), *(repr(float(v)) for v in x)])


def read_dataset_csv(path) -> SurvivalDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if header[:2] != ["time", "status"]:
            raise DatasetError(f"{path}: header must start with 'time,status'")
        rows = []
        for i, line in enumerate(reader):
            if not line:
                continue
            try:
                rows.append((float(line[0]), int(line[1]), [float(v) for v in line[2:]]))
            except (ValueError, IndexError) as exc:
                raise DatasetError(f"{path}: unparsable row {i}: {exc}") from None
    return validate_dataset(rows, header[2:])


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """Weights, regression coefficients and variances of a K-component
    log-normal mixture.

    ``coefficients`` has shape ``(K, p + 1)`` with the intercept first.
    Components must be ordered by ascending intercept.
    """

    weights: np.ndarray
    coefficients: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        b = np.array(self.coefficients, dtype=float)
        if b.ndim == 1:
            b = b.reshape(len(w), -1)
        v = np.array(self.variances, dtype=float).reshape(-1)
        K = len(w)
        if K < 1:
            raise ParamsError("need at least one component")
        if b.shape[0] != K or len(v) != K:
            raise ParamsError("weights, coefficients and variances disagree on K")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b)) and np.all(np.isfinite(v))):
            raise ParamsError("parameters must be finite")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ParamsError(f"weights must lie on the simplex, got {w}")
        if np.any(v <= 0):
            raise ParamsError(f"variances must be positive, got {v}")
        if np.any(np.diff(b[:, 0]) < 0):
            raise ParamsError(f"components must be ordered by ascending intercept, got {b[:, 0]}")
        for arr in (w, b, v):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "coefficients", b)
        object.__setattr__(self, "variances", v)

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def p(self) -> int:
        return self.coefficients.shape[1] - 1

    def means(self, design: np.ndarray) -> np.ndarray:
        """Component means of log-time, shape ``(n, K)``."""
        return design @ self.coefficients.T

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "weights": self.weights.tolist(),
            "coefficients": self.coefficients.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureParams":
        try:
            params = cls(d["weights"], d["coefficients"], d["variances"])
        except KeyError as exc:
            raise ParamsError(f"parameter JSON missing key {exc}") from None
        if "K" in d and int(d["K"]) != params.K:
            raise ParamsError(f"K={d['K']} but {params.K} components given")
        return params

    @classmethod
    def sorted(cls, weights, coefficients, variances) -> "MixtureParams":
        """Construct after putting components in intercept order."""
        b = np.asarray(coefficients, dtype=float)
        order = np.argsort(b[:, 0], kind="stable")
        w = np.asarray(weights, dtype=float)[order]
        return cls(w / w.sum(), b[order], np.asarray(variances, dtype=float)[order])

    def __eq__(self, other):
        if not isinstance(other, MixtureParams):
            return NotImplemented
        return (np.array_equal(self.weights, other.weights)
                and np.array_equal(self.coefficients, other.coefficients)
                and np.array_equal(self.variances, other.variances))

    def __repr__(self):
        return (f"MixtureParams(weights={self.weights.tolist()}, "
                f"coefficients={self.coefficients.tolist()}, variances={self.variances.tolist()})")


def write_params_json(params: MixtureParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2) + "\n", encoding="utf-8")


def read_params_json(path) -> MixtureParams:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if "params" in d and "weights" not in d:  # EM result file
        d = d["params"]
    return MixtureParams.from_dict(d)


@dataclass(frozen=True)
class PriorSpec:
    """Independent priors: Dirichlet on the weights, Gaussian on each
    coefficient vector, Gamma (shape, rate) on each precision."""

    alpha: np.ndarray
    m: np.ndarray
    tau2: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        K = len(alpha)
        m = np.asarray(self.m, dtype=float)
        if m.ndim == 1:
            m = np.tile(m, (K, 1))
        tau2, a, b = (np.broadcast_to(np.asarray(v, dtype=float), (K,)).copy()
                      for v in (self.tau2, self.a, self.b))
        if m.shape[0] != K:
            raise ParamsError("prior means must have one row per component")
        for name, v in (("alpha", alpha), ("tau2", tau2), ("a", a), ("b", b)):
            if np.any(~(v > 0)):
                raise ParamsError(f"prior hyperparameter {name} must be positive, got {v}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "tau2", tau2)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def K(self) -> int:
        return len(self.alpha)

    @classmethod
    def default(cls, K: int, p: int, *, alpha=2.0, tau2=100.0, a=0.01, b=0.01) -> "PriorSpec":
        return cls(np.full(K, alpha), np.zeros((K, p + 1)), np.full(K, tau2),
                   np.full(K, a), np.full(K, b))


@dataclass
class LatentState:
    """Allocation labels (0-based) and augmented log-times."""

    allocations: np.ndarray
    imputed: np.ndarray = field(repr=False)

    def check(self, dataset: SurvivalDataset) -> None:
        y = log_times(dataset)
        ev = dataset.status == 1
        if not np.array_equal(self.imputed[ev], y[ev]):
            raise ValueError("event records must keep their observed log-time")
        if np.any(self.imputed[~ev] < y[~ev]):
            raise ValueError("imputed log-time below the censoring point")

