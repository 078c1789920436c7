"""Gaussian risk-factor model, scenario batches and group partitions."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue, NotPositiveSemidefinite, ParseError

# Recorded in reports so every run states which generator produced its data.
RNG_NAME = "numpy.random.Generator(PCG64) + ziggurat standard_normal"

PIVOT_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def cholesky_factor(covariance) -> np.ndarray:
    """Lower-triangular L with L @ L.T == covariance, tolerating semidefinite input.

    Pivots in [-1e-12, 0) are clamped to zero (scaled by the largest diagonal
    entry); anything more negative raises NotPositiveSemidefinite.
    """
    a = np.asarray(covariance, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"covariance must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue("covariance contains non-finite entries")
    n = a.shape[0]
    scale = max(1.0, float(np.max(np.abs(np.diag(a))))) if n else 1.0
    tol = PIVOT_TOL * scale
    L = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if pivot < -tol:
            raise NotPositiveSemidefinite(f"pivot {pivot:.3e} at index {j}")
        if pivot <= tol:
            # zero pivot: the remaining column must vanish as well
            col = a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]
            if np.any(np.abs(col) > np.sqrt(tol) * scale):
                raise NotPositiveSemidefinite(f"zero pivot with nonzero coupling at index {j}")
            continue
        d = np.sqrt(pivot)
        L[j, j] = d
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / d
    return L


@dataclass(frozen=True)
class RiskFactorModel:
    """Joint Gaussian law of the institutions' terminal risk factors."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(
                f"mean has length {mean.size} but covariance has shape {cov.shape}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NonFiniteValue("model parameters must be finite")
        denom = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > 1e-12 * denom:
            raise NotPositiveSemidefinite("covariance is not symmetric")
        object.__setattr__(self, "mean", _readonly(mean))
        object.__setattr__(self, "covariance", _readonly(cov))
        object.__setattr__(self, "_chol", _readonly(cholesky_factor(cov)))

    @property
    def n_institutions(self) -> int:
        return self.mean.size

    @classmethod
    def equicorrelated(cls, mean, std, corr: float) -> "RiskFactorModel":
        mean = np.asarray(mean, dtype=float)
        std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)
        r = np.full((mean.size, mean.size), corr)
        np.fill_diagonal(r, 1.0)
        return cls(mean, r * np.outer(std, std))


@dataclass(frozen=True)
class ScenarioBatch:
    data: np.ndarray
    seed: Optional[int] = None
    source: str = "simulated"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionMismatch(f"scenario data must be a non-empty M x N matrix, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteValue("scenario data contains non-finite entries")
        if self.source not in ("simulated", "ingested"):
            raise ValueError(f"unknown source {self.source!r}")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]


def sample(model: RiskFactorModel, m: int, seed: int) -> ScenarioBatch:
    """Draw ``m`` i.i.d. rows from N(mean, covariance); bit-reproducible per seed."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    z = rng.standard_normal((m, model.n_institutions))
    data = model.mean + z @ model._chol.T
    return ScenarioBatch(data, seed=seed, source="simulated")


def save_scenarios(batch: ScenarioBatch, path) -> None:
    header = ",".join(f"x{j + 1}" for j in range(batch.n))
    lines = [header]
    lines += [",".join(repr(float(v)) for v in row) for row in batch.data]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_scenarios(path) -> ScenarioBatch:
    """Read a scenario CSV (header ``x1,...,xN``, one scenario per line)."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty scenario file", row=1) from None
    header = [h.strip() for h in header]
    expected = [f"x{j + 1}" for j in range(len(header))]
    if header != expected:
        raise ParseError(f"header must be {','.join(expected)}, got {','.join(header)}", row=1)
    n = len(header)
    rows = []
    for lineno, raw in enumerate(reader, start=2):
        if not raw or (len(raw) == 1 and not raw[0].strip()):
            continue
        if len(raw) != n:
            raise ParseError(f"expected {n} fields, found {len(raw)}", row=lineno)
        vals = []
        for col, cell in enumerate(raw, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"not a decimal number: {cell!r}", row=lineno, column=col) from None
            if not np.isfinite(v):
                raise NonFiniteValue(f"non-finite value {cell!r} at row {lineno}, column {col}")
            vals.append(v)
        rows.append(vals)
    if not rows:
        raise ParseError("no scenario rows", row=2)
    return ScenarioBatch(np.array(rows), seed=None, source="ingested")


@dataclass(frozen=True)
class GroupPartition:
    """Disjoint 0-based index groups covering ``range(n)``."""

    groups: tuple = field()

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        if not groups or any(len(g) == 0 for g in groups):
            raise ValueError("partition needs at least one group and no empty groups")
        flat = [i for g in groups for i in g]
        if sorted(flat) != list(range(len(flat))):
            raise ValueError(f"groups must be disjoint and cover 0..{len(flat) - 1}: {groups}")
        object.__setattr__(self, "groups", groups)

    @property
    def n(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def h(self) -> int:
        return len(self.groups)

    @classmethod
    def single(cls, n: int) -> "GroupPartition":
        return cls((tuple(range(n)),))

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> "GroupPartition":
        groups, start = [], 0
        for s in sizes:
            groups.append(tuple(range(start, start + s)))
            start += s
        return cls(tuple(groups))

    def membership(self) -> np.ndarray:
        """Length-N array mapping institution index to its group index."""
        out = np.empty(self.n, dtype=int)
        for k, g in enumerate(self.groups):
            out[list(g)] = k
        return out

    def indicator(self) -> np.ndarray:
        """N x h 0/1 matrix; ``X @ indicator`` gives the group sums."""
        ind = np.zeros((self.n, self.h))
        ind[np.arange(self.n), self.membership()] = 1.0
        return ind


def group_sums(batch, partition: GroupPartition) -> np.ndarray:
    data = batch.data if isinstance(batch, ScenarioBatch) else np.asarray(batch, dtype=float)
    if data.ndim != 2 or data.shape[1] != partition.n:
        raise DimensionMismatch(
            f"partition covers {partition.n} institutions, batch has shape {data.shape}")
    return np.stack([data[:, list(g)].sum(axis=1) for g in partition.groups], axis=1)
