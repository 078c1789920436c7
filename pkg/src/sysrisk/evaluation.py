"""Fair allocations, comparison metrics and the JSON experiment report."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, ZeroReference
from .jsonfmt import dumps
from .network import Network, forward
from .scenario import GroupPartition

SCHEMA = "sysrisk-report/1"
REPORT_KEYS = ("config", "analytic", "primal", "dual", "fair", "metrics", "runtime_seconds", "seeds")


@dataclass(frozen=True)
class FairAllocations:
    per_institution: np.ndarray
    total: float

    def __post_init__(self):
        v = np.asarray(self.per_institution, dtype=float).ravel()
        object.__setattr__(self, "per_institution", v)
        object.__setattr__(self, "total", float(np.sum(v)))

    @classmethod
    def from_vector(cls, v) -> "FairAllocations":
        return cls(np.asarray(v, dtype=float), 0.0)


def _values(obj, x, reference=None):
    if isinstance(obj, Network):
        return forward(obj, x, reference=reference)
    if callable(obj):
        return np.asarray(obj(x), dtype=float)
    return np.asarray(obj, dtype=float)


def fair_estimate(phi_net, theta_nets, batch, partition: Optional[GroupPartition] = None) -> FairAllocations:
    """rho^n = E[phi_n(X) * Theta^m(X)] with m the group of institution n.

    ``phi_net`` and each entry of ``theta_nets`` may be a network, a callable
    or a precomputed array (M x N and M values). Network densities are
    normalised over ``batch``; arrays are used as given.
    """
    x = np.asarray(getattr(batch, "data", batch), dtype=float)
    m, n = x.shape
    partition = partition or GroupPartition.single(n)
    if partition.n != n or len(theta_nets) != partition.h:
        raise DimensionMismatch("need one density per group and a partition of width N")
    y = _values(phi_net, x)
    dens = np.column_stack([np.ravel(_values(t, x)) for t in theta_nets])
    if y.shape != (m, n) or dens.shape != (m, partition.h):
        raise DimensionMismatch("allocations must be M x N and densities M x h")
    per = np.mean(y * dens[:, partition.membership()], axis=0)
    return FairAllocations.from_vector(per)


def ord(estimate, reference) -> float:
    """Overall relative difference ||E_hat - E||_1 / ||E||_1.

    For random variables given as batch columns the L1 norm is the batch
    average, which cancels in the ratio.
    """
    est = np.asarray(estimate, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if est.shape != ref.shape:
        raise DimensionMismatch(f"shapes differ: {est.shape} vs {ref.shape}")
    denom = float(np.sum(np.abs(ref)))
    if denom == 0.0:
        raise ZeroReference("reference has zero L1 norm")
    return float(np.sum(np.abs(est - ref))) / denom


def abs_diff(estimate: float, reference: float) -> float:
    return abs(float(estimate) - float(reference))


def monotone_violations(s, d) -> float:
    """Fraction of scenario pairs with s_i < s_j where d fails to decrease (d_i <= d_j).

    Counts over all pairs, not only neighbours after sorting: adjacent values of
    s are nearly equal and their densities differ mostly by noise. Pairs tied in
    s are excluded. O(M log M) via a Fenwick tree over the ranks of d.
    """
    s = np.asarray(s, dtype=float).ravel()
    d = np.asarray(d, dtype=float).ravel()
    if s.shape != d.shape:
        raise DimensionMismatch("s and d must have the same length")
    m = s.size
    _, tie_counts = np.unique(s, return_counts=True)
    total = m * (m - 1) // 2 - int(np.sum(tie_counts * (tie_counts - 1) // 2))
    if total == 0:
        return 0.0
    rank = np.searchsorted(np.unique(d), d) + 1
    tree = np.zeros(rank.max() + 1, dtype=np.int64)
    order = np.argsort(s, kind="stable")
    bad, start = 0, 0
    while start < m:
        stop = start
        while stop < m and s[order[stop]] == s[order[start]]:
            stop += 1
        block = order[start:stop]
        for i in block:  # earlier, strictly smaller s with d <= d_i
            r = rank[i]
            while r > 0:
                bad += tree[r]
                r -= r & -r
        for i in block:
            r = rank[i]
            while r < tree.size:
                tree[r] += 1
                r += r & -r
        start = stop
    return bad / total


def build_report(config: dict, seeds: dict, analytic=None, primal=None, dual=None,
                 fair=None, metrics=None, runtime_seconds: float = 0.0) -> dict:
    """Assemble the report dict; sections that were not computed are ``None``."""
    return {
        "schema": SCHEMA,
        "config": config,
        "analytic": analytic,
        "primal": primal,
        "dual": dual,
        "fair": fair,
        "metrics": metrics if metrics is not None else {},
        "runtime_seconds": float(runtime_seconds),
        "seeds": seeds,
    }


def report_to_json(report: dict) -> str:
    return dumps(report, indent=2) + "\n"


def report_from_json(text: str) -> dict:
    report = json.loads(text)
    if report.get("schema") != SCHEMA:
        raise ValueError(f"unsupported report schema {report.get('schema')!r}")
    missing = [k for k in REPORT_KEYS if k not in report]
    if missing:
        raise ValueError(f"report lacks keys {missing}")
    return report
