"""Utility functions, the additive aggregation and the acceptance-set gap."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue

# exp() argument bound; beyond it values are rejected instead of saturating
EXP_LIMIT = 700.0


def check_exponent(z, what="exponent"):
    z = np.asarray(z)
    if not np.all(np.isfinite(z)) or (z.size and np.max(z) > EXP_LIMIT):
        raise NonFiniteValue(f"{what} exceeds {EXP_LIMIT}; utility would overflow")


class Utility:
    """Per-institution utility family: value and first derivative, vectorised
    over the last axis (one column per institution)."""

    n: int

    def value(self, x):
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError

    def inverse_derivative(self, c, cols=None):
        """Position p with u_n'(p) = c for the institutions in ``cols``."""
        raise NotImplementedError

    def value_var(self, z):
        """Same as :meth:`value` but on an autodiff ``Var``."""
        raise NotImplementedError


@dataclass(frozen=True)
class UtilityParams(Utility):
    """Exponential utilities u_n(x) = -exp(-alpha_n x) / alpha_n."""

    alphas: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.alphas, dtype=float))
        if a.ndim != 1 or a.size == 0:
            raise DimensionMismatch("alphas must be a non-empty vector")
        if not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise ValueError("every alpha must be finite and > 0")
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)

    @property
    def n(self) -> int:
        return self.alphas.size

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.n,):
            raise DimensionMismatch(f"expected trailing dimension {self.n}, got shape {x.shape}")
        return x

    def value(self, x):
        x = self._check(x)
        e = -self.alphas * x
        check_exponent(e)
        return -np.exp(e) / self.alphas

    def derivative(self, x):
        x = self._check(x)
        e = -self.alphas * x
        check_exponent(e)
        return np.exp(e)

    def inverse_derivative(self, c, cols=None):
        a = self.alphas if cols is None else self.alphas[list(cols)]
        return -np.log(c) / a

    def value_var(self, z):
        e = z * (-self.alphas)
        check_exponent(e.data)
        return e.exp() * (-1.0 / self.alphas)


@dataclass(frozen=True)
class AcceptanceLevel:
    b: float

    def __post_init__(self):
        b = float(self.b)
        if not np.isfinite(b) or b >= 0:
            raise ValueError(f"acceptance level B must be finite and < 0, got {b}")
        object.__setattr__(self, "b", b)


def exp_utility(x, alpha):
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    e = -alpha * np.asarray(x, dtype=float)
    check_exponent(e)
    return -np.exp(e) / alpha


def aggregate(x, params: Utility):
    """Sum over institutions of u_n(x_n); works row-wise on matrices."""
    return np.sum(params.value(x), axis=-1)


def acceptance_gap(positions, params: Utility, level: AcceptanceLevel) -> float:
    """(B - batch mean of sum_n u_n(position_n))^+."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    total = aggregate(positions, params)
    if not np.all(np.isfinite(total)):
        raise NonFiniteValue("non-finite utility in acceptance gap")
    return max(level.b - float(np.mean(total)), 0.0)
