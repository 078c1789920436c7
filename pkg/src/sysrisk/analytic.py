"""Closed-form exponential-utility solutions on the empirical measure of a batch.

All expectations are averages over the rows of the batch, so the formulas hold
exactly on that discrete measure and can be compared with trained solvers on
identical data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch
from .scenario import GroupPartition, ScenarioBatch, group_sums
from .utility import AcceptanceLevel, UtilityParams, aggregate, check_exponent


@dataclass(frozen=True)
class AnalyticSolution:
    rho: float
    group_cash: np.ndarray      # (h,)
    allocations: np.ndarray     # (M, N)
    densities: np.ndarray       # (M, h)
    alpha_penalty: float
    fair: np.ndarray            # (N,)
    partition: GroupPartition

    def summary(self) -> dict:
        return {
            "rho": self.rho,
            "group_cash": self.group_cash,
            "alpha_penalty": self.alpha_penalty,
            "fair": self.fair,
            "groups": [list(g) for g in self.partition.groups],
        }


def _data(batch):
    return batch.data if isinstance(batch, ScenarioBatch) else np.asarray(batch, dtype=float)


def beta(params: UtilityParams, index_set=None) -> float:
    idx = list(range(params.n)) if index_set is None else list(index_set)
    if not idx:
        raise ValueError("index set must be nonempty")
    return float(np.sum(1.0 / params.alphas[idx]))


def _gibbs(s, b):
    """Normalised exp(-s/b) and the batch mean of exp(-s/b)."""
    e = -s / b
    check_exponent(np.abs(e), "|S/beta|")
    w = np.exp(e)
    z = float(np.mean(w))
    return w / z, z


def solve_single(batch, params: UtilityParams, level: AcceptanceLevel) -> AnalyticSolution:
    x = _data(batch)
    if x.shape[1] != params.n:
        raise DimensionMismatch(f"batch width {x.shape[1]} != number of utilities {params.n}")
    bt = beta(params)
    s = x.sum(axis=1)
    density, z = _gibbs(s, bt)
    rho = bt * np.log(-bt / level.b * z)
    y = -x + np.outer(s + rho, 1.0 / (bt * params.alphas))
    alpha_pen = bt * np.mean(density * np.log(density)) + bt * np.log(-level.b / bt)
    fair = np.mean(y * density[:, None], axis=0)
    return AnalyticSolution(float(rho), np.array([rho]), y, density[:, None],
                            float(alpha_pen), fair, GroupPartition.single(params.n))


def solve_multi(batch, params: UtilityParams, partition: GroupPartition,
                level: AcceptanceLevel) -> AnalyticSolution:
    """Group-wise generalisation: each group's total is deterministic and each
    group carries its own density."""
    x = _data(batch)
    if x.shape[1] != params.n or partition.n != params.n:
        raise DimensionMismatch("batch, utilities and partition disagree on N")
    sums = group_sums(x, partition)
    betas = np.array([beta(params, g) for g in partition.groups])
    bt = betas.sum()
    cash = np.empty(partition.h)
    dens = np.empty_like(sums)
    y = np.empty_like(x)
    entropy = 0.0
    for m, g in enumerate(partition.groups):
        d, z = _gibbs(sums[:, m], betas[m])
        dens[:, m] = d
        cash[m] = betas[m] * np.log(bt / -level.b * z)
        g = list(g)
        y[:, g] = -x[:, g] + np.outer(sums[:, m] + cash[m], 1.0 / (betas[m] * params.alphas[g]))
        entropy += betas[m] * np.mean(d * np.log(d))
    alpha_pen = entropy + bt * np.log(-level.b / bt)
    fair = np.mean(y * dens[:, partition.membership()], axis=0)
    return AnalyticSolution(float(cash.sum()), cash, y, dens, float(alpha_pen), fair, partition)


@dataclass(frozen=True)
class Diagnostics:
    acceptance_residual: float          # E[sum u(X+Y)] - B
    group_sum_residuals: np.ndarray     # (M, h): row group sum minus group cash
    density_means: np.ndarray           # (h,)
    full_allocation_residual: float     # sum(fair) - rho
    dual_residual: float                # sum_m E[-S_m D_m] - alpha - rho

    @property
    def max_group_sum_residual(self) -> float:
        return float(np.max(np.abs(self.group_sum_residuals)))


def verify(sol: AnalyticSolution, batch, params: UtilityParams, partition: Optional[GroupPartition],
           level: AcceptanceLevel) -> Diagnostics:
    x = _data(batch)
    partition = partition or sol.partition
    if sol.allocations.shape != x.shape:
        raise DimensionMismatch("solution and batch shapes differ")
    acc = float(np.mean(aggregate(x + sol.allocations, params))) - level.b
    resid = group_sums(sol.allocations, partition) - sol.group_cash
    sums = group_sums(x, partition)
    dual = float(np.sum(np.mean(-sums * sol.densities, axis=0))) - sol.alpha_penalty - sol.rho
    return Diagnostics(acc, resid, sol.densities.mean(axis=0),
                       float(np.sum(sol.fair) - sol.rho), dual)


# ---------------------------------------------------------------------------
# Independent validators. None of these use the closed-form expressions above.
# ---------------------------------------------------------------------------

def _common_marginal(params, cols, totals, iters=200):
    """Per scenario, the log-marginal t with sum_i (u_i')^{-1}(e^t) == total.

    Vectorised bisection; the left side is strictly decreasing in t.
    """
    lo = np.full(totals.shape, -700.0)
    hi = np.full(totals.shape, 700.0)

    def total(t):
        return np.sum(params.inverse_derivative(np.exp(t)[:, None], cols), axis=1)

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        above = total(mid) > totals
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.max(hi - lo) < 1e-14 * (1 + np.max(np.abs(mid))):
            break
    return 0.5 * (lo + hi)


def kkt_solve(batch, params, partition: GroupPartition, level: AcceptanceLevel):
    """Solve the discrete primal problem from its optimality conditions alone.

    Inside each scenario and group the marginal utilities u_i'(X^i + Y^i) are
    equalised at a common value k_m(w) consistent with the group total
    S_m(w) + d_m. Stationarity in d_m requires E[k_m] = 1 / eta, and the single
    multiplier eta is fixed by making the acceptance constraint bind. Each of
    the three conditions is solved by one-dimensional root finding.
    Returns ``(rho, group_cash, allocations)``.
    """
    from scipy.optimize import brentq

    x = _data(batch)
    groups = [list(g) for g in partition.groups]
    sums = group_sums(x, partition)

    def group_solution(m, d):
        logk = _common_marginal(params, groups[m], sums[:, m] + d)
        return logk, params.inverse_derivative(np.exp(logk)[:, None], groups[m])

    def cash_for(m, log_eta):
        # log E[k_m] + log eta, decreasing in d
        def f(d):
            logk, _ = group_solution(m, d)
            return np.log(np.mean(np.exp(logk))) + log_eta

        lo, hi = -1.0, 1.0
        while f(lo) < 0:
            lo *= 2
        while f(hi) > 0:
            hi *= 2
        return brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)

    def assemble(log_eta):
        cash = np.array([cash_for(m, log_eta) for m in range(len(groups))])
        pos = np.empty_like(x)
        for m, g in enumerate(groups):
            pos[:, g] = group_solution(m, cash[m])[1]
        return cash, pos - x

    def binding(log_eta):
        _, y = assemble(log_eta)
        return float(np.mean(aggregate(x + y, params))) - level.b

    lo, hi = -2.0, 2.0
    while binding(lo) > 0:
        lo -= 2
    while binding(hi) < 0:
        hi += 2
    log_eta = brentq(binding, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    cash, y = assemble(log_eta)
    return float(cash.sum()), cash, y


def project_group_constant(y, partition: GroupPartition):
    """Orthogonal projection of an M x N table onto the tables whose group row
    sums do not depend on the scenario."""
    y = np.array(y, dtype=float)
    for g in partition.groups:
        g = list(g)
        r = y[:, g].sum(axis=1)
        y[:, g] -= ((r - r.mean()) / len(g))[:, None]
    return y


def projected_gradient_solve(batch, params, partition: GroupPartition, level: AcceptanceLevel,
                             max_iter: int = 20000, gtol: float = 1e-12):
    """Generic projected-gradient method for the discrete primal problem.

    For a fixed multiplier eta the Lagrangian
    ``sum_m d_m - eta * (E[sum u(X+Y)] - B)`` is minimised over the subspace
    of group-deterministic tables with projected Barzilai-Borwein steps and an
    Armijo safeguard; eta is then root-found so the acceptance constraint
    binds. Meant for tiny instances.
    """
    from scipy.optimize import brentq

    from .errors import NonFiniteValue

    x = _data(batch)
    m = x.shape[0]
    state = {"y": np.zeros_like(x)}

    def lagrangian(y, eta):
        return float(np.sum(y) / m - eta * np.mean(aggregate(x + y, params)))

    def grad(y, eta):
        return project_group_constant((1.0 - eta * params.derivative(x + y)) / m, partition)

    def inner(eta):
        y = state["y"]
        f, g = lagrangian(y, eta), grad(y, eta)
        step = 1.0
        for _ in range(max_iter):
            if np.max(np.abs(g)) * m < gtol:
                break
            gg = float(np.sum(g * g))
            while True:
                y_new = y - step * g
                try:
                    f_new = lagrangian(y_new, eta)
                except NonFiniteValue:
                    f_new = np.inf
                if f_new <= f - 1e-4 * step * gg or step < 1e-30:
                    break
                step *= 0.5
            if step < 1e-30 or f_new >= f:
                # no descent left above rounding noise
                break
            g_new = grad(y_new, eta)
            s, r = y_new - y, g_new - g
            sr = float(np.sum(s * r))
            step = float(np.sum(s * s)) / sr if sr > 0 else 2 * step
            y, f, g = y_new, f_new, g_new
        state["y"] = y
        return y

    def binding(log_eta):
        y = inner(np.exp(log_eta))
        return float(np.mean(aggregate(x + y, params))) - level.b

    lo, hi = -2.0, 2.0
    while binding(lo) > 0:
        lo -= 2
    while binding(hi) < 0:
        hi += 2
    log_eta = brentq(binding, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    y = inner(np.exp(log_eta))
    cash = np.array([np.mean(y[:, list(g)].sum(axis=1)) for g in partition.groups])
    return float(cash.sum()), cash, y


def brute_force_solve(batch, params, partition: GroupPartition, level: AcceptanceLevel):
    """Problem 1 on the empirical measure, handed to a generic conic solver.

    Variables are the full M x N allocation table plus one cash amount per
    group; constraints are the per-scenario group-sum equalities and the
    expected-utility inequality. Exponential utilities only (exp-cone).
    Returns ``(rho, group_cash, allocations)``.
    """
    import cvxpy as cp

    x = _data(batch)
    m, n = x.shape
    y = cp.Variable((m, n))
    d = cp.Variable(partition.h)
    a = params.alphas
    utility = -cp.sum(cp.multiply(cp.exp(cp.multiply(-np.ones((m, 1)) * a, x + y)),
                                  np.ones((m, 1)) / a)) / m
    cons = [y @ partition.indicator() == np.ones((m, 1)) @ cp.reshape(d, (1, partition.h), order='C'),
            utility >= level.b]
    prob = cp.Problem(cp.Minimize(cp.sum(d)), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12,
               max_iter=500)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"brute-force solver failed: {prob.status}")
    return float(np.sum(d.value)), np.asarray(d.value), np.asarray(y.value)
