"""Adversarial dual solver.

A position network Psi (descent) plays against one density network per group
(ascent). Density networks end in a softplus whose outputs are divided by their
batch mean, so every density has unit mass on the batch it is evaluated on.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .autodiff import Var
from .errors import Diverged, DimensionMismatch, NonFiniteValue
from .network import Network, backward_multi, forward, init, sgd_step
from .scenario import GroupPartition
from .utility import AcceptanceLevel, Utility


@dataclass
class DualConfig:
    lambda_alpha: float = 5.0
    lr_psi: float = 0.003
    lr_theta: float = 0.003
    lr_decay: float = 0.7
    decay_every: int = 10
    epochs: int = 100
    minibatch: int = 512
    batch_growth: int = 2
    hold_epochs: int = 60
    psi_steps: int = 3               # Psi updates per minibatch, taken first
    theta_steps: int = 1             # density updates per minibatch
    psi_hidden: tuple = (100, 100, 100)
    theta_hidden: tuple = (100, 100, 100)
    activation: str = "relu"
    momentum: float = 0.0
    partition: Optional[GroupPartition] = None
    zx_constraint: bool = False      # Psi(X) >= X componentwise
    seed: int = 0

    def __post_init__(self):
        if self.lambda_alpha <= 0 or self.lr_psi <= 0 or self.lr_theta <= 0:
            raise ValueError("lambda_alpha and learning rates must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        for name in ("epochs", "minibatch", "decay_every", "batch_growth", "psi_steps", "theta_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hold_epochs < 0:
            raise ValueError("hold_epochs must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        self.psi_hidden = tuple(int(h) for h in self.psi_hidden)
        self.theta_hidden = tuple(int(h) for h in self.theta_hidden)

    def schedule(self, epoch: int):
        k = max(epoch - self.hold_epochs, 0) // self.decay_every
        return (self.lr_psi * self.lr_decay ** k, self.lr_theta * self.lr_decay ** k,
                self.minibatch * self.batch_growth ** k)


@dataclass
class DualResult:
    theta_nets: list
    psi_net: Network
    rho_hat: float
    alpha_hat: float
    penalty_gap: float
    densities: np.ndarray               # (M, h) on the evaluation batch
    objective_trace: list = field(default_factory=list)
    alpha_trace: list = field(default_factory=list)
    partition: Optional[GroupPartition] = None
    zx_constraint: bool = False
    runtime_seconds: float = 0.0

    def summary(self) -> dict:
        return {
            "rho_hat": self.rho_hat,
            "alpha_hat": self.alpha_hat,
            "penalty_gap": self.penalty_gap,
            "objective_trace": self.objective_trace,
            "alpha_trace": self.alpha_trace,
            "runtime_seconds": self.runtime_seconds,
        }


def _cfg_partition(cfg, n):
    partition = cfg.partition or GroupPartition.single(n)
    if partition.n != n:
        raise DimensionMismatch("partition does not match the batch width")
    return partition


def _objectives(psi: Var, thetas, x: Var, params: Utility, level, lam, indicator):
    """(J_dual, J_alpha, gap) as Var nodes; ``thetas`` is a list of M x 1 densities."""
    dens = thetas[0] if len(thetas) == 1 else _hstack(thetas)
    # density of each institution's group, M x N
    d_inst = dens @ indicator.T
    utility = params.value_var(psi).sum(axis=1).mean()
    gap = (level.b - utility).pos()
    j_alpha = (-(psi * d_inst)).sum(axis=1).mean() - lam * gap
    j_dual = (-(x * d_inst)).sum(axis=1).mean() - j_alpha
    return j_dual, j_alpha, gap


def _hstack(cols):
    # concatenate M x 1 Vars along axis 1 via matmul with unit rows
    h = len(cols)
    out = None
    for k, c in enumerate(cols):
        e = np.zeros((1, h))
        e[0, k] = 1.0
        term = c @ e
        out = term if out is None else out + term
    return out


def _as_fn(net, x, reference=None):
    if isinstance(net, Network):
        return forward(net, x, reference=reference)
    return np.asarray(net(x), dtype=float)


def _eval_parts(psi, thetas, batch, params, partition, reference_needed):
    x = np.asarray(getattr(batch, "data", batch), dtype=float)
    z = _as_fn(psi, x, reference=x if reference_needed else None)
    dens = np.column_stack([np.ravel(_as_fn(t, x)) for t in thetas])
    if z.shape != x.shape or dens.shape != (x.shape[0], partition.h):
        raise DimensionMismatch("psi must map to M x N and each density to M values")
    return x, z, dens


def alpha_objective(psi, thetas, batch, params: Utility, level: AcceptanceLevel, cfg: DualConfig,
                    return_gap=False):
    """Penalised estimate of the penalty function alpha_B at (psi, thetas).

    ``psi`` and ``thetas`` are networks or plain callables (for plugging in
    fixed maps); density networks are normalised over ``batch``.
    """
    x = np.asarray(getattr(batch, "data", batch), dtype=float)
    partition = _cfg_partition(cfg, x.shape[1])
    x, z, dens = _eval_parts(psi, thetas, x, params, partition,
                             isinstance(psi, Network) and psi.output_head == "shifted_softplus")
    d_inst = dens[:, partition.membership()]
    u = params.value(z).sum(axis=1)
    if not np.all(np.isfinite(u)):
        raise NonFiniteValue("non-finite utility in alpha objective")
    gap = max(level.b - float(np.mean(u)), 0.0)
    value = float(np.mean(np.sum(-z * d_inst, axis=1))) - cfg.lambda_alpha * gap
    return (value, gap) if return_gap else value


def dual_objective(psi, thetas, batch, params: Utility, level: AcceptanceLevel, cfg: DualConfig):
    x = np.asarray(getattr(batch, "data", batch), dtype=float)
    partition = _cfg_partition(cfg, x.shape[1])
    dens = np.column_stack([np.ravel(_as_fn(t, x)) for t in thetas])
    d_inst = dens[:, partition.membership()]
    return float(np.mean(np.sum(-x * d_inst, axis=1))) - alpha_objective(
        psi, thetas, x, params, level, cfg)


def density_eval(theta: Network, batch) -> np.ndarray:
    """Density values normalised to unit mean over ``batch``."""
    out = np.ravel(forward(theta, batch))
    if theta.output_head != "softplus_mean_normalized":
        out = out / out.mean()
    return out


def train_dual(batch, params: Utility, level: AcceptanceLevel, cfg: DualConfig,
               eval_batch=None, callback: Optional[Callable] = None) -> DualResult:
    """Alternating minibatch updates: Psi descends J_dual, every Theta ascends it."""
    t0 = time.perf_counter()
    x = np.asarray(getattr(batch, "data", batch), dtype=float)
    m, n = x.shape
    if params.n != n:
        raise DimensionMismatch(f"{params.n} utilities for a batch of width {n}")
    partition = _cfg_partition(cfg, n)
    indicator = partition.indicator()
    psi_head = "shifted_softplus" if cfg.zx_constraint else "identity"
    psi = init((n, *cfg.psi_hidden, n), cfg.activation, psi_head, cfg.seed, standardize=x)
    thetas = [init((n, *cfg.theta_hidden, 1), cfg.activation, "softplus_mean_normalized",
                   cfg.seed + 1000 * (k + 1), standardize=x) for k in range(partition.h)]
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 1))
    v_psi: list = []
    v_theta = [[] for _ in thetas]
    trace, alpha_trace = [], []

    def loss(outs, xv):
        j_dual, _, _ = _objectives(outs[0], outs[1:], xv, params, level, cfg.lambda_alpha, indicator)
        return j_dual

    def grads(xb):
        refs = [xb if cfg.zx_constraint else None] + [None] * len(thetas)
        return backward_multi([psi, *thetas], loss, xb, references=refs)

    for epoch in range(cfg.epochs):
        lr_psi, lr_theta, mb = cfg.schedule(epoch)
        mb = min(mb, m)
        order = rng.permutation(m)
        total, count = 0.0, 0
        for start in range(0, m - mb + 1, mb):
            xb = x[order[start:start + mb]]
            try:
                for _ in range(cfg.psi_steps):
                    value, g = grads(xb)
                    psi = sgd_step(psi, g[0], lr_psi, "descent", v_psi, cfg.momentum)
                for _ in range(cfg.theta_steps):
                    value, g = grads(xb)
                    thetas = [sgd_step(t, gt, lr_theta, "ascent", vt, cfg.momentum)
                              for t, gt, vt in zip(thetas, g[1:], v_theta)]
            except NonFiniteValue as exc:
                raise Diverged(f"dual objective non-finite in epoch {epoch}: {exc}",
                               last_state=(psi, thetas)) from None
            total += value
            count += 1
        trace.append(total / count)
        if not np.isfinite(trace[-1]):
            raise Diverged(f"dual objective non-finite in epoch {epoch}", last_state=(psi, thetas))
        if callback is not None:
            callback(epoch, trace[-1], psi, thetas)

    ev = x if eval_batch is None else np.asarray(getattr(eval_batch, "data", eval_batch), dtype=float)
    alpha_hat, gap = alpha_objective(psi, thetas, ev, params, level, cfg, return_gap=True)
    rho_hat = dual_objective(psi, thetas, ev, params, level, cfg)
    dens = np.column_stack([density_eval(t, ev) for t in thetas])
    alpha_trace.append(alpha_hat)
    return DualResult(thetas, psi, rho_hat, alpha_hat, gap, dens, trace, alpha_trace,
                      partition, cfg.zx_constraint, time.perf_counter() - t0)
