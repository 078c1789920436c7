"""Penalised primal solver: an allocation network trained by minibatch SGD."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .autodiff import Var
from .errors import Diverged, DimensionMismatch, NonFiniteValue
from .network import Network, backward, forward, init, sgd_step
from .scenario import GroupPartition, group_sums
from .utility import AcceptanceLevel, Utility, acceptance_gap


@dataclass
class PrimalConfig:
    mu: float = 10.0                 # variance-penalty weight
    lam: float = 5.0                 # acceptance-penalty weight
    lr: float = 0.003
    lr_decay: float = 0.7
    decay_every: int = 10            # epochs between learning-rate decays
    epochs: int = 310
    minibatch: int = 512
    # minibatch size is multiplied by this at every decay; the positive-part
    # penalty is biased on small batches, so late epochs use larger ones
    batch_growth: int = 2
    # epochs at the initial learning rate before decays start
    hold_epochs: int = 250
    hidden: tuple = (100, 100, 100)
    activation: str = "relu"
    momentum: float = 0.0
    partition: Optional[GroupPartition] = None
    nonneg: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mu < 0 or self.lam < 0:
            raise ValueError("penalty weights must be >= 0")
        if self.lr <= 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("lr must be > 0 and lr_decay in (0, 1]")
        if self.epochs < 1 or self.minibatch < 1 or self.decay_every < 1 or self.batch_growth < 1:
            raise ValueError("epochs, minibatch, decay_every and batch_growth must be >= 1")
        if self.hold_epochs < 0:
            raise ValueError("hold_epochs must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        self.hidden = tuple(int(h) for h in self.hidden)

    def head(self) -> str:
        return "softplus" if self.nonneg else "identity"

    def schedule(self, epoch: int):
        """(learning rate, minibatch size) for a 0-based epoch."""
        k = max(epoch - self.hold_epochs, 0) // self.decay_every
        return self.lr * self.lr_decay ** k, self.minibatch * self.batch_growth ** k


@dataclass
class PrimalResult:
    net: Network
    rho_hat: float                       # E[sum phi] on the evaluation batch
    objective: float                     # penalised objective on the evaluation batch
    components: dict
    variance_residual: np.ndarray        # per-group variance of the allocation totals
    acceptance_residual: float           # final acceptance gap
    loss_trace: list = field(default_factory=list)
    partition: Optional[GroupPartition] = None
    runtime_seconds: float = 0.0

    def summary(self) -> dict:
        return {
            "rho_hat": self.rho_hat,
            "objective": self.objective,
            "components": self.components,
            "variance_residual": self.variance_residual,
            "acceptance_residual": self.acceptance_residual,
            "loss_trace": self.loss_trace,
            "runtime_seconds": self.runtime_seconds,
        }


def _loss_graph(y: Var, x: Var, params: Utility, level: AcceptanceLevel, mu, lam, indicator):
    """Penalised primal objective on Var nodes; returns (loss, [cash, var, gap])."""
    cash = y.sum(axis=1).mean()
    totals = y @ indicator
    variance = totals.var(axis=0).sum()
    utility = params.value_var(x + y).sum(axis=1).mean()
    gap = (level.b - utility).pos()
    return cash + mu * variance + lam * gap, [cash, variance, gap]


def primal_loss(net, batch, params: Utility, level: AcceptanceLevel, cfg: PrimalConfig):
    """Objective value and its three addends (cash, variance, acceptance gap).

    ``net`` may be a :class:`Network` or any callable mapping an M x N array to
    an M x N allocation (used to plug in fixed allocation maps).
    """
    x = np.asarray(getattr(batch, "data", batch), dtype=float)
    partition = cfg.partition or GroupPartition.single(x.shape[1])
    y = forward(net, x) if isinstance(net, Network) else np.asarray(net(x), dtype=float)
    if y.shape != x.shape:
        raise DimensionMismatch(f"allocation shape {y.shape} != batch shape {x.shape}")
    cash = float(np.mean(y.sum(axis=1)))
    variance = float(np.sum(np.var(group_sums(y, partition), axis=0)))
    gap = acceptance_gap(x + y, params, level)
    comps = {"cash": cash, "variance": variance, "acceptance_gap": gap}
    return cash + cfg.mu * variance + cfg.lam * gap, comps


def evaluate_allocations(result, batch) -> np.ndarray:
    net = result.net if isinstance(result, PrimalResult) else result
    return forward(net, batch)


def train_primal(batch, params: Utility, level: AcceptanceLevel, cfg: PrimalConfig,
                 eval_batch=None, callback: Optional[Callable] = None) -> PrimalResult:
    """Minibatch SGD on the penalised objective.

    Epoch order is a permutation drawn from ``cfg.seed``, so a run is
    reproducible bit for bit. Metrics are computed on ``eval_batch`` (the
    training batch when omitted).
    """
    t0 = time.perf_counter()
    x = np.asarray(getattr(batch, "data", batch), dtype=float)
    m, n = x.shape
    if params.n != n:
        raise DimensionMismatch(f"{params.n} utilities for a batch of width {n}")
    partition = cfg.partition or GroupPartition.single(n)
    if partition.n != n:
        raise DimensionMismatch("partition does not match the batch width")
    indicator = partition.indicator()
    net = init((n, *cfg.hidden, n), cfg.activation, cfg.head(), cfg.seed, standardize=x)
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 1))
    velocity: list = []
    trace = []

    def loss_fn(y, xv):
        return _loss_graph(y, xv, params, level, cfg.mu, cfg.lam, indicator)[0]

    for epoch in range(cfg.epochs):
        lr, mb = cfg.schedule(epoch)
        mb = min(mb, m)
        order = rng.permutation(m)
        total, count = 0.0, 0
        for start in range(0, m - mb + 1, mb):
            idx = order[start:start + mb]
            try:
                value, grads = backward(net, loss_fn, x[idx])
            except NonFiniteValue as exc:
                raise Diverged(f"primal loss non-finite in epoch {epoch}: {exc}",
                               last_state=net) from None
            net = sgd_step(net, grads, lr, "descent", velocity, cfg.momentum)
            total += value
            count += 1
        trace.append(total / count)
        if not np.isfinite(trace[-1]):
            raise Diverged(f"primal loss non-finite in epoch {epoch}", last_state=net)
        if callback is not None:
            callback(epoch, trace[-1], net)

    ev = x if eval_batch is None else np.asarray(getattr(eval_batch, "data", eval_batch), dtype=float)
    objective, comps = primal_loss(net, ev, params, level, cfg)
    y = forward(net, ev)
    return PrimalResult(
        net=net,
        rho_hat=comps["cash"],
        objective=objective,
        components=comps,
        variance_residual=np.var(group_sums(y, partition), axis=0),
        acceptance_residual=comps["acceptance_gap"],
        loss_trace=trace,
        partition=partition,
        runtime_seconds=time.perf_counter() - t0,
    )
