"""Dense feedforward networks with reverse-mode gradients and plain SGD."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Var, softplus
from .errors import DimensionMismatch, NonFiniteValue
from .jsonfmt import dumps

ACTIVATIONS = ("relu", "tanh")
HEADS = ("identity", "softplus", "softplus_mean_normalized", "shifted_softplus")


@dataclass(frozen=True)
class Network:
    """Weights are stored as (fan_out, fan_in) so a layer computes ``x @ W.T + b``."""

    layer_sizes: tuple
    weights: tuple
    biases: tuple
    hidden_activation: str = "relu"
    output_head: str = "identity"
    # fixed (non-trainable) input standardisation: (x - shift) / scale
    input_shift: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"invalid layer sizes {sizes}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        if self.output_head not in HEADS:
            raise ValueError(f"unknown output head {self.output_head!r}")
        ws = tuple(np.asarray(w, dtype=float) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=float) for b in self.biases)
        if len(ws) != len(sizes) - 1 or len(bs) != len(ws):
            raise DimensionMismatch("need one weight matrix and bias per layer")
        for k, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
                raise DimensionMismatch(
                    f"layer {k}: expected W {(sizes[k + 1], sizes[k])} and b {(sizes[k + 1],)}, "
                    f"got {w.shape} and {b.shape}")
        shift = np.zeros(sizes[0]) if self.input_shift is None else np.asarray(self.input_shift, float)
        scale = np.ones(sizes[0]) if self.input_scale is None else np.asarray(self.input_scale, float)
        if shift.shape != (sizes[0],) or scale.shape != (sizes[0],) or np.any(scale <= 0):
            raise DimensionMismatch("input standardisation must be length n_in with positive scale")
        object.__setattr__(self, "input_shift", shift)
        object.__setattr__(self, "input_scale", scale)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def with_params(self, params) -> "Network":
        params = list(params)
        return Network(self.layer_sizes, tuple(params[0::2]), tuple(params[1::2]),
                       self.hidden_activation, self.output_head, self.input_shift, self.input_scale)

    # -- serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_head": self.output_head,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "input_shift": self.input_shift.tolist(),
            "input_scale": self.input_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "Network":
        sizes = tuple(d["layer_sizes"])
        ws = [np.asarray(w, dtype=float).reshape(sizes[k + 1], sizes[k])
              for k, w in enumerate(d["weights"])]
        return cls(sizes, tuple(ws), tuple(np.asarray(b, dtype=float) for b in d["biases"]),
                   d["hidden_activation"], d["output_head"],
                   d.get("input_shift"), d.get("input_scale"))

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Network":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GradientSet:
    weights: tuple
    biases: tuple

    def params(self) -> list:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.params())))


def init(layer_sizes: Sequence[int], activation: str = "relu", head: str = "identity",
         seed: int = 0, standardize=None) -> Network:
    """Glorot-uniform weights, zero biases.

    ``standardize`` is an optional M x n_in sample whose column mean and
    standard deviation become the fixed input standardisation.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    ws, bs = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    shift = scale = None
    if standardize is not None:
        data = np.asarray(getattr(standardize, "data", standardize), dtype=float)
        shift = data.mean(axis=0)
        scale = data.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
    return Network(tuple(layer_sizes), tuple(ws), tuple(bs), activation, head, shift, scale)


def zeros_like(net: Network, head: Optional[str] = None) -> Network:
    return Network(net.layer_sizes, tuple(np.zeros_like(w) for w in net.weights),
                   tuple(np.zeros_like(b) for b in net.biases), net.hidden_activation,
                   head or net.output_head, net.input_shift, net.input_scale)


def _graph(net: Network, params, x: Var, reference=None) -> Var:
    h = (x - net.input_shift) * (1.0 / net.input_scale)
    n_layers = len(net.weights)
    for k in range(n_layers):
        w, b = params[2 * k], params[2 * k + 1]
        h = h @ w.T + b
        if k < n_layers - 1:
            h = h.relu() if net.hidden_activation == "relu" else h.tanh()
    head = net.output_head
    if head == "softplus":
        h = h.softplus()
    elif head == "softplus_mean_normalized":
        h = h.softplus()
        h = h / h.mean(axis=0, keepdims=True)
    elif head == "shifted_softplus":
        if reference is None:
            raise ValueError("shifted_softplus head needs a per-sample reference")
        h = h.softplus() + reference
    return h


def _as_batch(net: Network, batch) -> np.ndarray:
    x = np.asarray(getattr(batch, "data", batch), dtype=float)
    if x.ndim != 2 or x.shape[1] != net.n_in:
        raise DimensionMismatch(f"network expects width {net.n_in}, got batch shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue("non-finite network input")
    return x


def _check_reference(net, x, reference):
    if reference is None:
        return None
    ref = np.asarray(reference, dtype=float)
    if ref.shape != (x.shape[0], net.n_out):
        raise DimensionMismatch(f"reference must have shape {(x.shape[0], net.n_out)}")
    return ref


def forward(net: Network, batch, reference=None) -> np.ndarray:
    """Evaluate the network on an M x n_in batch.

    For the ``softplus_mean_normalized`` head the normalisation is over the
    rows of *this* batch. ``reference`` is the per-sample offset used by the
    ``shifted_softplus`` head.
    """
    x = _as_batch(net, batch)
    ref = _check_reference(net, x, reference)
    out = _graph(net, [Var(p) for p in net.params()], Var(x), ref).data
    if not np.all(np.isfinite(out)):
        raise NonFiniteValue("non-finite network output")
    return out


def backward(net: Network, loss_fn: Callable, batch, reference=None):
    """Value and parameter gradient of ``loss_fn(outputs, inputs)``.

    ``loss_fn`` receives the network output and the input as ``Var`` nodes and
    must return a scalar ``Var`` built from the engine primitives.
    """
    loss, grads = backward_multi([net], lambda outs, x: loss_fn(outs[0], x), batch,
                                 references=[reference])
    return loss, grads[0]


def backward_multi(nets, loss_fn: Callable, batch, references=None):
    """Like :func:`backward` for a loss that couples several networks."""
    x = _as_batch(nets[0], batch)
    references = references or [None] * len(nets)
    xv = Var(x)
    leaves, outs = [], []
    for net, ref in zip(nets, references):
        if net.n_in != x.shape[1]:
            raise DimensionMismatch("all networks must share the input width")
        ps = [Var(p) for p in net.params()]
        leaves.append(ps)
        outs.append(_graph(net, ps, xv, _check_reference(net, x, ref)))
    loss = loss_fn(outs, xv)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteValue("non-finite loss")
    loss.backward()
    grads = []
    for ps in leaves:
        gs = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in ps]
        grads.append(GradientSet(tuple(gs[0::2]), tuple(gs[1::2])))
    return value, grads


def sgd_step(net: Network, grads: GradientSet, lr: float, direction: str = "descent",
             velocity=None, momentum: float = 0.0) -> Network:
    """One SGD update. ``velocity`` (a list, updated in place) enables momentum."""
    if direction not in ("descent", "ascent"):
        raise ValueError(f"direction must be 'descent' or 'ascent', got {direction!r}")
    params, gs = net.params(), grads.params()
    if len(params) != len(gs) or any(p.shape != g.shape for p, g in zip(params, gs)):
        raise DimensionMismatch("gradient shapes do not match the network")
    sign = -1.0 if direction == "descent" else 1.0
    if velocity is not None and momentum > 0:
        if not velocity:
            velocity.extend(np.zeros_like(p) for p in params)
        for k, g in enumerate(gs):
            velocity[k] = momentum * velocity[k] + g
        gs = velocity
    return net.with_params(p + sign * lr * g for p, g in zip(params, gs))


def param_count(net: Network) -> int:
    return sum(p.size for p in net.params())


__all__ = ["Network", "GradientSet", "init", "forward", "backward", "backward_multi",
           "sgd_step", "zeros_like", "softplus", "param_count"]
