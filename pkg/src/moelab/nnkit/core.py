"""Parameter containers, MLP forward passes, and gradient evaluation.

Parameters live in a single flat float32 array with an explicit
(name, shape) layout so checkpoints are trivially bit-exact. All compute
is promoted to float64 inside the autodiff graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Var


class ConfigError(ValueError):
    """Shapes, dims, or layouts that do not line up."""


class NumericalError(ArithmeticError):
    """Non-finite values where finiteness is part of the contract."""


@dataclass
class MlpSpec:
    input_dim: int
    hidden: tuple
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError(f"all dims must be >= 1: {self}")
        if not self.hidden:
            raise ConfigError("hidden layer list must be non-empty")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    def layer_dims(self):
        dims = (self.input_dim,) + self.hidden + (self.output_dim,)
        return list(zip(dims[:-1], dims[1:]))


class ParamVector:
    """Named tensors backed by one flat float32 array.

    `values` is the storage; `layout` is an ordered list of (name, shape).
    Tensor accessors return reshaped views into the flat array, so in-place
    updates through the flat array are visible everywhere.
    """

    def __init__(self, layout, values=None):
        self.layout = [(name, tuple(shape)) for name, shape in layout]
        total = sum(int(np.prod(s)) for _, s in self.layout)
        if values is None:
            values = np.zeros(total, dtype=np.float32)
        values = np.asarray(values, dtype=np.float32)
        if values.size != total:
            raise ConfigError(
                f"flat length {values.size} != layout total {total}"
            )
        self.values = values
        self._offsets = {}
        off = 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            if name in self._offsets:
                raise ConfigError(f"duplicate tensor name {name!r}")
            self._offsets[name] = (off, off + n, shape)
            off += n

    def __len__(self):
        return self.values.size

    def names(self):
        return [name for name, _ in self.layout]

    def tensor(self, name) -> np.ndarray:
        lo, hi, shape = self._offsets[name]
        return self.values[lo:hi].reshape(shape)

    def copy(self) -> "ParamVector":
        return ParamVector(self.layout, self.values.copy())

    def zeros_like(self) -> "ParamVector":
        return ParamVector(self.layout)

    def check_finite(self):
        if not np.all(np.isfinite(self.values)):
            bad = [n for n in self.names() if not np.all(np.isfinite(self.tensor(n)))]
            raise NumericalError(f"non-finite parameters in {bad}")

    def as_vars(self) -> dict:
        """float64 autodiff leaves, one per named tensor."""
        return {
            name: Var(self.tensor(name).astype(np.float64), requires_grad=True)
            for name, _ in self.layout
        }


def mlp_layout(spec: MlpSpec, prefix: str = ""):
    layout = []
    for i, (n_in, n_out) in enumerate(spec.layer_dims()):
        layout.append((f"{prefix}w{i}", (n_in, n_out)))
        layout.append((f"{prefix}b{i}", (n_out,)))
    return layout


def init_mlp(spec: MlpSpec, rng: np.random.Generator, prefix: str = "",
             zero_final: bool = False) -> ParamVector:
    """He-style fan-in init; optionally zero the final layer."""
    pv = ParamVector(mlp_layout(spec, prefix))
    dims = spec.layer_dims()
    for i, (n_in, n_out) in enumerate(dims):
        w = pv.tensor(f"{prefix}w{i}")
        if zero_final and i == len(dims) - 1:
            continue
        scale = math.sqrt(2.0 / n_in)
        w[...] = rng.normal(0.0, scale, size=(n_in, n_out)).astype(np.float32)
    return pv


def mlp_forward_vars(params: dict, spec: MlpSpec, x: Var, prefix: str = "") -> Var:
    """Forward pass through the graph; `x` has shape (batch, input_dim)."""
    h = x
    n_layers = len(spec.layer_dims())
    act = Var.relu if spec.activation == "relu" else Var.tanh
    for i in range(n_layers):
        h = h @ params[f"{prefix}w{i}"] + params[f"{prefix}b{i}"]
        if i < n_layers - 1:
            h = act(h)
    return h


def forward(params: ParamVector, spec: MlpSpec, x) -> np.ndarray:
    """Plain inference. Accepts a single input vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != spec.input_dim:
        raise ConfigError(f"input dim {x.shape[1]} != spec.input_dim {spec.input_dim}")
    expected = [s for _, s in mlp_layout(spec)]
    got = [s for _, s in params.layout]
    if got != expected:
        raise ConfigError("params layout does not match spec")
    h = x
    n_layers = len(spec.layer_dims())
    for i in range(n_layers):
        w = params.tensor(f"w{i}").astype(np.float64)
        b = params.tensor(f"b{i}").astype(np.float64)
        h = h @ w + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0) if spec.activation == "relu" else np.tanh(h)
    return h[0] if single else h


def grad(loss_fn, params: ParamVector) -> ParamVector:
    """Gradient of `loss_fn` at `params`.

    `loss_fn` receives a dict of autodiff leaves (name -> Var) and must
    return a scalar Var. The result shares the layout of `params`.
    """
    leaves = params.as_vars()
    loss = loss_fn(leaves)
    if not np.isfinite(loss.data):
        raise NumericalError(f"loss is non-finite: {loss.data}")
    loss.backward()
    out = params.zeros_like()
    for name, _ in params.layout:
        g = leaves[name].grad
        if g is not None:
            out.tensor(name)[...] = g.astype(np.float32)
    return out


def loss_and_grad(loss_fn, params: ParamVector):
    leaves = params.as_vars()
    loss = loss_fn(leaves)
    if not np.isfinite(loss.data):
        raise NumericalError(f"loss is non-finite: {loss.data}")
    loss.backward()
    out = params.zeros_like()
    for name, _ in params.layout:
        g = leaves[name].grad
        if g is not None:
            out.tensor(name)[...] = g.astype(np.float32)
    return float(loss.data), out


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    rejected: int = 0

    @classmethod
    def for_params(cls, params: ParamVector) -> "AdamState":
        n = len(params)
        return cls(m=np.zeros(n, dtype=np.float32), v=np.zeros(n, dtype=np.float32))


def optimizer_step(state: AdamState, params: ParamVector, g: ParamVector,
                   lr: float, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8):
    """Bias-corrected adaptive-moment update, in place on `params.values`.

    Non-finite gradients are rejected: params and moments untouched, the
    rejection counter incremented.
    """
    gv = g.values
    if not np.all(np.isfinite(gv)):
        state.rejected += 1
        return params, state
    state.step += 1
    t = state.step
    state.m += (1.0 - beta1) * (gv - state.m)
    state.v += (1.0 - beta2) * (gv * gv - state.v)
    mhat = state.m / (1.0 - beta1 ** t)
    vhat = state.v / (1.0 - beta2 ** t)
    params.values -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(np.float32)
    return params, state


def polyak_update(target: ParamVector, online: ParamVector, tau: float):
    """target <- (1 - tau) * target + tau * online, exactly, in place."""
    target.values[...] = ((1.0 - tau) * target.values.astype(np.float64)
                          + tau * online.values.astype(np.float64)).astype(np.float32)
