"""Independent oracles shared by the test suite.

These deliberately avoid the library's autodiff path: finite differences
re-evaluate the loss as a black box, and the dense-algebra MLP oracle is
a hand-rolled matrix multiply.
"""

import numpy as np

from moelab.nnkit.autodiff import Var


def eval_loss_at(loss_fn, layout, flat64):
    """Evaluate `loss_fn` on leaves built from a flat float64 vector."""
    leaves, off = {}, 0
    for name, shape in layout:
        n = int(np.prod(shape))
        leaves[name] = Var(flat64[off:off + n].reshape(shape), requires_grad=True)
        off += n
    return float(loss_fn(leaves).data)


def fd_grad(loss_fn, params, h=1e-4):
    """Central finite differences of `loss_fn` at `params`, coordinatewise."""
    base = params.values.astype(np.float64)
    out = np.zeros_like(base)
    for i in range(base.size):
        hi = base.copy()
        lo = base.copy()
        hi[i] += h
        lo[i] -= h
        out[i] = (eval_loss_at(loss_fn, params.layout, hi)
                  - eval_loss_at(loss_fn, params.layout, lo)) / (2.0 * h)
    return out


def max_rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.abs(analytic) + np.abs(numeric) + 1e-8
    return float(np.max(np.abs(analytic - numeric) / denom))


def mlp_oracle(weights, biases, x, activation="relu"):
    """Hand-rolled dense forward pass, independent of the library."""
    h = np.asarray(x, dtype=np.float64)
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ np.asarray(w, dtype=np.float64) + np.asarray(b, dtype=np.float64)
        if i < len(weights) - 1:
            if activation == "relu":
                h = np.maximum(h, 0.0)
            else:
                h = np.tanh(h)
    return h
