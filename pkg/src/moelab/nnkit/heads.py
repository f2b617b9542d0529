"""Gaussian and categorical policy-head math.

Both plain-numpy scalar entry points (for rollouts and tests) and
autodiff-graph versions (for losses) live here so the two cannot drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Var, logsumexp

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianHead:
    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_std = np.clip(
            np.asarray(self.log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX
        )

    @property
    def std(self):
        return np.exp(self.log_std)

    def variance_mean(self) -> float:
        """Mean over action dims of the per-dimension variance."""
        return float(np.mean(np.exp(2.0 * self.log_std)))

    def sample(self, rng: np.random.Generator):
        return self.mean + self.std * rng.standard_normal(self.mean.shape)


def gaussian_logprob(head: GaussianHead, action, squashed: bool = False) -> float:
    """Exact diagonal-Gaussian log density of `action`.

    With `squashed=True`, `action` is the tanh image of the Gaussian
    variable; the log-det of the tanh change of variables is included and
    components at exactly +-1 are pulled back with epsilon 1e-6.
    """
    a = np.asarray(action, dtype=np.float64)
    if a.shape != head.mean.shape:
        raise ValueError(f"action shape {a.shape} != head shape {head.mean.shape}")
    if squashed:
        a = np.clip(a, -1.0 + SQUASH_EPS, 1.0 - SQUASH_EPS)
        u = np.arctanh(a)
    else:
        u = a
    z = (u - head.mean) / head.std
    logp = -0.5 * np.sum(z * z) - np.sum(head.log_std) - 0.5 * u.size * LOG_2PI
    if squashed:
        logp -= np.sum(np.log(1.0 - a * a + SQUASH_EPS))
    return float(logp)


def categorical_logprob(logits, cls: int) -> float:
    """Log-softmax value for class `cls`, max-subtraction stabilized."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= cls < logits.size:
        raise IndexError(f"class {cls} out of range for {logits.size} logits")
    m = logits.max()
    return float(logits[cls] - m - np.log(np.sum(np.exp(logits - m))))


def categorical_sample(logits, rng: np.random.Generator) -> int:
    logits = np.asarray(logits, dtype=np.float64)
    p = np.exp(logits - logits.max())
    p /= p.sum()
    return int(rng.choice(logits.size, p=p))


# ---- graph versions (batched) -------------------------------------------


def gaussian_logprob_vars(mean: Var, log_std: Var, u: Var) -> Var:
    """Per-sample log density of pre-squash values `u`; shape (batch,)."""
    log_std = log_std.clip(LOG_STD_MIN, LOG_STD_MAX)
    inv_std = (-log_std).exp()
    z = (u - mean) * inv_std
    d = mean.shape[-1]
    return (
        (z * z).sum(axis=-1) * -0.5
        - log_std.sum(axis=-1)
        - 0.5 * d * LOG_2PI
    )


def squash_correction_vars(a_squashed: Var) -> Var:
    """Sum over dims of log(1 - tanh(u)^2 + eps); subtract from Gaussian logp."""
    return ((1.0 - a_squashed * a_squashed) + SQUASH_EPS).log().sum(axis=-1)


def log_softmax_vars(logits: Var) -> Var:
    return logits - logsumexp(logits, axis=-1, keepdims=True)
