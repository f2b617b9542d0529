"""Learnable heads and the hard-selection action composer.

An ExpertBundle owns the imitation (BC) actor, the RL actor, twin
critics with Polyak targets, the discrete gripper head, the 2-way
gating network, and the entropy temperature. The gate's final layer is
zero-initialized so an untrained gate emits exactly (0.5, 0.5)
everywhere; ties select the RL expert.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nnkit import (
    GaussianHead,
    MlpSpec,
    ParamVector,
    Var,
    forward,
    init_mlp,
    load_checkpoint,
    mlp_forward_vars,
    polyak_update,
    save_checkpoint,
)
from .nnkit.heads import LOG_STD_MAX, LOG_STD_MIN, gaussian_logprob
from .envsim import GRIP_OPEN, ArmAction, GripperAction

SELECT_BC, SELECT_RL = "bc", "rl"


@dataclass
class GateDecision:
    w_bc: float
    w_rl: float
    sigma_bc: float
    sigma_rl: float
    selected: str


@dataclass
class ExpertBundle:
    state_dim: int
    arm_dim: int
    actor_spec: MlpSpec          # shared by both continuous actors
    critic_spec: MlpSpec
    dbc_spec: MlpSpec
    gate_spec: MlpSpec
    bc_actor: ParamVector
    rl_actor: ParamVector
    critic1: ParamVector
    critic2: ParamVector
    target1: ParamVector
    target2: ParamVector
    dbc_head: ParamVector
    gate: ParamVector
    alpha_log: ParamVector
    gripper_q: Optional[ParamVector] = None
    gripper_q_target: Optional[ParamVector] = None

    @property
    def alpha(self) -> float:
        return float(np.exp(self.alpha_log.values[0]))

    def polyak(self, tau: float):
        polyak_update(self.target1, self.critic1, tau)
        polyak_update(self.target2, self.critic2, tau)
        if self.gripper_q is not None:
            polyak_update(self.gripper_q_target, self.gripper_q, tau)


def make_bundle(state_dim: int, arm_dim: int, hidden=(256, 256),
                gate_hidden=(64, 64), seed: int = 0,
                with_gripper_q: bool = False) -> ExpertBundle:
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0xB00])
    actor_spec = MlpSpec(state_dim, hidden, 2 * arm_dim)
    critic_spec = MlpSpec(state_dim + arm_dim, hidden, 1)
    dbc_spec = MlpSpec(state_dim, hidden, 3)
    gate_spec = MlpSpec(state_dim, gate_hidden, 2)
    critic1 = init_mlp(critic_spec, rng)
    critic2 = init_mlp(critic_spec, rng)
    gq = init_mlp(dbc_spec, rng) if with_gripper_q else None
    return ExpertBundle(
        state_dim=state_dim,
        arm_dim=arm_dim,
        actor_spec=actor_spec,
        critic_spec=critic_spec,
        dbc_spec=dbc_spec,
        gate_spec=gate_spec,
        bc_actor=init_mlp(actor_spec, rng),
        rl_actor=init_mlp(actor_spec, rng),
        critic1=critic1,
        critic2=critic2,
        target1=critic1.copy(),
        target2=critic2.copy(),
        dbc_head=init_mlp(dbc_spec, rng),
        gate=init_mlp(gate_spec, rng, zero_final=True),
        alpha_log=ParamVector([("alpha_log", (1,))], np.zeros(1, np.float32)),
        gripper_q=gq,
        gripper_q_target=gq.copy() if gq is not None else None,
    )


# ---- head evaluation (numpy path, used at rollout time) --------------------


def _actor_heads(params: ParamVector, spec: MlpSpec, state: np.ndarray):
    out = forward(params, spec, state)
    d = out.shape[-1] // 2
    mean_raw = out[..., :d]
    log_std = np.clip(out[..., d:], LOG_STD_MIN, LOG_STD_MAX)
    return mean_raw, log_std


def bc_act(bundle: ExpertBundle, state, stochastic: bool = False, rng=None):
    """(action, sigma): tanh-bounded mean, optionally with Gaussian jitter."""
    mean_raw, log_std = _actor_heads(bundle.bc_actor, bundle.actor_spec, state)
    mean = np.tanh(mean_raw)
    sigma = float(np.mean(np.exp(2.0 * log_std)))
    if stochastic:
        action = np.clip(mean + np.exp(log_std) * rng.standard_normal(mean.shape),
                         -1.0, 1.0)
    else:
        action = mean
    return action, sigma


def rl_act(bundle: ExpertBundle, state, stochastic: bool = False, rng=None):
    """(action, logprob, sigma) for the squashed-Gaussian RL actor.

    sigma is the pre-squash variance, averaged over action dims.
    """
    mean_raw, log_std = _actor_heads(bundle.rl_actor, bundle.actor_spec, state)
    head = GaussianHead(mean_raw, log_std)
    u = head.sample(rng) if stochastic else mean_raw
    action = np.tanh(u)
    logprob = gaussian_logprob(head, action, squashed=True)
    sigma = float(np.mean(np.exp(2.0 * log_std)))
    return action, logprob, sigma


def q_values(bundle: ExpertBundle, state, action, use_targets: bool = False):
    sa = np.concatenate([np.asarray(state, float), np.asarray(action, float)], axis=-1)
    p1, p2 = ((bundle.target1, bundle.target2) if use_targets
              else (bundle.critic1, bundle.critic2))
    q1 = forward(p1, bundle.critic_spec, sa)
    q2 = forward(p2, bundle.critic_spec, sa)
    return q1[..., 0], q2[..., 0]


def q_min(bundle: ExpertBundle, state, action, use_targets: bool = False):
    q1, q2 = q_values(bundle, state, action, use_targets)
    return np.minimum(q1, q2)


def dbc_logits(bundle: ExpertBundle, state):
    return forward(bundle.dbc_head, bundle.dbc_spec, state)


def dbc_act(bundle: ExpertBundle, state) -> GripperAction:
    # ties break toward the lowest class index: open < hold < closed
    return GripperAction(int(np.argmax(dbc_logits(bundle, state))))


def gate_weights(bundle: ExpertBundle, state):
    logits = forward(bundle.gate, bundle.gate_spec, state)
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def gate(bundle: ExpertBundle, state) -> GateDecision:
    """Weights, per-expert action variances, and the hard selection."""
    w = gate_weights(bundle, state)
    _, log_std_bc = _actor_heads(bundle.bc_actor, bundle.actor_spec, state)
    _, log_std_rl = _actor_heads(bundle.rl_actor, bundle.actor_spec, state)
    sigma_bc = float(np.mean(np.exp(2.0 * log_std_bc)))
    sigma_rl = float(np.mean(np.exp(2.0 * log_std_rl)))
    selected = SELECT_BC if w[0] > w[1] else SELECT_RL
    return GateDecision(float(w[0]), float(w[1]), sigma_bc, sigma_rl, selected)


def compose_action(bundle: ExpertBundle, state, stochastic: bool = False,
                   rng=None, force: Optional[str] = None):
    """Arm action from the gate-selected expert, gripper from the DBC head.

    `force` pins the continuous expert ('bc' or 'rl') for ablation arms;
    the gate decision is still computed and recorded.
    """
    decision = gate(bundle, state)
    if force is not None:
        decision.selected = force
    if decision.selected == SELECT_BC:
        action, _ = bc_act(bundle, state, stochastic, rng)
    else:
        action, _, _ = rl_act(bundle, state, stochastic, rng)
    grip = dbc_act(bundle, state)
    return ArmAction(action), grip, decision


# ---- graph-side helpers (batched, used by the losses) ----------------------


def actor_heads_vars(leaves: dict, spec: MlpSpec, states: Var):
    out = mlp_forward_vars(leaves, spec, states)
    d = out.shape[-1] // 2
    mean_raw = out[:, :d]
    log_std = out[:, d:].clip(LOG_STD_MIN, LOG_STD_MAX)
    return mean_raw, log_std


# ---- persistence ------------------------------------------------------------


def save_bundle(directory, bundle: ExpertBundle, step: int = 0, meta=None):
    entries = {
        "bc_actor": bundle.bc_actor,
        "rl_actor": bundle.rl_actor,
        "critic1": bundle.critic1,
        "critic2": bundle.critic2,
        "target1": bundle.target1,
        "target2": bundle.target2,
        "dbc_head": bundle.dbc_head,
        "gate": bundle.gate,
        "alpha_log": bundle.alpha_log,
    }
    if bundle.gripper_q is not None:
        entries["gripper_q"] = bundle.gripper_q
        entries["gripper_q_target"] = bundle.gripper_q_target
    meta = dict(meta or {})
    meta.update({
        "state_dim": bundle.state_dim,
        "arm_dim": bundle.arm_dim,
        "hidden": list(bundle.actor_spec.hidden),
        "gate_hidden": list(bundle.gate_spec.hidden),
    })
    save_checkpoint(directory, entries, step=step, meta=meta)


def load_bundle(directory):
    entries, step, meta = load_checkpoint(directory)
    bundle = make_bundle(meta["state_dim"], meta["arm_dim"],
                         hidden=tuple(meta["hidden"]),
                         gate_hidden=tuple(meta["gate_hidden"]),
                         with_gripper_q="gripper_q" in entries)
    for name in ("bc_actor", "rl_actor", "critic1", "critic2", "target1",
                 "target2", "dbc_head", "gate", "alpha_log"):
        getattr(bundle, name).values[...] = entries[name].values
    if "gripper_q" in entries:
        bundle.gripper_q.values[...] = entries["gripper_q"].values
        bundle.gripper_q_target.values[...] = entries["gripper_q_target"].values
    return bundle, step, meta
