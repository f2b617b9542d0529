"""Two-stage training: offline pre-training and online fine-tuning.

Stage I fits the BC actor (MSE plus a small variance-head likelihood),
the RL actor (advantage-weighted likelihood), the twin critics (clipped
double-Q Bellman regression), and the gripper head (cross-entropy) on
the demonstration buffer; the gate stays untouched. Stage II rolls out
the composed policy with a scripted (or live) intervention source,
routes episodes through the three buffers, and refines everything
including the gate's four-term objective.

All losses run through the autodiff kit so every gradient can be
checked against finite differences.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import envsim, experts, oracle
from .buffers import (
    Batch,
    BufferSet,
    SRC_OFFLINE_DEMO,
    SRC_ONLINE_INTERVENTION,
    SRC_ONLINE_POLICY,
    EXPERT_BC,
    EXPERT_NONE,
    EXPERT_RL,
    Transition,
    ingest_episode,
    ratios,
    sample_bc,
    sample_rl,
)
from .envsim import GripperAction, get_task, observe
from .experts import (
    ExpertBundle,
    SELECT_BC,
    SELECT_RL,
    actor_heads_vars,
    make_bundle,
    save_bundle,
)
from .nnkit import (
    AdamState,
    ConfigError,
    Var,
    concat,
    loss_and_grad,
    minimum,
    mlp_forward_vars,
    optimizer_step,
)
from .nnkit.heads import (
    LOG_2PI,
    SQUASH_EPS,
    gaussian_logprob_vars,
    log_softmax_vars,
    squash_correction_vars,
)

log = logging.getLogger(__name__)

BC_STD_WEIGHT = 0.1        # weight of the variance-head likelihood in the BC loss
AWAC_K = 4                 # policy samples for the advantage baseline
AWAC_CLIP = 20.0           # advantage-weight cap


@dataclass
class RunConfig:
    """Every knob of a reproducible run."""

    task_id: str = "drawer_place"
    seed: int = 0
    # stage I
    n_offline: int = 5000
    demo_episodes: int = 20
    demo_noise: float = 0.02
    # stage II
    online_episodes: int = 100
    utd: int = 2
    # optimization
    batch_size: int = 256
    lr_bc: float = 3e-4
    lr_rl: float = 3e-4
    lr_critic: float = 3e-4
    lr_dbc: float = 3e-4
    lr_gate: float = 3e-4
    lr_alpha: float = 3e-4
    gamma: float = 0.97
    awac_lambda: float = 1.0
    bc_reg: float = 0.1
    gate_spec_coef: float = 0.1     # specialization
    gate_load_coef: float = 0.05    # load balancing
    gate_ent_coef: float = 0.01     # entropy regularization
    tau: float = 0.005
    target_entropy: float | None = None   # defaults to -arm_dim
    alpha_init: float = 1.0               # starting entropy temperature
    # networks
    hidden: tuple = (256, 256)
    gate_hidden: tuple = (64, 64)
    # intervention source
    trigger: str = "stuck"
    stuck_steps: int = 15
    stuck_eps: float = 0.005
    region_dist: float = 0.4
    max_interventions: int = 3
    handover: int = 10
    # ablations
    no_bc_reg: bool = False
    gripper_dqn: bool = False
    bc_only: bool = False
    rl_only: bool = False
    dqn_epsilon: float = 0.1
    # bookkeeping
    checkpoint_every: int = 0       # episodes; 0 disables
    log_every_updates: int = 200

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.gate_hidden = tuple(self.gate_hidden)
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must be in (0, 1)")
        if self.awac_lambda <= 0:
            raise ConfigError("awac_lambda must be positive")
        if self.utd < 1:
            raise ConfigError("utd must be >= 1")
        for name in ("bc_reg", "gate_spec_coef", "gate_load_coef", "gate_ent_coef"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.bc_only and self.rl_only:
            raise ConfigError("bc_only and rl_only are mutually exclusive")
        if self.alpha_init <= 0:
            raise ConfigError("alpha_init must be positive")

    @property
    def forced_expert(self):
        if self.bc_only:
            return SELECT_BC
        if self.rl_only:
            return SELECT_RL
        return None

    def effective_bc_reg(self) -> float:
        return 0.0 if self.no_bc_reg else self.bc_reg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["gate_hidden"] = list(self.gate_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**d)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Dot-path-free flat overrides, values coerced to the field type."""
        d = self.to_dict()
        for key, value in overrides.items():
            if key not in d:
                raise ConfigError(f"unknown config key {key!r}")
            d[key] = value
        return RunConfig.from_dict(d)

    def intervention_rule(self) -> oracle.InterventionRule:
        return oracle.InterventionRule(
            trigger=self.trigger,
            stuck_steps=self.stuck_steps,
            stuck_eps=self.stuck_eps,
            region_dist=self.region_dist,
            max_per_episode=self.max_interventions,
            handover=self.handover,
        )


# ---- loss graphs -----------------------------------------------------------


def bc_loss_fn(spec, batch: Batch, std_weight: float = BC_STD_WEIGHT):
    """Eq-style imitation loss: squared error on the tanh mean, plus a
    down-weighted Gaussian likelihood fitting the variance head to the
    residuals (mean detached, so the MSE alone trains the mean)."""
    states = Var(batch.state)
    actions = Var(batch.arm_action)

    def fn(leaves):
        mean_raw, log_std = actor_heads_vars(leaves, spec, states)
        mean = mean_raw.tanh()
        diff = mean - actions
        mse = (diff * diff).sum(axis=-1).mean()
        resid = actions - mean.detach()
        z = resid * (-log_std).exp()
        nll = (log_std + (z * z) * 0.5 + 0.5 * LOG_2PI).sum(axis=-1).mean()
        return mse + std_weight * nll

    return fn


def loss_bc(params, spec, batch: Batch) -> float:
    return float(bc_loss_fn(spec, batch)(params.as_vars()).data)


def bc_mse_term(params, spec, batch: Batch) -> float:
    mean = np.tanh(experts._actor_heads(params, spec, batch.state)[0])
    return float(np.mean(np.sum((mean - batch.arm_action) ** 2, axis=-1)))


def dbc_loss_fn(spec, batch: Batch):
    states = Var(batch.state)
    idx = (np.arange(len(batch)), batch.gripper_action)

    def fn(leaves):
        logits = mlp_forward_vars(leaves, spec, states)
        logp = log_softmax_vars(logits)
        return -(logp[idx].mean())

    return fn


def loss_dbc(params, spec, batch: Batch) -> float:
    return float(dbc_loss_fn(spec, batch)(params.as_vars()).data)


def critic_targets(bundle: ExpertBundle, batch: Batch, gamma: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Clipped double-Q bootstrap target, one fresh actor sample per s'."""
    mean_raw, log_std = experts._actor_heads(bundle.rl_actor, bundle.actor_spec,
                                             batch.next_state)
    u = mean_raw + np.exp(log_std) * rng.standard_normal(mean_raw.shape)
    a_next = np.tanh(u)
    q1, q2 = experts.q_values(bundle, batch.next_state, a_next, use_targets=True)
    target_q = np.minimum(q1, q2)
    y = batch.reward + gamma * (1.0 - batch.done.astype(np.float64)) * target_q
    if not np.all(np.isfinite(y)):
        bad = int(np.argmax(~np.isfinite(y)))
        raise ArithmeticError(f"non-finite critic target at batch row {bad}")
    return y


def critic_loss_fn(spec, batch: Batch, y: np.ndarray):
    sa = Var(np.concatenate([batch.state, batch.arm_action], axis=-1))
    yv = Var(y)

    def fn(leaves):
        q = mlp_forward_vars(leaves, spec, sa)[:, 0]
        d = q - yv
        return (d * d).mean()

    return fn


def loss_critic(bundle: ExpertBundle, batch: Batch, gamma: float,
                rng: np.random.Generator) -> float:
    """Mean Bellman error over both critics (the offline and online critic
    objectives share this form; only the sampled batch differs)."""
    y = critic_targets(bundle, batch, gamma, rng)
    l1 = critic_loss_fn(bundle.critic_spec, batch, y)(bundle.critic1.as_vars())
    l2 = critic_loss_fn(bundle.critic_spec, batch, y)(bundle.critic2.as_vars())
    return 0.5 * float(l1.data + l2.data)


def awac_weights(bundle: ExpertBundle, batch: Batch, lam: float,
                 rng: np.random.Generator, k: int = AWAC_K,
                 clip: float = AWAC_CLIP) -> np.ndarray:
    """exp(A/lambda) with a K-sample policy-value baseline, clipped to [0, clip]."""
    q_data = experts.q_min(bundle, batch.state, batch.arm_action)
    mean_raw, log_std = experts._actor_heads(bundle.rl_actor, bundle.actor_spec,
                                             batch.state)
    baseline = np.zeros(len(batch))
    for _ in range(k):
        u = mean_raw + np.exp(log_std) * rng.standard_normal(mean_raw.shape)
        baseline += experts.q_min(bundle, batch.state, np.tanh(u))
    advantage = q_data - baseline / k
    return np.clip(np.exp(advantage / lam), 0.0, clip)


def awac_loss_fn(spec, batch: Batch, weights: np.ndarray):
    states = Var(batch.state)
    a = np.clip(batch.arm_action, -1.0 + SQUASH_EPS, 1.0 - SQUASH_EPS)
    u_data = Var(np.arctanh(a))
    corr = float(np.mean(weights * np.sum(np.log(1.0 - a * a + SQUASH_EPS), axis=-1)))
    w = Var(weights)

    def fn(leaves):
        mean_raw, log_std = actor_heads_vars(leaves, spec, states)
        logp_u = gaussian_logprob_vars(mean_raw, log_std, u_data)
        # the tanh correction is action-only, hence a constant offset
        return -((w * logp_u).mean()) + corr

    return fn


def loss_awac_actor(bundle: ExpertBundle, batch: Batch, lam: float,
                    rng: np.random.Generator) -> float:
    w = awac_weights(bundle, batch, lam, rng)
    return float(awac_loss_fn(bundle.actor_spec, batch, w)(bundle.rl_actor.as_vars()).data)


def sac_actor_loss_fn(bundle: ExpertBundle, batch: Batch, bc_reg: float,
                      alpha: float, rng: np.random.Generator):
    """Reparameterized actor objective: -Q + alpha*logp + bc_reg*||modes||^2.

    Critic parameters enter as constants; gradients flow through the
    sampled action only.
    """
    states = Var(batch.state)
    eps = rng.standard_normal((len(batch), bundle.arm_dim))
    bc_mode = np.tanh(experts._actor_heads(bundle.bc_actor, bundle.actor_spec,
                                           batch.state)[0])
    c1 = {k: Var(v.data) for k, v in bundle.critic1.as_vars().items()}
    c2 = {k: Var(v.data) for k, v in bundle.critic2.as_vars().items()}

    def fn(leaves):
        mean_raw, log_std = actor_heads_vars(leaves, bundle.actor_spec, states)
        u = mean_raw + log_std.exp() * Var(eps)
        a = u.tanh()
        logp = gaussian_logprob_vars(mean_raw, log_std, u) - squash_correction_vars(a)
        sa = concat([states, a], axis=-1)
        q1 = mlp_forward_vars(c1, bundle.critic_spec, sa)[:, 0]
        q2 = mlp_forward_vars(c2, bundle.critic_spec, sa)[:, 0]
        qmin = minimum(q1, q2)
        loss = (logp * alpha - qmin).mean()
        if bc_reg > 0:
            dm = mean_raw.tanh() - Var(bc_mode)
            loss = loss + bc_reg * (dm * dm).sum(axis=-1).mean()
        return loss

    return fn


def loss_sac_actor(bundle: ExpertBundle, batch: Batch, bc_reg: float,
                   rng: np.random.Generator) -> float:
    fn = sac_actor_loss_fn(bundle, batch, bc_reg, bundle.alpha, rng)
    return float(fn(bundle.rl_actor.as_vars()).data)


def expert_sigmas(bundle: ExpertBundle, states: np.ndarray):
    """Per-state action variances (mean over dims) for both experts."""
    _, ls_bc = experts._actor_heads(bundle.bc_actor, bundle.actor_spec, states)
    _, ls_rl = experts._actor_heads(bundle.rl_actor, bundle.actor_spec, states)
    return (np.mean(np.exp(2.0 * ls_bc), axis=-1),
            np.mean(np.exp(2.0 * ls_rl), axis=-1))


def gate_loss_fn(bundle: ExpertBundle, batch: Batch, spec_coef: float,
                 load_coef: float, ent_coef: float):
    """Four-term gating objective over a batch of states.

    Variances enter as constants (no gradient into the actors).
    """
    if len(batch) < 2:
        raise ValueError("gate loss needs a batch of at least 2")
    states = Var(batch.state)
    sig_bc, sig_rl = expert_sigmas(bundle, batch.state)
    sig_bc, sig_rl = Var(sig_bc), Var(sig_rl)

    def fn(leaves):
        logits = mlp_forward_vars(leaves, bundle.gate_spec, states)
        log_w = log_softmax_vars(logits)
        w = log_w.exp()
        w_bc, w_rl = w[:, 0], w[:, 1]
        variance = (w_bc * sig_bc + w_rl * sig_rl).mean()
        specialization = spec_coef * (0.5 - (w_bc - 0.5).abs()).mean()
        load = load_coef * ((w_bc.mean() - 0.5) ** 2 + (w_rl.mean() - 0.5) ** 2)
        neg_entropy = ent_coef * (w * log_w).sum(axis=-1).mean()
        return variance + specialization + load + neg_entropy

    return fn


def gate_loss_components(bundle: ExpertBundle, batch: Batch, spec_coef: float,
                         load_coef: float, ent_coef: float) -> dict:
    """The four logged terms plus their sum, evaluated without gradients."""
    if len(batch) < 2:
        raise ValueError("gate loss needs a batch of at least 2")
    w = experts.gate_weights(bundle, batch.state)
    sig_bc, sig_rl = expert_sigmas(bundle, batch.state)
    w_bc, w_rl = w[:, 0], w[:, 1]
    variance = float(np.mean(w_bc * sig_bc + w_rl * sig_rl))
    specialization = float(spec_coef * np.mean(0.5 - np.abs(w_bc - 0.5)))
    load = float(load_coef * ((w_bc.mean() - 0.5) ** 2 + (w_rl.mean() - 0.5) ** 2))
    logw = np.log(np.clip(w, 1e-12, None))
    neg_entropy = float(ent_coef * np.mean(np.sum(w * logw, axis=-1)))
    total = variance + specialization + load + neg_entropy
    return {"variance": variance, "specialization": specialization,
            "load": load, "neg_entropy": neg_entropy, "total": total}


def loss_gate(bundle: ExpertBundle, batch: Batch, spec_coef: float,
              load_coef: float, ent_coef: float) -> float:
    fn = gate_loss_fn(bundle, batch, spec_coef, load_coef, ent_coef)
    return float(fn(bundle.gate.as_vars()).data)


def gripper_q_loss_fn(bundle: ExpertBundle, batch: Batch, gamma: float):
    """Bootstrapped 3-action Q regression for the DQN gripper ablation."""
    q_next = experts.forward(bundle.gripper_q_target, bundle.dbc_spec,
                             batch.next_state)
    y = batch.reward + gamma * (1 - batch.done.astype(np.float64)) * q_next.max(axis=-1)
    states = Var(batch.state)
    idx = (np.arange(len(batch)), batch.gripper_action)
    yv = Var(y)

    def fn(leaves):
        q = mlp_forward_vars(leaves, bundle.dbc_spec, states)[idx]
        d = q - yv
        return (d * d).mean()

    return fn


# ---- metrics ---------------------------------------------------------------


@dataclass
class EpisodeRecord:
    episode: int
    success: bool
    length: int
    interventions: int
    intervened_steps: int
    rl_selection_ratio: float
    demo_ratio: float
    auto_success_ratio: float
    total_env_steps: int


@dataclass
class TrainMetrics:
    episodes: list = field(default_factory=list)     # EpisodeRecord
    update_logs: list = field(default_factory=list)  # dicts of loss means
    wall_clock: float = 0.0

    def success_rate(self, last: int = 20) -> float:
        if not self.episodes:
            return 0.0
        window = self.episodes[-last:]
        return sum(e.success for e in window) / len(window)


@dataclass
class EvalResult:
    success_rate: float
    mean_length: float
    rl_ratio: float
    switch_disp_mean: float
    switch_disp_std: float
    nonswitch_disp_mean: float
    nonswitch_disp_std: float
    n_switches: int

    def as_dict(self):
        return asdict(self)


class RunDir:
    """Run directory layout: config copy, metrics stream, checkpoints,
    trajectory dumps. Metrics lines carry no wall-clock so identical runs
    produce bit-identical streams."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / "checkpoints").mkdir(exist_ok=True)
        self._metrics = open(self.path / "metrics.jsonl", "a")
        self._traj = open(self.path / "trajectories.jsonl", "a")

    def write_config(self, config: RunConfig):
        (self.path / "config.json").write_text(json.dumps(config.to_dict(), indent=2))

    def metrics_line(self, kind: str, record: dict):
        self._metrics.write(json.dumps({"kind": kind, **record}, sort_keys=True) + "\n")
        self._metrics.flush()

    def trajectory_line(self, record: dict):
        self._traj.write(json.dumps(record, sort_keys=True) + "\n")

    def checkpoint(self, bundle: ExpertBundle, episode: int, meta=None):
        save_bundle(self.path / "checkpoints" / f"ep{episode:05d}", bundle,
                    step=episode, meta=meta)

    def close(self):
        self._metrics.close()
        self._traj.close()


# ---- trainer ---------------------------------------------------------------


class Trainer:
    """Owns the bundle, buffers, optimizer states, and the RNG discipline.

    Strictly single-threaded and deterministic given the RunConfig.
    """

    def __init__(self, config: RunConfig, bundle: ExpertBundle | None = None,
                 buffers: BufferSet | None = None):
        self.config = config
        self.task = get_task(config.task_id)
        self.state_dim = envsim.obs_dim(self.task)
        self.arm_dim = 2
        self.bundle = bundle or make_bundle(
            self.state_dim, self.arm_dim, hidden=config.hidden,
            gate_hidden=config.gate_hidden, seed=config.seed,
            with_gripper_q=config.gripper_dqn,
        )
        if config.gripper_dqn and self.bundle.gripper_q is None:
            rng = np.random.default_rng([config.seed & 0xFFFFFFFF, 0xD09])
            self.bundle.gripper_q = experts.init_mlp(self.bundle.dbc_spec, rng)
            self.bundle.gripper_q_target = self.bundle.gripper_q.copy()
        if bundle is None:
            self.bundle.alpha_log.values[0] = np.log(config.alpha_init)
        self.buffers = buffers or BufferSet(self.state_dim, self.arm_dim)
        self.rng = np.random.default_rng([config.seed & 0xFFFFFFFF, 0x5EED])
        self.target_entropy = (config.target_entropy
                               if config.target_entropy is not None
                               else -float(self.arm_dim))
        self.opt = {
            "bc": AdamState.for_params(self.bundle.bc_actor),
            "rl": AdamState.for_params(self.bundle.rl_actor),
            "c1": AdamState.for_params(self.bundle.critic1),
            "c2": AdamState.for_params(self.bundle.critic2),
            "dbc": AdamState.for_params(self.bundle.dbc_head),
            "gate": AdamState.for_params(self.bundle.gate),
            "alpha": AdamState.for_params(self.bundle.alpha_log),
        }
        if self.bundle.gripper_q is not None:
            self.opt["gq"] = AdamState.for_params(self.bundle.gripper_q)
        self.total_env_steps = 0
        self.nonfinite_streak = 0
        self.loss_accum = {}

    # -- demo collection ----------------------------------------------------

    def collect_demos(self) -> list:
        """Noisy oracle rollouts ingested as offline demonstrations."""
        cfg = self.config
        policy = oracle.OraclePolicy(self.task, noise_scale=cfg.demo_noise)
        episodes = []
        count = 0
        attempt = 0
        while count < cfg.demo_episodes:
            seed = cfg.seed * 100_000 + attempt
            attempt += 1
            rng = np.random.default_rng([seed & 0xFFFFFFFF, 0xDE30])
            s = envsim.reset(self.task, seed)
            episode, done = [], False
            while not done:
                arm, grip, _ = oracle.oracle_act(policy, s, rng=rng)
                s2, r, done = envsim.step(s, arm, grip, self.task)
                episode.append(Transition(
                    state=observe(s, self.task),
                    arm_action=arm.delta,
                    gripper_action=grip.mode,
                    reward=r,
                    next_state=observe(s2, self.task),
                    done=done,
                    intervened=False,
                    source=SRC_OFFLINE_DEMO,
                ))
                s = s2
            if episode[-1].reward == 1.0:
                episodes.append(episode)
                count += 1
        for ep in episodes:
            ingest_episode(self.buffers, ep)
        return episodes

    # -- single update steps --------------------------------------------------

    def _step(self, name: str, params, fn, lr: float) -> float:
        try:
            value, g = loss_and_grad(fn, params)
        except ArithmeticError as exc:
            self.nonfinite_streak += 1
            log.warning("skipping %s update: %s", name, exc)
            if self.nonfinite_streak >= 3:
                raise RuntimeError(
                    f"3 consecutive non-finite losses, last in {name}: {exc}")
            return float("nan")
        self.nonfinite_streak = 0
        optimizer_step(self.opt[name], params, g, lr)
        self.loss_accum.setdefault(name, []).append(value)
        return value

    def critic_update(self, batch: Batch):
        cfg = self.config
        try:
            y = critic_targets(self.bundle, batch, cfg.gamma, self.rng)
        except ArithmeticError as exc:
            self.nonfinite_streak += 1
            log.warning("skipping critic update: %s", exc)
            if self.nonfinite_streak >= 3:
                raise RuntimeError(f"3 consecutive non-finite losses: {exc}")
            return
        self._step("c1", self.bundle.critic1,
                   critic_loss_fn(self.bundle.critic_spec, batch, y), cfg.lr_critic)
        self._step("c2", self.bundle.critic2,
                   critic_loss_fn(self.bundle.critic_spec, batch, y), cfg.lr_critic)

    def awac_update(self, batch: Batch):
        cfg = self.config
        w = awac_weights(self.bundle, batch, cfg.awac_lambda, self.rng)
        self._step("rl", self.bundle.rl_actor,
                   awac_loss_fn(self.bundle.actor_spec, batch, w), cfg.lr_rl)

    def bc_update(self, batch: Batch):
        self._step("bc", self.bundle.bc_actor,
                   bc_loss_fn(self.bundle.actor_spec, batch), self.config.lr_bc)

    def dbc_update(self, batch: Batch):
        self._step("dbc", self.bundle.dbc_head,
                   dbc_loss_fn(self.bundle.dbc_spec, batch), self.config.lr_dbc)

    def sac_actor_update(self, batch: Batch):
        cfg = self.config
        fn = sac_actor_loss_fn(self.bundle, batch, cfg.effective_bc_reg(),
                               self.bundle.alpha, self.rng)
        self._step("rl", self.bundle.rl_actor, fn, cfg.lr_rl)
        # temperature step toward the entropy target
        mean_raw, log_std = experts._actor_heads(self.bundle.rl_actor,
                                                 self.bundle.actor_spec, batch.state)
        u = mean_raw + np.exp(log_std) * self.rng.standard_normal(mean_raw.shape)
        a = np.tanh(u)
        z = (u - mean_raw) / np.exp(log_std)
        logp = (-0.5 * np.sum(z * z, axis=-1) - np.sum(log_std, axis=-1)
                - 0.5 * self.arm_dim * LOG_2PI
                - np.sum(np.log(1 - a * a + SQUASH_EPS), axis=-1))
        alpha = self.bundle.alpha
        g = self.bundle.alpha_log.zeros_like()
        g.values[0] = -alpha * float(np.mean(logp) + self.target_entropy)
        optimizer_step(self.opt["alpha"], self.bundle.alpha_log, g,
                       self.config.lr_alpha)

    def gate_update(self, batch: Batch):
        cfg = self.config
        fn = gate_loss_fn(self.bundle, batch, cfg.gate_spec_coef,
                          cfg.gate_load_coef, cfg.gate_ent_coef)
        self._step("gate", self.bundle.gate, fn, cfg.lr_gate)

    def gripper_q_update(self, batch: Batch):
        fn = gripper_q_loss_fn(self.bundle, batch, self.config.gamma)
        self._step("gq", self.bundle.gripper_q, fn, self.config.lr_dbc)

    # -- stage I ----------------------------------------------------------------

    def pretrain(self, run_dir: RunDir | None = None) -> ExpertBundle:
        """Offline pre-training on the demo buffer; the gate stays untouched."""
        cfg = self.config
        if len(self.buffers.demo) == 0:
            raise ConfigError("pretrain requires at least one demo episode")
        for it in range(cfg.n_offline):
            batch = sample_bc(self.buffers, cfg.batch_size, self.rng)
            self.critic_update(batch)
            self.awac_update(batch)
            self.bc_update(batch)
            self.dbc_update(batch)
            if self.bundle.gripper_q is not None:
                self.gripper_q_update(batch)
            self.bundle.polyak(cfg.tau)
            if run_dir and (it + 1) % cfg.log_every_updates == 0:
                run_dir.metrics_line("updates", self._drain_losses(it + 1))
        return self.bundle

    def _drain_losses(self, step: int) -> dict:
        rec = {"step": step}
        for k, vals in self.loss_accum.items():
            rec[f"loss_{k}"] = float(np.mean(vals))
        self.loss_accum = {}
        return rec

    # -- stage II ---------------------------------------------------------------

    def _gripper_for(self, state_obs, eval_mode: bool):
        cfg = self.config
        if cfg.gripper_dqn:
            if not eval_mode and self.rng.random() < cfg.dqn_epsilon:
                return GripperAction(int(self.rng.integers(3)))
            q = experts.forward(self.bundle.gripper_q, self.bundle.dbc_spec, state_obs)
            return GripperAction(int(np.argmax(q)))
        return experts.dbc_act(self.bundle, state_obs)

    def rollout_episode(self, episode_idx: int, controller=None,
                        run_dir: RunDir | None = None, stochastic=True,
                        step_hook=None):
        """One online episode; returns (transitions, per-step decisions)."""
        cfg = self.config
        seed = cfg.seed * 1_000_000 + 7919 * episode_idx + 1
        s = envsim.reset(self.task, seed)
        transitions, decisions = [], []
        done = False
        while not done:
            obs = observe(s, self.task)
            intervened = controller.observe(s) if controller is not None else False
            if intervened:
                arm, grip = controller.act(s)
                decision = None
                expert = EXPERT_NONE
            else:
                arm, grip_dbc, decision = experts.compose_action(
                    self.bundle, obs, stochastic=stochastic, rng=self.rng,
                    force=cfg.forced_expert)
                grip = self._gripper_for(obs, eval_mode=not stochastic) \
                    if cfg.gripper_dqn else grip_dbc
                expert = EXPERT_BC if decision.selected == SELECT_BC else EXPERT_RL
            s2, r, done = envsim.step(s, arm, grip, self.task)
            transitions.append(Transition(
                state=obs,
                arm_action=arm.delta,
                gripper_action=grip.mode,
                reward=r,
                next_state=observe(s2, self.task),
                done=done,
                intervened=intervened,
                source=SRC_ONLINE_INTERVENTION if intervened else SRC_ONLINE_POLICY,
                expert=expert,
            ))
            decisions.append(decision)
            if run_dir is not None:
                run_dir.trajectory_line({
                    "episode": episode_idx,
                    "t": len(transitions) - 1,
                    "state": [round(float(x), 6) for x in obs],
                    "arm": [round(float(x), 6) for x in arm.delta],
                    "gripper": int(grip.mode),
                    "reward": r,
                    "done": done,
                    "intervened": intervened,
                    "expert": expert,
                })
            if step_hook is not None:
                step_hook(episode_idx, s2, transitions[-1], decision)
            s = s2
        return transitions, decisions

    def updates_for_steps(self, n_env_steps: int):
        cfg = self.config
        for _ in range(n_env_steps * cfg.utd):
            rl_batch = sample_rl(self.buffers, cfg.batch_size, self.rng)
            bc_batch = sample_bc(self.buffers, cfg.batch_size, self.rng)
            self.critic_update(rl_batch)
            self.sac_actor_update(rl_batch)
            self.bc_update(bc_batch)
            self.dbc_update(bc_batch)
            if self.bundle.gripper_q is not None:
                self.gripper_q_update(rl_batch)
            self.gate_update(bc_batch)
            self.bundle.polyak(cfg.tau)

    def train_online(self, run_dir: RunDir | None = None,
                     intervention_rule: oracle.InterventionRule | None = None,
                     episode_hook=None, controller_factory=None,
                     step_hook=None) -> TrainMetrics:
        """Stage II loop with a scripted (or injected) intervention source."""
        cfg = self.config
        rule = intervention_rule or cfg.intervention_rule()
        helper_policy = oracle.OraclePolicy(self.task)
        metrics = TrainMetrics()
        t0 = time.monotonic()
        for ep in range(cfg.online_episodes):
            if controller_factory is not None:
                controller = controller_factory(ep)
            else:
                controller = oracle.InterventionController(rule, helper_policy)
            transitions, decisions = self.rollout_episode(ep, controller, run_dir,
                                                          step_hook=step_hook)
            ingest_episode(self.buffers, transitions)
            self.total_env_steps += len(transitions)
            self.updates_for_steps(len(transitions))
            demo_ratio, auto_ratio = ratios(self.buffers)
            policy_steps = [d for d in decisions if d is not None]
            rl_ratio = (np.mean([d.selected == SELECT_RL for d in policy_steps])
                        if policy_steps else 0.0)
            rec = EpisodeRecord(
                episode=ep,
                success=transitions[-1].reward == 1.0,
                length=len(transitions),
                interventions=controller.used,
                intervened_steps=sum(t.intervened for t in transitions),
                rl_selection_ratio=float(rl_ratio),
                demo_ratio=demo_ratio,
                auto_success_ratio=auto_ratio,
                total_env_steps=self.total_env_steps,
            )
            metrics.episodes.append(rec)
            if run_dir is not None:
                run_dir.metrics_line("episode", asdict(rec))
                if self.loss_accum and (ep + 1) % 5 == 0:
                    run_dir.metrics_line("updates", self._drain_losses(self.total_env_steps))
                if cfg.checkpoint_every and (ep + 1) % cfg.checkpoint_every == 0:
                    run_dir.checkpoint(self.bundle, ep + 1,
                                       meta={"task": cfg.task_id})
            if episode_hook is not None:
                episode_hook(self, ep, rec)
        metrics.wall_clock = time.monotonic() - t0
        return metrics


# ---- functional entry points (the module's public operations) ---------------


def pretrain(config: RunConfig, demo_episodes=None,
             run_dir: RunDir | None = None):
    """Stage I: returns (bundle, trainer). `demo_episodes` defaults to fresh
    noisy-oracle demos per the config."""
    trainer = Trainer(config)
    if demo_episodes is None:
        trainer.collect_demos()
    else:
        for ep in demo_episodes:
            ingest_episode(trainer.buffers, ep)
    trainer.pretrain(run_dir)
    return trainer.bundle, trainer


def train_online(config: RunConfig, bundle: ExpertBundle, buffers: BufferSet,
                 intervention_rule=None, run_dir=None, episode_hook=None):
    trainer = Trainer(config, bundle=bundle, buffers=buffers)
    metrics = trainer.train_online(run_dir, intervention_rule, episode_hook)
    return trainer.bundle, metrics


def evaluate(bundle: ExpertBundle, task_id: str, n_episodes: int, seed: int,
             force: str | None = None, gripper_dqn: bool = False) -> EvalResult:
    """Deterministic-mode rollouts without interventions or learning."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    task = get_task(task_id)
    successes, lengths, rl_fracs = [], [], []
    switch_disp, nonswitch_disp = [], []
    for ep in range(n_episodes):
        s = envsim.reset(task, seed * 1_000_000 + ep)
        done = False
        prev_sel = None
        rl_steps = steps = 0
        while not done:
            obs = observe(s, task)
            arm, grip, decision = experts.compose_action(bundle, obs,
                                                         stochastic=False,
                                                         force=force)
            if gripper_dqn and bundle.gripper_q is not None:
                q = experts.forward(bundle.gripper_q, bundle.dbc_spec, obs)
                grip = GripperAction(int(np.argmax(q)))
            s2, r, done = envsim.step(s, arm, grip, task)
            disp = float(np.linalg.norm(s2.ee_pos - s.ee_pos))
            if prev_sel is not None:
                (switch_disp if decision.selected != prev_sel
                 else nonswitch_disp).append(disp)
            prev_sel = decision.selected
            rl_steps += decision.selected == SELECT_RL
            steps += 1
            s = s2
        successes.append(s.succeeded)
        lengths.append(steps)
        rl_fracs.append(rl_steps / steps)
    return EvalResult(
        success_rate=float(np.mean(successes)),
        mean_length=float(np.mean(lengths)),
        rl_ratio=float(np.mean(rl_fracs)),
        switch_disp_mean=float(np.mean(switch_disp)) if switch_disp else 0.0,
        switch_disp_std=float(np.std(switch_disp)) if switch_disp else 0.0,
        nonswitch_disp_mean=float(np.mean(nonswitch_disp)) if nonswitch_disp else 0.0,
        nonswitch_disp_std=float(np.std(nonswitch_disp)) if nonswitch_disp else 0.0,
        n_switches=len(switch_disp),
    )
