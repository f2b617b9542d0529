"""Release gate: one test per criterion, one pass/fail line each.

The slow criteria train real desk-scale runs (several minutes total) and
share their arms through session fixtures. Deselect with
`-m "not acceptance"` during development.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from moelab import envsim
from moelab.buffers import (
    SRC_OFFLINE_DEMO,
    SRC_ONLINE_INTERVENTION,
    SRC_ONLINE_POLICY,
    BufferSet,
    Transition,
    ingest_episode,
    sample_bc,
    sample_rl,
)
from moelab.experts import (
    _actor_heads,
    actor_heads_vars,
    load_bundle,
    make_bundle,
)
from moelab.nnkit import Var, loss_and_grad
from moelab.nnkit.heads import LOG_2PI
from moelab.training import (
    BC_STD_WEIGHT,
    RunConfig,
    RunDir,
    Trainer,
    awac_loss_fn,
    awac_weights,
    bc_loss_fn,
    critic_loss_fn,
    critic_targets,
    dbc_loss_fn,
    evaluate,
    gate_loss_components,
    gate_loss_fn,
    gripper_q_loss_fn,
    loss_gate,
    sac_actor_loss_fn,
)

from oracles import fd_grad, max_rel_err

pytestmark = pytest.mark.acceptance


def report(name: str, ok: bool, detail: str):
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---- shared desk-scale configuration ----------------------------------------

# Budgets small enough for a desktop core, large enough that both experts
# train to competence. The stronger action anchoring (bc_reg) and faster
# temperature settling (alpha_init, lr_alpha) compensate for the short
# horizon; see the per-field notes in docs/config.md.
DESK = dict(
    seed=2,
    n_offline=6000,
    demo_episodes=20,
    online_episodes=90,
    utd=1,
    batch_size=128,
    hidden=(64, 64),
    gate_hidden=(32, 32),
    checkpoint_every=30,
    lr_bc=1e-3,
    lr_rl=1e-3,
    lr_critic=1e-3,
    lr_dbc=1e-3,
    lr_gate=1e-3,
    lr_alpha=1e-2,
    alpha_init=0.02,
    awac_lambda=10.0,
    bc_reg=3.0,
    gate_load_coef=0.1,
    gate_ent_coef=0.015,
    trigger="stuck",
    stuck_steps=15,
    stuck_eps=0.05,
    handover=10,
    max_interventions=12,
)

EVAL_EPISODES = 50
EVAL_SEED = 1020
CKPT_EPISODES = (30, 60, 90)


def train_arm(out: Path, **overrides) -> tuple:
    cfg = RunConfig(**{**DESK, **overrides})
    trainer = Trainer(cfg)
    trainer.collect_demos()
    trainer.pretrain()
    run = RunDir(out)
    run.write_config(cfg)
    metrics = trainer.train_online(run)
    run.close()
    return cfg, trainer, metrics


@pytest.fixture(scope="session")
def drawer_arms(tmp_path_factory):
    root = tmp_path_factory.mktemp("drawer")
    arms = {}
    arms["base"] = train_arm(root / "base", task_id="drawer_place")
    arms["no_bc_reg"] = train_arm(root / "no_bc_reg", task_id="drawer_place",
                                  no_bc_reg=True)
    arms["bc_only"] = train_arm(root / "bc_only", task_id="drawer_place",
                                bc_only=True)
    arms["rl_only"] = train_arm(root / "rl_only", task_id="drawer_place",
                                rl_only=True)
    arms["root"] = root
    return arms


@pytest.fixture(scope="session")
def dual_insert_arms(tmp_path_factory):
    root = tmp_path_factory.mktemp("dual")
    # dual_insert routes best with a slightly cooler gate entropy pull
    over = dict(task_id="dual_insert", seed=0, gate_ent_coef=0.01)
    return {
        "base": train_arm(root / "base", **over),
        "bc_only": train_arm(root / "bc_only", bc_only=True, **over),
        "rl_only": train_arm(root / "rl_only", rl_only=True, **over),
    }


@pytest.fixture(scope="session")
def lid_box_arms(tmp_path_factory):
    root = tmp_path_factory.mktemp("lid")
    return {
        "dbc": train_arm(root / "dbc", task_id="lid_box"),
        "dqn": train_arm(root / "dqn", task_id="lid_box", gripper_dqn=True),
    }


# ---- criterion: gradient suite ----------------------------------------------


def test_criterion_gradient_suite():
    """Every loss matches central finite differences within 1e-4."""
    ds, da, n = 5, 2, 4
    worst = {}
    for seed in range(3):
        b = make_bundle(ds, da, hidden=(6,), gate_hidden=(5,), seed=seed,
                        with_gripper_q=True)
        rng = np.random.default_rng(seed)
        from moelab.buffers import Batch
        batch = Batch(
            state=rng.normal(size=(n, ds)),
            arm_action=rng.uniform(-0.9, 0.9, size=(n, da)),
            gripper_action=rng.integers(0, 3, size=n),
            reward=rng.integers(0, 2, size=n).astype(float),
            next_state=rng.normal(size=(n, ds)),
            done=rng.random(n) < 0.2,
            intervened=np.zeros(n, bool),
            source=np.full(n, SRC_OFFLINE_DEMO),
        )

        def record(name, fn, params):
            _, g = loss_and_grad(fn, params)
            err = max_rel_err(g.values, fd_grad(fn, params))
            worst[name] = max(worst.get(name, 0.0), err)

        # imitation loss: the variance head sees a stop-gradient mean, so
        # the finite-difference side freezes that mean at the base point
        mean0 = np.tanh(_actor_heads(b.bc_actor, b.actor_spec, batch.state)[0])
        states_v, actions_v = Var(batch.state), Var(batch.arm_action)

        def frozen_bc(leaves):
            mean_raw, log_std = actor_heads_vars(leaves, b.actor_spec, states_v)
            diff = mean_raw.tanh() - actions_v
            mse = (diff * diff).sum(axis=-1).mean()
            z = (actions_v - Var(mean0)) * (-log_std).exp()
            nll = (log_std + (z * z) * 0.5 + 0.5 * LOG_2PI).sum(axis=-1).mean()
            return mse + BC_STD_WEIGHT * nll

        _, g_bc = loss_and_grad(bc_loss_fn(b.actor_spec, batch), b.bc_actor)
        worst["bc"] = max(worst.get("bc", 0.0),
                          max_rel_err(g_bc.values, fd_grad(frozen_bc, b.bc_actor)))

        record("dbc", dbc_loss_fn(b.dbc_spec, batch), b.dbc_head)
        y = critic_targets(b, batch, 0.97, np.random.default_rng(seed))
        record("critic", critic_loss_fn(b.critic_spec, batch, y), b.critic1)
        w = awac_weights(b, batch, 1.0, np.random.default_rng(seed))
        record("awac", awac_loss_fn(b.actor_spec, batch, w), b.rl_actor)
        record("sac_actor",
               sac_actor_loss_fn(b, batch, bc_reg=0.1, alpha=0.2,
                                 rng=np.random.default_rng(seed)), b.rl_actor)
        record("gate", gate_loss_fn(b, batch, 0.1, 0.05, 0.01), b.gate)
        record("gripper_q", gripper_q_loss_fn(b, batch, 0.97), b.gripper_q)

    bad = {k: v for k, v in worst.items() if v >= 1e-4}
    detail = ", ".join(f"{k} {v:.2e}" for k, v in sorted(worst.items()))
    report("gradient suite (all losses vs central FD, tol 1e-4)",
           not bad, detail)


# ---- criterion: gate-loss algebra -------------------------------------------


def test_criterion_gate_loss_algebra():
    coefs = (0.1, 0.05, 0.01)
    max_gap = 0.0
    rng = np.random.default_rng(0)
    b = make_bundle(5, 2, hidden=(6,), gate_hidden=(5,), seed=0)
    from moelab.buffers import Batch
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        b.gate.values[...] = rng.normal(0, 0.5, b.gate.values.size).astype(np.float32)
        batch = Batch(
            state=rng.normal(size=(n, 5)),
            arm_action=rng.uniform(-0.9, 0.9, size=(n, 2)),
            gripper_action=rng.integers(0, 3, size=n),
            reward=np.zeros(n),
            next_state=rng.normal(size=(n, 5)),
            done=np.zeros(n, bool),
            intervened=np.zeros(n, bool),
            source=np.full(n, SRC_OFFLINE_DEMO),
        )
        comp = gate_loss_components(b, batch, *coefs)
        total = loss_gate(b, batch, *coefs)
        parts = (comp["variance"] + comp["specialization"]
                 + comp["load"] + comp["neg_entropy"])
        max_gap = max(max_gap, abs(parts - comp["total"]), abs(parts - total))

    # endpoint algebra on exact weights
    spec_at = lambda wb: 0.1 * (0.5 - abs(wb - 0.5))
    ent_at = lambda wb: 0.01 * ((wb * np.log(wb) if wb > 0 else 0.0)
                                + ((1 - wb) * np.log(1 - wb) if wb < 1 else 0.0))
    ok = (
        max_gap < 1e-6
        and spec_at(0.0) == 0.0
        and spec_at(1.0) == 0.0
        and spec_at(0.5) > max(spec_at(x) for x in (0.0, 0.1, 0.3, 0.7, 0.9, 1.0))
        and abs(ent_at(0.5) - (-0.01 * np.log(2.0))) < 1e-15
    )
    report("gate-loss algebra (component sum 1e-6, endpoints)",
           ok, f"max component-sum gap {max_gap:.2e}, "
               f"entropy(0.5) {ent_at(0.5):.6f} vs {-0.01 * np.log(2.0):.6f}")


# ---- criterion: buffer routing ----------------------------------------------


def _tagged_transition(uid, source, intervened, reward, done):
    state = np.zeros(3)
    state[0] = uid
    return Transition(
        state=state, arm_action=np.zeros(2), gripper_action=1,
        reward=reward, next_state=state + 0.5, done=done,
        intervened=intervened, source=source,
    )


def test_criterion_buffer_routing():
    rng = np.random.default_rng(7)
    buffers = BufferSet(3, 2)
    uid = 0
    want_replay, want_demo, want_success = [], [], []
    want_auto = 0
    for _ in range(60):
        length = int(rng.integers(1, 12))
        offline = rng.random() < 0.3
        success = bool(rng.random() < 0.5)
        episode = []
        for i in range(length):
            last = i == length - 1
            if offline:
                src, interv = SRC_OFFLINE_DEMO, False
            else:
                interv = bool(rng.random() < 0.3)
                src = SRC_ONLINE_INTERVENTION if interv else SRC_ONLINE_POLICY
            episode.append(_tagged_transition(
                uid, src, interv, 1.0 if (last and success) else 0.0, last))
            uid += 1
        ingest_episode(buffers, episode)
        ids = [int(t.state[0]) for t in episode]
        flags = [t.intervened for t in episode]
        if offline:
            want_demo += ids
            want_success += ids
        else:
            want_replay += ids
            want_demo += [i for i, f in zip(ids, flags) if f]
            if success:
                want_success += ids
                want_auto += sum(1 for f in flags if not f)

    got = lambda store: sorted(int(x) for x in store.column("state")[:, 0])
    partition_ok = (
        got(buffers.replay) == sorted(want_replay)
        and got(buffers.demo) == sorted(want_demo)
        and got(buffers.success) == sorted(want_success)
        and buffers.auto_success_count == want_auto
    )

    # sampler source ratios over 1e5 draws, with each store holding its
    # own uniquely tagged episode so the draw origin is unambiguous
    probe = BufferSet(3, 2)
    probe.demo.append_episode([
        _tagged_transition(1, SRC_OFFLINE_DEMO, False, 1.0, i == 4)
        for i in range(5)])
    probe.success.append_episode([
        _tagged_transition(2, SRC_ONLINE_POLICY, False, 1.0, i == 4)
        for i in range(5)])
    probe.replay.append_episode([
        _tagged_transition(3, SRC_ONLINE_POLICY, False, 0.0, i == 4)
        for i in range(5)])
    draws = 100_000
    rl_batch = sample_rl(probe, draws, np.random.default_rng(11))
    bc_batch = sample_bc(probe, draws, np.random.default_rng(12))
    rl_share = float(np.mean(rl_batch.state[:, 0] == 3))
    bc_share = float(np.mean(bc_batch.state[:, 0] == 2))
    ratio_ok = abs(rl_share - 0.5) < 0.01 and abs(bc_share - 0.5) < 0.01
    report("buffer routing (partition invariant, sampler 0.5 +/- 0.01)",
           partition_ok and ratio_ok,
           f"partition {'ok' if partition_ok else 'BROKEN'}, "
           f"rl source share {rl_share:.4f}, bc probe share {bc_share:.4f}")


# ---- criterion: success ordering on two tasks -------------------------------


def _arm_eval(arm, episodes=EVAL_EPISODES, seed=EVAL_SEED):
    cfg, trainer, _ = arm
    return evaluate(trainer.bundle, cfg.task_id, episodes, seed=seed,
                    force=cfg.forced_expert, gripper_dqn=cfg.gripper_dqn)


def test_criterion_success_ordering_drawer(drawer_arms):
    full = _arm_eval(drawer_arms["base"])
    bc = _arm_eval(drawer_arms["bc_only"])
    rl = _arm_eval(drawer_arms["rl_only"])
    ok = (full.success_rate >= bc.success_rate
          and full.success_rate >= rl.success_rate
          and full.success_rate >= 0.90)
    report("success ordering drawer_place (full >= bc_only, rl_only; full >= 0.90)",
           ok, f"full {full.success_rate:.2f}, bc_only {bc.success_rate:.2f}, "
               f"rl_only {rl.success_rate:.2f}")


def test_criterion_success_ordering_dual_insert(dual_insert_arms):
    full = _arm_eval(dual_insert_arms["base"])
    bc = _arm_eval(dual_insert_arms["bc_only"])
    rl = _arm_eval(dual_insert_arms["rl_only"])
    ok = (full.success_rate >= bc.success_rate
          and full.success_rate >= rl.success_rate
          and full.success_rate >= 0.90)
    report("success ordering dual_insert (full >= bc_only, rl_only; full >= 0.90)",
           ok, f"full {full.success_rate:.2f}, bc_only {bc.success_rate:.2f}, "
               f"rl_only {rl.success_rate:.2f}")


# ---- criterion: intervention ratios without regularization ------------------


def test_criterion_regularization_ratios(drawer_arms):
    base_last = drawer_arms["base"][2].episodes[-1]
    noreg_last = drawer_arms["no_bc_reg"][2].episodes[-1]
    ok = (noreg_last.demo_ratio > base_last.demo_ratio
          and noreg_last.auto_success_ratio < base_last.auto_success_ratio)
    report("regularization ablation ratios (no_bc_reg: demo up, auto-success down)",
           ok, f"demo% {base_last.demo_ratio:.1f} -> {noreg_last.demo_ratio:.1f}, "
               f"auto% {base_last.auto_success_ratio:.1f} -> "
               f"{noreg_last.auto_success_ratio:.1f}")


# ---- criterion: switch smoothness -------------------------------------------


def test_criterion_switch_displacement(drawer_arms):
    with_reg = _arm_eval(drawer_arms["base"])
    without = _arm_eval(drawer_arms["no_bc_reg"])
    ok_switches = with_reg.n_switches > 0 and without.n_switches > 0
    ratio_with = with_reg.switch_disp_mean / max(with_reg.nonswitch_disp_mean, 1e-9)
    ratio_without = without.switch_disp_mean / max(without.nonswitch_disp_mean, 1e-9)
    ok = ok_switches and ratio_with <= 1.5 and ratio_without > ratio_with
    report("switch displacement (reg <= 1.5x non-switch; larger without reg)",
           ok, f"with reg {ratio_with:.2f} ({with_reg.n_switches} switches), "
               f"without {ratio_without:.2f} ({without.n_switches} switches)")


# ---- criterion: rl selection growth -----------------------------------------


def test_criterion_rl_selection_growth(drawer_arms):
    root = drawer_arms["root"]
    ratios = []
    for ep in CKPT_EPISODES:
        bundle, _, _ = load_bundle(root / "base" / "checkpoints" / f"ep{ep:05d}")
        res = evaluate(bundle, "drawer_place", 5, seed=2000)
        ratios.append(res.rl_ratio)
    ok = all(b >= a - 0.05 for a, b in zip(ratios, ratios[1:]))
    report("rl selection ratio nondecreasing across checkpoints (tol 0.05)",
           ok, " -> ".join(f"{r:.3f}" for r in ratios))


# ---- criterion: discrete gripper head comparison ----------------------------


def test_criterion_gripper_head_comparison(lid_box_arms):
    dbc = _arm_eval(lid_box_arms["dbc"])
    dqn = _arm_eval(lid_box_arms["dqn"])
    report("gripper head on lid_box (dqn strictly below classification)",
           dqn.success_rate < dbc.success_rate,
           f"dqn {dqn.success_rate:.2f} vs dbc {dbc.success_rate:.2f}")


# ---- criterion: reproducibility ---------------------------------------------


def test_criterion_reproducibility(tmp_path):
    overrides = dict(task_id="drawer_place", n_offline=300, online_episodes=6,
                     demo_episodes=4, checkpoint_every=0)
    streams = []
    for name in ("a", "b"):
        cfg = RunConfig(**{**DESK, **overrides})
        trainer = Trainer(cfg)
        trainer.collect_demos()
        trainer.pretrain()
        run = RunDir(tmp_path / name)
        run.write_config(cfg)
        trainer.train_online(run)
        run.close()
        streams.append((tmp_path / name / "metrics.jsonl").read_bytes())
    ok = streams[0] == streams[1] and len(streams[0]) > 0
    report("reproducibility (bit-identical metrics streams)",
           ok, f"{len(streams[0])} bytes each, "
               f"{'identical' if ok else 'DIFFERENT'}")
