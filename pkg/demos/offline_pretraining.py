"""
Stage I: pre-training both experts from demonstrations
======================================================

Twenty noisy scripted rollouts seed the demonstration buffer. The
imitation actor fits them by regression, the RL actor by
advantage-weighted regression against the twin critics, and the gripper
head by classification. The gate is untouched here; it only matters once
online data arrives.

Budgets are shrunk so this finishes in about a minute.
"""

from moelab.training import RunConfig, Trainer, evaluate
from moelab.experts import SELECT_BC, SELECT_RL

config = RunConfig(
    task_id="drawer_place",
    seed=0,
    demo_episodes=20,
    n_offline=6000,
    batch_size=128,
    hidden=(64, 64),
    gate_hidden=(32, 32),
    lr_bc=1e-3,
    lr_rl=1e-3,
    lr_critic=1e-3,
    lr_dbc=1e-3,
    awac_lambda=10.0,
)

trainer = Trainer(config)
episodes = trainer.collect_demos()
print(f"collected {len(episodes)} demos, "
      f"{len(trainer.buffers.demo)} transitions")

trainer.pretrain()

# how good is each expert on its own, before any online experience?
for label, force in (("imitation actor", SELECT_BC), ("rl actor", SELECT_RL)):
    res = evaluate(trainer.bundle, "drawer_place", 20, seed=500, force=force)
    print(f"{label:16s} success {res.success_rate:.2f} "
          f"mean length {res.mean_length:.1f}")

# the cold gate outputs exactly (0.5, 0.5) everywhere and ties go to RL
res = evaluate(trainer.bundle, "drawer_place", 20, seed=500)
print(f"{'composed (cold)':16s} success {res.success_rate:.2f} "
      f"rl share {res.rl_ratio:.2f}")
