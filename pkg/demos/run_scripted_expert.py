"""
Watching the scripted expert solve each task
============================================

The scripted expert is a stateless waypoint controller: at every step it
recomputes which phase of the task remains unfinished and steers toward
that phase's target. Because it never stores progress, it can be dropped
into the middle of a botched episode and still recover, which is exactly
what the intervention machinery needs.
"""

import numpy as np

from moelab import envsim, oracle

for task_id in ("drawer_place", "lid_box", "dual_insert", "double_fold"):
    task = envsim.get_task(task_id)
    policy = oracle.OraclePolicy(task)

    lengths = []
    wins = 0
    for seed in range(50):
        state = envsim.reset(task, seed)
        done = False
        while not done:
            arm, grip, _ = oracle.oracle_act(policy, state)
            state, reward, done = envsim.step(state, arm, grip, task)
        wins += state.succeeded
        lengths.append(state.step_index)

    print(f"{task_id:14s} success {wins}/50  mean length {np.mean(lengths):5.1f}")

# the same policy with target jitter is what records demonstrations
task = envsim.get_task("drawer_place")
noisy = oracle.OraclePolicy(task, noise_scale=0.02)
rng = np.random.default_rng(0)
state = envsim.reset(task, 123)
done = False
while not done:
    arm, grip, _ = oracle.oracle_act(noisy, state, rng=rng)
    state, reward, done = envsim.step(state, arm, grip, task)
print(f"\nnoisy demo rollout: success={state.succeeded} in {state.step_index} steps")
