import numpy as np
import pytest
from scipy import stats

from moelab.buffers import (
    SRC_OFFLINE_DEMO,
    SRC_ONLINE_INTERVENTION,
    SRC_ONLINE_POLICY,
    BufferSet,
    Transition,
    ingest_episode,
    load_buffers,
    ratios,
    sample_bc,
    sample_rl,
    save_buffers,
)

DS, DA = 3, 2


def make_episode(n, succeed, intervened_steps=(), source=SRC_ONLINE_POLICY, tag=0.0):
    eps = []
    for i in range(n):
        src = source
        if i in intervened_steps:
            src = SRC_ONLINE_INTERVENTION
        eps.append(Transition(
            state=np.full(DS, tag + i, dtype=float),
            arm_action=np.full(DA, 0.1 * i),
            gripper_action=i % 3,
            reward=1.0 if (succeed and i == n - 1) else 0.0,
            next_state=np.full(DS, tag + i + 1, dtype=float),
            done=i == n - 1,
            intervened=i in intervened_steps,
            source=src,
        ))
    return eps


def offline_episode(n, tag=0.0):
    return make_episode(n, succeed=True, source=SRC_OFFLINE_DEMO, tag=tag)


def test_offline_load_demo_equals_success():
    b = BufferSet(DS, DA)
    for k in range(20):
        ingest_episode(b, offline_episode(5, tag=100 * k))
    assert len(b.demo) == len(b.success) == 100
    assert len(b.replay) == 0
    assert b.offline_demo_count == 100


def test_failed_episode_grows_only_replay():
    b = BufferSet(DS, DA)
    ingest_episode(b, offline_episode(5))
    before = (len(b.demo), len(b.success))
    ingest_episode(b, make_episode(7, succeed=False))
    assert len(b.replay) == 7
    assert (len(b.demo), len(b.success)) == before


def test_successful_episode_with_interventions_routing_counts():
    # counting oracle over the routing rules: n=10, 3 intervened steps
    b = BufferSet(DS, DA)
    ingest_episode(b, offline_episode(4))
    ep = make_episode(10, succeed=True, intervened_steps=(2, 3, 4))
    ingest_episode(b, ep)
    assert len(b.replay) == 10
    assert len(b.demo) == 4 + 3
    assert len(b.success) == 4 + 10
    assert b.auto_success_count == 10 - 3


def test_routing_partition_invariant_randomized():
    rng = np.random.default_rng(0)
    b = BufferSet(DS, DA)
    ingest_episode(b, offline_episode(5))
    expected_replay = expected_demo = expected_success = 0
    expected_demo += 5
    expected_success += 5
    expected_auto = 0
    for k in range(50):
        n = int(rng.integers(2, 12))
        succeed = bool(rng.random() < 0.5)
        iv = tuple(i for i in range(n) if rng.random() < 0.3)
        ingest_episode(b, make_episode(n, succeed, iv, tag=1000 * k))
        expected_replay += n
        expected_demo += len(iv)
        if succeed:
            expected_success += n
            expected_auto += n - len(iv)
    assert len(b.replay) == expected_replay
    assert len(b.demo) == expected_demo
    assert len(b.success) == expected_success
    assert b.auto_success_count == expected_auto
    # every replay transition intervened iff tagged so; demo holds exactly them
    assert int(np.sum(b.replay.column("intervened"))) == expected_demo - 5


def test_rejects_malformed_episode():
    b = BufferSet(DS, DA)
    with pytest.raises(ValueError):
        ingest_episode(b, [])
    ep = make_episode(5, succeed=False)
    ep[2].done = True
    with pytest.raises(ValueError):
        ingest_episode(b, ep)
    ep = make_episode(5, succeed=False)
    ep[-1].done = False
    with pytest.raises(ValueError):
        ingest_episode(b, ep)


def seeded_buffers():
    b = BufferSet(DS, DA)
    ingest_episode(b, offline_episode(10, tag=0))
    ingest_episode(b, make_episode(10, succeed=True, tag=1e6))
    return b


def test_sample_bc_source_ratio():
    b = seeded_buffers()
    # demo transitions have state tag < 1e6, online-success ones >= 1e6
    batch = sample_bc(b, 100_000, seed=1)
    # success store = 10 demo + 10 online, demo store = 10 demo
    # expected fraction of online-tagged = 0.5 * 0.5 = 0.25
    frac_online = np.mean(batch.state[:, 0] >= 1e6)
    assert abs(frac_online - 0.25) < 0.01


def test_sample_rl_source_ratio_and_chi_square():
    b = seeded_buffers()
    batch = sample_rl(b, 100_000, seed=2)
    online = int(np.sum(batch.source == SRC_ONLINE_POLICY))
    frac = online / len(batch)
    assert abs(frac - 0.5) < 0.01
    _, p = stats.chisquare([online, len(batch) - online])
    assert p > 0.01


def test_sample_deterministic_and_zero_batch():
    b = seeded_buffers()
    b1 = sample_rl(b, 32, seed=7)
    b2 = sample_rl(b, 32, seed=7)
    assert np.array_equal(b1.state, b2.state)
    assert len(sample_bc(b, 0, seed=0)) == 0


def test_sample_rl_empty_replay_falls_back(caplog):
    b = BufferSet(DS, DA)
    ingest_episode(b, offline_episode(10))
    with caplog.at_level("WARNING"):
        batch = sample_rl(b, 50, seed=0)
    assert len(batch) == 50
    assert np.all(batch.source == SRC_OFFLINE_DEMO)
    assert any("empty" in r.message for r in caplog.records)


def test_sample_identical_sources_uniform():
    b = BufferSet(DS, DA)
    ingest_episode(b, offline_episode(4))
    batch = sample_bc(b, 40_000, seed=3)
    # demo == success here; per-transition frequency should be ~uniform
    counts = np.bincount(batch.state[:, 0].astype(int), minlength=4)
    assert np.all(np.abs(counts / 40_000 - 0.25) < 0.02)


def test_ratios():
    b = BufferSet(DS, DA)
    ingest_episode(b, offline_episode(10))
    with pytest.raises(ValueError):
        ratios(b)
    ingest_episode(b, make_episode(40, succeed=False))
    demo_ratio, auto = ratios(b)
    assert demo_ratio == pytest.approx(100.0 * 10 / 40)
    assert auto == 0.0
    ingest_episode(b, make_episode(60, succeed=True))
    demo_ratio, auto = ratios(b)
    assert auto == pytest.approx(100.0 * 60 / 100)


def test_persistence_roundtrip(tmp_path):
    b = seeded_buffers()
    ingest_episode(b, make_episode(5, succeed=True, intervened_steps=(1,), tag=5e6))
    save_buffers(tmp_path / "buf", b)
    b2 = load_buffers(tmp_path / "buf")
    assert len(b2.demo) == len(b.demo)
    assert len(b2.success) == len(b.success)
    assert len(b2.replay) == len(b.replay)
    assert b2.auto_success_count == b.auto_success_count
    assert b2.offline_demo_count == b.offline_demo_count
    assert np.allclose(b2.replay.column("state"), b.replay.column("state"))
    assert b2.replay.episodes == [tuple(e) for e in b.replay.episodes] or \
        [tuple(e) for e in b2.replay.episodes] == b.replay.episodes


def test_binary_reward_enforced():
    with pytest.raises(ValueError):
        Transition(np.zeros(DS), np.zeros(DA), 0, 0.5, np.zeros(DS),
                   True, False, SRC_ONLINE_POLICY)
