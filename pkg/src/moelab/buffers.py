"""Three evolving transition stores and the derived samplers.

* ``demo``    — offline demonstrations plus every online intervention step.
* ``success`` — full episodes whose terminal reward is 1 (seeded with the
  offline demonstrations).
* ``replay``  — every online transition.

``sample_bc`` draws 50/50 from success and demo; ``sample_rl`` draws
50/50 from replay and demo. Stores are append-only; episode boundaries
are kept for routing and metrics only, sampling is per-transition.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SRC_OFFLINE_DEMO = 0
SRC_ONLINE_INTERVENTION = 1
SRC_ONLINE_POLICY = 2
SOURCE_NAMES = ("offline_demo", "online_intervention", "online_policy")

EXPERT_NONE, EXPERT_BC, EXPERT_RL = -1, 0, 1


@dataclass
class Transition:
    state: np.ndarray
    arm_action: np.ndarray
    gripper_action: int
    reward: float
    next_state: np.ndarray
    done: bool
    intervened: bool
    source: int
    expert: int = EXPERT_NONE

    def __post_init__(self):
        if self.reward not in (0.0, 1.0):
            raise ValueError(f"reward must be binary, got {self.reward}")
        if self.source not in (SRC_OFFLINE_DEMO, SRC_ONLINE_INTERVENTION,
                               SRC_ONLINE_POLICY):
            raise ValueError(f"bad source {self.source}")


@dataclass
class Batch:
    state: np.ndarray
    arm_action: np.ndarray
    gripper_action: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    done: np.ndarray
    intervened: np.ndarray
    source: np.ndarray

    def __len__(self):
        return self.state.shape[0]


class Store:
    """Append-only columnar transition store with episode boundaries."""

    FIELDS = ("state", "arm_action", "gripper_action", "reward", "next_state",
              "done", "intervened", "source", "expert")

    def __init__(self, state_dim: int, arm_dim: int):
        self.state_dim = state_dim
        self.arm_dim = arm_dim
        self._n = 0
        self._cap = 0
        self._cols = None
        self.episodes = []      # (start, end) half-open

    def __len__(self):
        return self._n

    def _grow(self, need: int):
        cap = max(1024, self._cap)
        while cap < need:
            cap *= 2
        cols = {
            "state": np.zeros((cap, self.state_dim), np.float32),
            "arm_action": np.zeros((cap, self.arm_dim), np.float32),
            "gripper_action": np.zeros(cap, np.int8),
            "reward": np.zeros(cap, np.float32),
            "next_state": np.zeros((cap, self.state_dim), np.float32),
            "done": np.zeros(cap, bool),
            "intervened": np.zeros(cap, bool),
            "source": np.zeros(cap, np.int8),
            "expert": np.zeros(cap, np.int8),
        }
        if self._cols is not None:
            for k, v in self._cols.items():
                cols[k][: self._n] = v[: self._n]
        self._cols, self._cap = cols, cap

    def append_episode(self, episode):
        n = len(episode)
        if self._n + n > self._cap:
            self._grow(self._n + n)
        c = self._cols
        for i, t in enumerate(episode, start=self._n):
            c["state"][i] = t.state
            c["arm_action"][i] = t.arm_action
            c["gripper_action"][i] = t.gripper_action
            c["reward"][i] = t.reward
            c["next_state"][i] = t.next_state
            c["done"][i] = t.done
            c["intervened"][i] = t.intervened
            c["source"][i] = t.source
            c["expert"][i] = t.expert
        self.episodes.append((self._n, self._n + n))
        self._n += n

    def gather(self, idx: np.ndarray) -> Batch:
        if self._cols is None:
            self._grow(1)
        c = self._cols
        return Batch(
            state=c["state"][idx].astype(np.float64),
            arm_action=c["arm_action"][idx].astype(np.float64),
            gripper_action=c["gripper_action"][idx].astype(np.int64),
            reward=c["reward"][idx].astype(np.float64),
            next_state=c["next_state"][idx].astype(np.float64),
            done=c["done"][idx].copy(),
            intervened=c["intervened"][idx].copy(),
            source=c["source"][idx].astype(np.int64),
        )

    def column(self, name: str) -> np.ndarray:
        return self._cols[name][: self._n] if self._cols is not None else np.zeros(0)


class BufferSet:
    def __init__(self, state_dim: int, arm_dim: int):
        self.state_dim = state_dim
        self.arm_dim = arm_dim
        self.demo = Store(state_dim, arm_dim)
        self.success = Store(state_dim, arm_dim)
        self.replay = Store(state_dim, arm_dim)
        self.offline_demo_count = 0
        self.auto_success_count = 0


def _validate_episode(episode):
    if not episode:
        raise ValueError("empty episode")
    if any(t.done for t in episode[:-1]) or not episode[-1].done:
        raise ValueError("done must hold at the last step and only there")


def ingest_episode(buffers: BufferSet, episode) -> BufferSet:
    """Route one contiguous episode into the three stores.

    Offline demonstration episodes (every transition tagged offline_demo) go
    to demo and success. Online episodes go to replay in full, intervened
    steps additionally to demo, and successful episodes in full to success;
    the auto-success counter excludes intervened steps.
    """
    _validate_episode(episode)
    offline = all(t.source == SRC_OFFLINE_DEMO for t in episode)
    if offline:
        buffers.demo.append_episode(episode)
        buffers.success.append_episode(episode)
        buffers.offline_demo_count += len(episode)
        return buffers
    if any(t.source == SRC_OFFLINE_DEMO for t in episode):
        raise ValueError("offline transitions inside an online episode")
    buffers.replay.append_episode(episode)
    intervened = [t for t in episode if t.intervened]
    if intervened:
        buffers.demo.append_episode(intervened)
    if episode[-1].reward == 1.0:
        buffers.success.append_episode(episode)
        buffers.auto_success_count += len(episode) - len(intervened)
    return buffers


def _sample_pair(a: Store, b: Store, batch: int, rng: np.random.Generator,
                 names=("", "")) -> Batch:
    if len(a) == 0 and len(b) == 0:
        raise ValueError("both stores are empty")
    if len(a) == 0 or len(b) == 0:
        empty, full = (names[0], b) if len(a) == 0 else (names[1], a)
        log.warning("store %s is empty; sampling only from the other", empty)
        idx = rng.integers(0, len(full), size=batch)
        return full.gather(idx)
    pick_a = rng.random(batch) < 0.5
    idx_a = rng.integers(0, len(a), size=batch)
    idx_b = rng.integers(0, len(b), size=batch)
    batch_a = a.gather(idx_a)
    batch_b = b.gather(idx_b)
    out = {}
    for f in Batch.__dataclass_fields__:
        va, vb = getattr(batch_a, f), getattr(batch_b, f)
        v = vb.copy()
        v[pick_a] = va[pick_a]
        out[f] = v
    return Batch(**out)


def sample_bc(buffers: BufferSet, batch: int, seed) -> Batch:
    """50/50 mixture of success and demo, uniform within each."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if batch == 0:
        return buffers.demo.gather(np.zeros(0, dtype=int))
    return _sample_pair(buffers.success, buffers.demo, batch, rng,
                        names=("success", "demo"))


def sample_rl(buffers: BufferSet, batch: int, seed) -> Batch:
    """50/50 mixture of replay and demo, uniform within each."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if batch == 0:
        return buffers.demo.gather(np.zeros(0, dtype=int))
    return _sample_pair(buffers.replay, buffers.demo, batch, rng,
                        names=("replay", "demo"))


def ratios(buffers: BufferSet):
    """(demo ratio, auto-success ratio) against replay size, as percentages."""
    n = len(buffers.replay)
    if n == 0:
        raise ValueError("replay buffer is empty; ratios undefined")
    return (100.0 * len(buffers.demo) / n,
            100.0 * buffers.auto_success_count / n)


# ---- persistence -----------------------------------------------------------


def _store_records(store: Store):
    for i in range(len(store)):
        yield {
            "state": store.column("state")[i].tolist(),
            "arm_action": store.column("arm_action")[i].tolist(),
            "gripper_action": int(store.column("gripper_action")[i]),
            "reward": float(store.column("reward")[i]),
            "next_state": store.column("next_state")[i].tolist(),
            "done": bool(store.column("done")[i]),
            "intervened": bool(store.column("intervened")[i]),
            "source": SOURCE_NAMES[int(store.column("source")[i])],
            "expert": int(store.column("expert")[i]),
        }


def save_buffers(directory, buffers: BufferSet):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in ("demo", "success", "replay"):
        store = getattr(buffers, name)
        with open(d / f"{name}.jsonl", "w") as fh:
            for rec in _store_records(store):
                fh.write(json.dumps(rec) + "\n")
        (d / f"{name}.episodes.json").write_text(json.dumps(store.episodes))
    counts = {
        "state_dim": buffers.state_dim,
        "arm_dim": buffers.arm_dim,
        "offline_demo_count": buffers.offline_demo_count,
        "auto_success_count": buffers.auto_success_count,
        "per_source": {
            name: {
                SOURCE_NAMES[s]: int(np.sum(getattr(buffers, name).column("source") == s))
                for s in range(3)
            }
            for name in ("demo", "success", "replay")
        },
    }
    (d / "manifest.json").write_text(json.dumps(counts, indent=2))


def load_buffers(directory) -> BufferSet:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    buffers = BufferSet(manifest["state_dim"], manifest["arm_dim"])
    buffers.offline_demo_count = manifest["offline_demo_count"]
    buffers.auto_success_count = manifest["auto_success_count"]
    for name in ("demo", "success", "replay"):
        store = getattr(buffers, name)
        episodes = json.loads((d / f"{name}.episodes.json").read_text())
        rows = []
        with open(d / f"{name}.jsonl") as fh:
            for line in fh:
                rec = json.loads(line)
                rows.append(Transition(
                    state=np.asarray(rec["state"]),
                    arm_action=np.asarray(rec["arm_action"]),
                    gripper_action=rec["gripper_action"],
                    reward=rec["reward"],
                    next_state=np.asarray(rec["next_state"]),
                    done=rec["done"],
                    intervened=rec["intervened"],
                    source=SOURCE_NAMES.index(rec["source"]),
                    expert=rec["expert"],
                ))
        for start, end in episodes:
            store.append_episode(rows[start:end])
    return buffers
