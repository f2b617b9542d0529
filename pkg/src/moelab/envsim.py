"""Deterministic 2D mini-manipulation environments.

Four desk-scale tasks on a point-mass end-effector in the unit square:

* ``drawer_place`` — pull a drawer open by its handle, drop a block
  inside, push the drawer shut.
* ``lid_box``      — park the lid off the box, drop the towel in, put
  the lid back.
* ``dual_insert``  — carry two plugs to their sockets; seating requires
  releasing within a tight tolerance.
* ``double_fold``  — two press-drag-release fold gestures on a towel.

Dynamics are kinematic: the commanded delta (clamped to [-1, 1] per
axis) is scaled by ``STEP_SCALE`` and applied with clipping at the
workspace walls. Latches fire only when their geometric preconditions
hold. Reward is 1 exactly once, at the step where the task's success
predicate first becomes true.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import yaml

# gripper modes, also the class order used for tie-breaking
GRIP_OPEN, GRIP_HOLD, GRIP_CLOSED = 0, 1, 2
GRIP_NAMES = ("open", "hold", "closed")

STEP_SCALE = 0.05
GRASP_TOL = 0.03

TASK_IDS = ("drawer_place", "lid_box", "dual_insert", "double_fold")


class ContractError(RuntimeError):
    """Stepping a terminal state, or similar misuse."""


@dataclass
class ArmAction:
    """Continuous increment in [-1, 1]^2, scaled to the per-step displacement."""

    delta: np.ndarray

    def __post_init__(self):
        self.delta = np.clip(np.asarray(self.delta, dtype=np.float64), -1.0, 1.0)


@dataclass
class GripperAction:
    mode: int

    def __post_init__(self):
        if self.mode not in (GRIP_OPEN, GRIP_HOLD, GRIP_CLOSED):
            raise ValueError(f"bad gripper mode {self.mode}")


@dataclass
class TaskSpec:
    task_id: str
    horizon: int
    init_lo: np.ndarray   # randomized init box, lower corner; an offset
    init_hi: np.ndarray   # box for dual_insert / double_fold, absolute otherwise
    insert_tol: float = 0.012

    def __post_init__(self):
        if self.task_id not in TASK_IDS:
            raise ValueError(f"unknown task {self.task_id!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.init_lo = np.asarray(self.init_lo, dtype=np.float64)
        self.init_hi = np.asarray(self.init_hi, dtype=np.float64)
        if np.any(np.abs(self.init_lo) > 1) or np.any(np.abs(self.init_hi) > 1):
            raise ValueError("init range must lie inside the unit workspace")
        if np.any(self.init_hi < self.init_lo):
            raise ValueError("init range upper corner below lower corner")


@dataclass
class EnvState:
    ee_pos: np.ndarray
    ee_vel: np.ndarray
    gripper: int
    objects: np.ndarray          # (k, 2) object positions
    latches: np.ndarray          # task-specific discrete latches
    held: int                    # index into objects, or -1
    step_index: int
    succeeded: bool = False

    def copy(self) -> "EnvState":
        return EnvState(
            self.ee_pos.copy(), self.ee_vel.copy(), self.gripper,
            self.objects.copy(), self.latches.copy(), self.held,
            self.step_index, self.succeeded,
        )


# ---- task geometry -------------------------------------------------------

# drawer: handle slides along x at fixed y; interior rides with the handle
DRAWER_Y = 0.5
DRAWER_X_MIN, DRAWER_X_MAX = 0.55, 0.75
DRAWER_OPEN_X = 0.58       # handle left of this -> drawer open
DRAWER_CLOSED_X = 0.72     # handle right of this -> drawer closed
DRAWER_INTERIOR_DX = 0.08
DRAWER_INTERIOR_TOL = 0.05

BOX_POS = np.array([0.7, 0.7])
BOX_TOL = 0.05
LID_OFF_DIST = 0.15

SOCKETS = (np.array([0.8, 0.65]), np.array([0.8, 0.35]))

FOLD_GRASPS = (np.array([-0.08, 0.0]), np.array([-0.04, 0.06]))
FOLD_TARGETS = (np.array([0.08, 0.0]), np.array([0.04, 0.06]))
FOLD_GRASP_TOL = 0.02
FOLD_RELEASE_TOL = 0.015

DEFAULT_TASKS = {
    # 5 cm x 5 cm analog for the block, smaller regions for the others
    "drawer_place": TaskSpec("drawer_place", 200, (0.20, 0.25), (0.25, 0.30)),
    "lid_box": TaskSpec("lid_box", 300, (0.20, 0.25), (0.23, 0.28)),
    "dual_insert": TaskSpec("dual_insert", 200, (-0.01, -0.01), (0.01, 0.01)),
    "double_fold": TaskSpec("double_fold", 300, (-0.02, -0.02), (0.02, 0.02)),
}

PLUG_BASES = (np.array([0.2, 0.6]), np.array([0.2, 0.4]))
TOWEL_BASE = np.array([0.5, 0.4])


def get_task(task_id: str) -> TaskSpec:
    if task_id not in DEFAULT_TASKS:
        raise ValueError(f"unknown task {task_id!r}")
    return DEFAULT_TASKS[task_id]


def load_tasks(path) -> dict:
    """Task table from a YAML file; unspecified fields fall back to defaults.

    Schema: ``{task_id: {horizon: int, init_lo: [x, y], init_hi: [x, y],
    insert_tol: float}}``.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    out = dict(DEFAULT_TASKS)
    for task_id, fields in raw.items():
        base = get_task(task_id)
        out[task_id] = replace(
            base,
            horizon=int(fields.get("horizon", base.horizon)),
            init_lo=np.asarray(fields.get("init_lo", base.init_lo), dtype=np.float64),
            init_hi=np.asarray(fields.get("init_hi", base.init_hi), dtype=np.float64),
            insert_tol=float(fields.get("insert_tol", base.insert_tol)),
        )
    return out


def drawer_interior(handle_x: float) -> np.ndarray:
    return np.array([handle_x + DRAWER_INTERIOR_DX, DRAWER_Y])


def fold_grasp_point(towel: np.ndarray, folds: int) -> np.ndarray:
    return towel + FOLD_GRASPS[min(folds, 1)]


def fold_target_point(towel: np.ndarray, folds: int) -> np.ndarray:
    return towel + FOLD_TARGETS[min(folds, 1)]


# ---- reset ---------------------------------------------------------------


def reset(task: TaskSpec, seed: int) -> EnvState:
    """Initial state drawn deterministically from `seed`."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, TASK_IDS.index(task.task_id)])
    draw = rng.uniform(task.init_lo, task.init_hi)
    tid = task.task_id
    if tid == "drawer_place":
        objects = np.stack([np.array([DRAWER_X_MAX, DRAWER_Y]), draw])
        latches = np.zeros(1, dtype=np.int64)            # [block_in]
    elif tid == "lid_box":
        objects = np.stack([BOX_POS.copy(), draw])       # [lid, towel]
        latches = np.array([0, 1], dtype=np.int64)       # [towel_in, lid_on]
    elif tid == "dual_insert":
        jitter2 = rng.uniform(task.init_lo, task.init_hi)
        objects = np.stack([PLUG_BASES[0] + draw, PLUG_BASES[1] + jitter2])
        latches = np.zeros(2, dtype=np.int64)            # [seated1, seated2]
    else:  # double_fold
        towel = TOWEL_BASE + draw
        objects = np.stack([towel, fold_grasp_point(towel, 0)])
        latches = np.zeros(1, dtype=np.int64)            # [folds]
    return EnvState(
        ee_pos=np.array([0.1, 0.1]),
        ee_vel=np.zeros(2),
        gripper=GRIP_OPEN,
        objects=objects,
        latches=latches,
        held=-1,
        step_index=0,
    )


# ---- success predicates --------------------------------------------------


def success(state: EnvState, task: TaskSpec) -> bool:
    """Pure predicate over latches and poses."""
    tid = task.task_id
    if tid == "drawer_place":
        return bool(state.latches[0]) and state.objects[0, 0] > DRAWER_CLOSED_X
    if tid == "lid_box":
        return bool(state.latches[0]) and bool(state.latches[1])
    if tid == "dual_insert":
        return bool(state.latches[0]) and bool(state.latches[1])
    return int(state.latches[0]) >= 2


# ---- step ----------------------------------------------------------------


def _graspable(state: EnvState, task: TaskSpec):
    """Indices of objects the gripper may close on, with per-object tolerance."""
    tid = task.task_id
    out = []
    if tid == "drawer_place":
        out.append((0, GRASP_TOL))
        if not state.latches[0]:
            out.append((1, GRASP_TOL))
    elif tid == "lid_box":
        out.append((0, GRASP_TOL))
        if not state.latches[0]:
            out.append((1, GRASP_TOL))
    elif tid == "dual_insert":
        for i in range(2):
            if not state.latches[i]:
                out.append((i, GRASP_TOL))
    else:
        out.append((1, FOLD_GRASP_TOL))
    return out


def _apply_release(state: EnvState, task: TaskSpec):
    """Latch effects of opening the gripper while holding object `state.held`."""
    tid = task.task_id
    idx = state.held
    state.held = -1
    if tid == "drawer_place" and idx == 1:
        interior = drawer_interior(state.objects[0, 0])
        if (state.objects[0, 0] < DRAWER_OPEN_X
                and np.linalg.norm(state.objects[1] - interior) < DRAWER_INTERIOR_TOL):
            state.latches[0] = 1
    elif tid == "lid_box" and idx == 1:
        lid_on = np.linalg.norm(state.objects[0] - BOX_POS) < BOX_TOL
        if np.linalg.norm(state.objects[1] - BOX_POS) < BOX_TOL and not lid_on:
            state.latches[0] = 1
            state.objects[1] = BOX_POS.copy()
    elif tid == "dual_insert":
        if np.linalg.norm(state.objects[idx] - SOCKETS[idx]) < task.insert_tol:
            state.latches[idx] = 1
            state.objects[idx] = SOCKETS[idx].copy()
    elif tid == "double_fold" and idx == 1:
        folds = int(state.latches[0])
        target = fold_target_point(state.objects[0], folds)
        if np.linalg.norm(state.ee_pos - target) < FOLD_RELEASE_TOL:
            state.latches[0] = folds + 1
        # grasp handle snaps back to the (possibly next) fold's press point
        state.objects[1] = fold_grasp_point(state.objects[0], int(state.latches[0]))


def step(state: EnvState, arm: ArmAction, grip: GripperAction, task: TaskSpec):
    """One environment tick; returns (next_state, reward, done)."""
    if state.succeeded or state.step_index >= task.horizon:
        raise ContractError("step() called on a terminal state")

    s = state.copy()
    tid = task.task_id

    # kinematic update with wall clamping
    new_pos = np.clip(s.ee_pos + STEP_SCALE * arm.delta, 0.0, 1.0)
    s.ee_vel = new_pos - s.ee_pos
    s.ee_pos = new_pos

    # held object follows the end-effector
    if s.held >= 0:
        if tid == "drawer_place" and s.held == 0:
            s.objects[0, 0] = np.clip(s.ee_pos[0], DRAWER_X_MIN, DRAWER_X_MAX)
            s.objects[0, 1] = DRAWER_Y
        else:
            s.objects[s.held] = s.ee_pos.copy()

    # gripper transition at the new position
    mode = grip.mode
    if mode == GRIP_CLOSED and s.held < 0:
        best, best_d = -1, np.inf
        for idx, tol in _graspable(s, task):
            d = np.linalg.norm(s.ee_pos - s.objects[idx])
            if d < tol and d < best_d:
                best, best_d = idx, d
        s.held = best
    elif mode == GRIP_OPEN and s.held >= 0:
        _apply_release(s, task)
    if mode != GRIP_HOLD:
        s.gripper = mode

    # derived latches
    if tid == "drawer_place" and s.latches[0] and s.held != 1:
        s.objects[1] = drawer_interior(s.objects[0, 0])
    elif tid == "lid_box":
        lid_on = s.held != 0 and np.linalg.norm(s.objects[0] - BOX_POS) < BOX_TOL
        s.latches[1] = int(lid_on)
    elif tid == "double_fold" and s.held != 1:
        s.objects[1] = fold_grasp_point(s.objects[0], int(s.latches[0]))

    s.step_index += 1
    reward = 0.0
    if not s.succeeded and success(s, task):
        s.succeeded = True
        reward = 1.0
    done = s.succeeded or s.step_index >= task.horizon
    return s, reward, done


# ---- observation vectors -------------------------------------------------


def obs_dim(task: TaskSpec) -> int:
    return observe(reset(task, 0), task).size


def observe(state: EnvState, task: TaskSpec) -> np.ndarray:
    """Flat float observation: pose, velocity, gripper, objects, held, latches."""
    grip = np.zeros(3)
    grip[state.gripper] = 1.0
    k = state.objects.shape[0]
    held = np.zeros(k + 1)
    held[state.held + 1] = 1.0
    return np.concatenate([
        state.ee_pos,
        state.ee_vel / STEP_SCALE,
        grip,
        state.objects.reshape(-1),
        held,
        state.latches.astype(np.float64),
    ])
