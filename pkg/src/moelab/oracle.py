"""Scripted expert policies and the automated intervention trigger.

Each task is expressed as an ordered waypoint program of fetch-and-place
phases: grab an object, carry it to a target, release when a task
predicate is met. The active phase is recomputed from the state alone
(first phase whose completion predicate is false), so the policy is
stateless and recovers from arbitrary mid-task states — which is what
makes it usable as the stand-in for a human taking over mid-episode.

The intervention trigger is an artifact construct, not something the
source problem defines: a scripted controller takes over when the
end-effector stops making progress (or leaves a configured region), for
a fixed handover, within a per-episode budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import envsim
from .envsim import (
    BOX_POS,
    BOX_TOL,
    DRAWER_CLOSED_X,
    DRAWER_OPEN_X,
    DRAWER_Y,
    FOLD_GRASP_TOL,
    FOLD_RELEASE_TOL,
    GRASP_TOL,
    GRIP_CLOSED,
    GRIP_HOLD,
    GRIP_OPEN,
    LID_OFF_DIST,
    SOCKETS,
    STEP_SCALE,
    ArmAction,
    EnvState,
    GripperAction,
    TaskSpec,
    drawer_interior,
    fold_target_point,
)

LID_REST = np.array([0.4, 0.88])

# keep commanded deltas strictly inside (-1, 1): saturated targets make the
# squashed-Gaussian imitation losses ill-conditioned
DELTA_LIMIT = 0.98


@dataclass
class Phase:
    """One fetch-and-place skill of a waypoint program."""

    name: str
    done: Callable[[EnvState], bool]
    obj: int                                      # object to hold
    place: Callable[[EnvState], np.ndarray]       # carry target for the ee
    release: Callable[[EnvState], bool]           # open the gripper when true
    grasp_tol: float = GRASP_TOL
    noise_ok: bool = True                         # coarse approach may be noised


def _drawer_program() -> list:
    return [
        Phase(
            "open_drawer",
            done=lambda s: s.objects[0, 0] < DRAWER_OPEN_X or bool(s.latches[0]),
            obj=0,
            place=lambda s: np.array([DRAWER_OPEN_X - 0.04, DRAWER_Y]),
            release=lambda s: s.objects[0, 0] < DRAWER_OPEN_X - 0.01,
        ),
        Phase(
            "place_block",
            done=lambda s: bool(s.latches[0]),
            obj=1,
            place=lambda s: drawer_interior(s.objects[0, 0]),
            release=lambda s: (
                s.objects[0, 0] < DRAWER_OPEN_X
                and np.linalg.norm(s.objects[1] - drawer_interior(s.objects[0, 0]))
                < 0.5 * envsim.DRAWER_INTERIOR_TOL
            ),
        ),
        Phase(
            "close_drawer",
            done=lambda s: s.objects[0, 0] > DRAWER_CLOSED_X,
            obj=0,
            place=lambda s: np.array([DRAWER_CLOSED_X + 0.05, DRAWER_Y]),
            release=lambda s: s.objects[0, 0] > DRAWER_CLOSED_X + 0.01,
        ),
    ]


def _lid_program() -> list:
    return [
        Phase(
            "lift_lid",
            done=lambda s: bool(s.latches[0])
            or np.linalg.norm(s.objects[0] - BOX_POS) > LID_OFF_DIST,
            obj=0,
            place=lambda s: LID_REST,
            release=lambda s: np.linalg.norm(s.objects[0] - LID_REST) < 0.03,
        ),
        Phase(
            "drop_towel",
            done=lambda s: bool(s.latches[0]),
            obj=1,
            place=lambda s: BOX_POS,
            release=lambda s: np.linalg.norm(s.objects[1] - BOX_POS) < 0.6 * BOX_TOL,
        ),
        Phase(
            "replace_lid",
            done=lambda s: bool(s.latches[1]),
            obj=0,
            place=lambda s: BOX_POS,
            release=lambda s: np.linalg.norm(s.objects[0] - BOX_POS) < 0.6 * BOX_TOL,
        ),
    ]


def _insert_program(task: TaskSpec) -> list:
    phases = []
    for i in range(2):
        phases.append(Phase(
            f"seat_plug_{i}",
            done=lambda s, i=i: bool(s.latches[i]),
            obj=i,
            place=lambda s, i=i: SOCKETS[i],
            release=lambda s, i=i: np.linalg.norm(s.objects[i] - SOCKETS[i])
            < 0.6 * task.insert_tol,
            noise_ok=False,
        ))
    return phases


def _fold_program() -> list:
    phases = []
    for i in range(2):
        phases.append(Phase(
            f"fold_{i}",
            done=lambda s, i=i: int(s.latches[0]) > i,
            obj=1,
            place=lambda s: fold_target_point(s.objects[0], int(s.latches[0])),
            release=lambda s: np.linalg.norm(
                s.ee_pos - fold_target_point(s.objects[0], int(s.latches[0]))
            ) < 0.6 * FOLD_RELEASE_TOL,
            grasp_tol=FOLD_GRASP_TOL,
            noise_ok=False,
        ))
    return phases


@dataclass
class OraclePolicy:
    task: TaskSpec
    noise_scale: float = 0.0
    program: list = field(default=None)

    def __post_init__(self):
        if self.program is None:
            builders = {
                "drawer_place": _drawer_program,
                "lid_box": _lid_program,
                "dual_insert": lambda: _insert_program(self.task),
                "double_fold": _fold_program,
            }
            self.program = builders[self.task.task_id]()

    def active_phase(self, state: EnvState) -> Optional[Phase]:
        for phase in self.program:
            if not phase.done(state):
                return phase
        return None


def _toward(ee: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.clip((target - ee) / STEP_SCALE, -DELTA_LIMIT, DELTA_LIMIT)


def oracle_act(policy: OraclePolicy, state: EnvState, rng=None):
    """Proportional step toward the active phase's goal.

    Returns (ArmAction, GripperAction, flag) where the flag reports that no
    phase applied (task already solved from the oracle's point of view) and
    the policy is holding position.
    """
    phase = policy.active_phase(state)
    if phase is None:
        return ArmAction(np.zeros(2)), GripperAction(GRIP_HOLD), True

    if state.held == phase.obj:
        target = phase.place(state)
        if phase.release(state):
            return ArmAction(np.zeros(2)), GripperAction(GRIP_OPEN), False
        grip = GRIP_HOLD
    else:
        if state.held >= 0:
            # wrong object in hand: let go before re-targeting
            return ArmAction(np.zeros(2)), GripperAction(GRIP_OPEN), False
        target = state.objects[phase.obj].copy()
        near = np.linalg.norm(state.ee_pos - target) < 0.6 * phase.grasp_tol
        grip = GRIP_CLOSED if near else GRIP_OPEN

    if rng is not None and policy.noise_scale > 0 and phase.noise_ok:
        far = np.linalg.norm(state.ee_pos - target) > 2 * phase.grasp_tol
        if far:
            target = target + rng.normal(0.0, policy.noise_scale, size=2)
    return ArmAction(_toward(state.ee_pos, target)), GripperAction(grip), False


# ---- intervention trigger --------------------------------------------------

TRIGGER_OFF = "off"
TRIGGER_STUCK = "stuck"
TRIGGER_OUT_OF_REGION = "out_of_region"


@dataclass
class InterventionRule:
    trigger: str = TRIGGER_STUCK
    stuck_steps: int = 15          # k: window without pose progress
    stuck_eps: float = 0.005       # pose-progress threshold
    region_dist: float = 0.4       # out_of_region: max distance to oracle goal
    max_per_episode: int = 3
    handover: int = 10             # steps the oracle retains control

    def __post_init__(self):
        if self.trigger not in (TRIGGER_OFF, TRIGGER_STUCK, TRIGGER_OUT_OF_REGION):
            raise ValueError(f"unknown trigger {self.trigger!r}")
        if self.stuck_steps < 1 or self.region_dist <= 0:
            raise ValueError("k >= 1 and d > 0 required")


def maybe_intervene(rule: InterventionRule, history, state: EnvState,
                    used: int = 0, policy: Optional[OraclePolicy] = None) -> str:
    """'take_over' iff the rule's trigger fires and budget remains.

    `history` is the recent end-effector track (most recent last).
    """
    if rule.trigger == TRIGGER_OFF or used >= rule.max_per_episode:
        return "none"
    if rule.trigger == TRIGGER_STUCK:
        if len(history) < rule.stuck_steps:
            return "none"
        window = np.asarray(history[-rule.stuck_steps:])
        if policy is not None:
            # progress means closing in on the scripted helper's current
            # goal; a policy that keeps moving but only meanders still
            # counts as stuck
            phase = policy.active_phase(state)
            if phase is None:
                return "none"
            target = (phase.place(state) if state.held == phase.obj
                      else state.objects[phase.obj])
            gained = (np.linalg.norm(window[0] - target)
                      - np.linalg.norm(state.ee_pos - target))
            return "take_over" if gained < rule.stuck_eps else "none"
        spread = np.max(np.linalg.norm(window - window[-1], axis=-1))
        return "take_over" if spread < rule.stuck_eps else "none"
    # out_of_region: too far from the oracle's current goal
    if policy is None:
        return "none"
    phase = policy.active_phase(state)
    if phase is None:
        return "none"
    target = phase.place(state) if state.held == phase.obj else state.objects[phase.obj]
    return "take_over" if np.linalg.norm(state.ee_pos - target) > rule.region_dist else "none"


class InterventionController:
    """Per-episode bookkeeping around `maybe_intervene`.

    While a handover is active the oracle's actions replace the policy's
    and the emitted transitions must be flagged as intervened.
    """

    def __init__(self, rule: InterventionRule, policy: OraclePolicy):
        self.rule = rule
        self.policy = policy
        self.used = 0
        self.remaining = 0
        self.history = []
        self._goal_key = None

    def overriding(self) -> bool:
        return self.remaining > 0

    def observe(self, state: EnvState) -> bool:
        """Record the new state; returns True when control is (still) taken."""
        # the helper's goal jumps when a phase completes or the object is
        # grabbed; progress across that jump is meaningless, so the
        # trigger window restarts
        phase = self.policy.active_phase(state)
        key = None if phase is None else (phase.name, state.held == phase.obj)
        if key != self._goal_key:
            self._goal_key = key
            self.history.clear()
        self.history.append(state.ee_pos.copy())
        if self.remaining > 0:
            self.remaining -= 1
            if self.remaining > 0:
                return True
        decision = maybe_intervene(self.rule, self.history, state,
                                   used=self.used, policy=self.policy)
        if decision == "take_over":
            self.used += 1
            self.remaining = self.rule.handover
            self.history.clear()
            return True
        return False

    def act(self, state: EnvState, rng=None):
        arm, grip, _ = oracle_act(self.policy, state, rng=rng)
        return arm, grip
