"""Deterministic planar simulators with exact snapshot/restore.

Two task families: a point-reach environment (drawing analog, the agent IS
the gripper point) and a box-push environment (a gripper disc pushing a
square box quasi-statically). Both live in the workspace [-1, 1]^2 meters,
have per-component action caps, and restore bit-exactly from snapshots.
A wrapper perturbs the action channel to emulate the dynamics gap between
a training simulator and the deployment environment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SnapshotMismatchError, ValidationError

WORKSPACE_HALF = 1.0
REACH_ACTION_CAP = 0.04
PUSH_ACTION_CAP = 0.03
GRIPPER_RADIUS = 0.02
BOX_HALF = 0.03            # square box, side 0.06 m
BOX_START = (0.1, 0.0)
YAW_PER_LEVER = 0.5        # rad of box rotation per meter of tangential lever arm


@dataclass(frozen=True)
class EnvSnapshot:
    """Complete simulator state; sufficient for bit-exact restore."""

    family: str
    gripper_pos: tuple
    step_index: int
    box_pos: tuple | None = None
    box_yaw: float | None = None


@dataclass(frozen=True)
class TaskSet:
    """Absolute 2-D goal points, one per pre-training task."""

    goals: np.ndarray

    def __post_init__(self):
        goals = np.asarray(self.goals, dtype=np.float64)
        if goals.ndim != 2 or goals.shape[1] != 2:
            raise ValidationError("goals must be a list of 2-D points")
        if len(np.unique(goals, axis=0)) < 2:
            raise ValidationError("goals must contain at least 2 distinct points")
        if np.abs(goals).max() > WORKSPACE_HALF:
            raise ValidationError("goals must lie within the workspace")
        goals.flags.writeable = False
        object.__setattr__(self, "goals", goals)

    @property
    def n_tasks(self) -> int:
        return self.goals.shape[0]


@dataclass(frozen=True)
class PerturbationSpec:
    """Action-channel dynamics perturbation: a -> gain * R(rotation) a + bias.

    friction_scale rescales the pusher's contact yaw coupling (reach envs
    have no friction and ignore it).
    """

    action_gain: float = 1.0
    action_rotation: float = 0.0
    action_bias: tuple = (0.0, 0.0)
    friction_scale: float = 1.0

    def validate(self):
        if not (0.0 < self.action_gain <= 2.0):
            raise ValidationError("action_gain must be in (0, 2]")
        if abs(self.action_rotation) > math.pi / 4:
            raise ValidationError("action_rotation must be within [-pi/4, pi/4]")
        bias = np.asarray(self.action_bias, dtype=np.float64)
        if bias.shape != (2,) or not np.isfinite(bias).all():
            raise ValidationError("action_bias must be a finite 2-D vector")
        if not (self.friction_scale > 0.0 and math.isfinite(self.friction_scale)):
            raise ValidationError("friction_scale must be > 0")
        return self


def default_goals(family: str) -> np.ndarray:
    """Built-in pre-training goal sets.

    reach: corners of a 0.4 m square around the start.
    push: box targets 0.2 m up/down/left/right of the box start.
    """
    if family == "reach":
        return np.array([[0.2, 0.2], [-0.2, 0.2], [-0.2, -0.2], [0.2, -0.2]])
    if family == "push":
        bx, by = BOX_START
        return np.array([[bx, by + 0.2], [bx, by - 0.2], [bx - 0.2, by], [bx + 0.2, by]])
    raise ValidationError("env must be 'reach' or 'push'")


def _check_action(action) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape != (2,):
        raise ValueError("action must be a 2-D displacement")
    if not np.isfinite(a).all():
        raise ValueError("action must be finite")
    return a


class ReachEnv:
    """Point gripper moving by capped displacements; observation is its position."""

    family = "reach"
    obs_dim = 2
    action_dim = 2
    action_cap = REACH_ACTION_CAP

    def __init__(self, tasks: TaskSet):
        self.tasks = tasks
        self._gripper = np.zeros(2)
        self._step_index = 0

    @property
    def n_tasks(self) -> int:
        return self.tasks.n_tasks

    def reset(self, rng=None) -> np.ndarray:
        self._gripper = np.zeros(2)
        self._step_index = 0
        return self.observe()

    def observe(self) -> np.ndarray:
        return self._gripper.copy()

    def step(self, action) -> np.ndarray:
        a = np.clip(_check_action(action), -self.action_cap, self.action_cap)
        self._gripper = np.clip(self._gripper + a, -WORKSPACE_HALF, WORKSPACE_HALF)
        self._step_index += 1
        return self.observe()

    def task_reward(self, task, obs, action=None) -> float:
        goal = self.tasks.goals[task] if isinstance(task, (int, np.integer)) else np.asarray(task, dtype=np.float64)
        achieved = self.entity_position(obs, "gripper")
        return -float(np.linalg.norm(achieved - goal))

    @staticmethod
    def entity_position(obs, entity: str) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if entity != "gripper":
            raise ValueError(f"reach env has no entity '{entity}'")
        return obs[:2]

    def get_state(self) -> EnvSnapshot:
        return EnvSnapshot(family=self.family,
                           gripper_pos=(float(self._gripper[0]), float(self._gripper[1])),
                           step_index=self._step_index)

    def set_state(self, snapshot: EnvSnapshot):
        if snapshot.family != self.family or snapshot.box_pos is not None:
            raise SnapshotMismatchError(f"cannot restore '{snapshot.family}' snapshot into reach env")
        self._gripper = np.array(snapshot.gripper_pos, dtype=np.float64)
        self._step_index = int(snapshot.step_index)


class PushEnv:
    """Gripper disc pushing a square box, quasi-statically (no momentum).

    Step rule, in order: clip the action per component to the cap; move the
    gripper (clamped to the workspace); if the disc now overlaps the box,
    translate the box along the contact normal by exactly the overlap depth,
    rotate it by friction * YAW_PER_LEVER * (signed tangential lever arm of
    the contact point), clamp the box to the workspace, and if clamping left
    residual overlap push the gripper back out instead. The box never moves
    without contact.

    Observation is (box - gripper, box): the relative vector then the box
    center, 4-D.
    """

    family = "push"
    obs_dim = 4
    action_dim = 2
    action_cap = PUSH_ACTION_CAP

    def __init__(self, tasks: TaskSet, friction: float = 1.0):
        self.tasks = tasks
        self.friction = friction
        self._gripper = np.zeros(2)
        self._box = np.array(BOX_START)
        self._yaw = 0.0
        self._step_index = 0

    @property
    def n_tasks(self) -> int:
        return self.tasks.n_tasks

    def reset(self, rng=None) -> np.ndarray:
        self._gripper = np.zeros(2)
        self._box = np.array(BOX_START)
        self._yaw = 0.0
        self._step_index = 0
        return self.observe()

    def observe(self) -> np.ndarray:
        return np.concatenate([self._box - self._gripper, self._box])

    def _penetration(self):
        """Disc/square overlap in the box frame.

        Returns (depth, normal_world, contact_world) or None. The normal
        points from the box surface toward the gripper center; resolving
        moves the box along -normal.
        """
        c, s = math.cos(self._yaw), math.sin(self._yaw)
        rel = self._gripper - self._box
        q = np.array([c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1]])
        closest = np.clip(q, -BOX_HALF, BOX_HALF)
        gap = q - closest
        dist = float(np.linalg.norm(gap))
        if dist >= GRIPPER_RADIUS:
            return None
        if dist > 0.0:
            n_box = gap / dist
            depth = GRIPPER_RADIUS - dist
            contact_box = closest
        else:
            # Disc center inside the square: exit through the nearest face.
            exit_x = BOX_HALF - abs(q[0])
            exit_y = BOX_HALF - abs(q[1])
            if exit_x <= exit_y:
                n_box = np.array([math.copysign(1.0, q[0]), 0.0])
                depth = exit_x + GRIPPER_RADIUS
            else:
                n_box = np.array([0.0, math.copysign(1.0, q[1])])
                depth = exit_y + GRIPPER_RADIUS
            contact_box = q
        rot = np.array([[c, -s], [s, c]])
        return depth, rot @ n_box, self._box + rot @ contact_box

    def step(self, action) -> np.ndarray:
        a = np.clip(_check_action(action), -self.action_cap, self.action_cap)
        self._gripper = np.clip(self._gripper + a, -WORKSPACE_HALF, WORKSPACE_HALF)
        hit = self._penetration()
        if hit is not None:
            depth, n_world, contact = hit
            before = self._box.copy()
            self._box = np.clip(self._box - depth * n_world, -WORKSPACE_HALF, WORKSPACE_HALF)
            moved = self._box - before
            shift = float(np.linalg.norm(moved))
            if shift > 0.0:
                u = moved / shift
                r = contact - before
                lever = r[0] * u[1] - r[1] * u[0]
                self._yaw += self.friction * YAW_PER_LEVER * lever
            residual = self._penetration()
            if residual is not None:
                # Box jammed against the workspace edge; back the gripper out.
                r_depth, r_norm, _ = residual
                self._gripper = np.clip(self._gripper + r_depth * r_norm,
                                        -WORKSPACE_HALF, WORKSPACE_HALF)
        self._step_index += 1
        return self.observe()

    def task_reward(self, task, obs, action=None) -> float:
        goal = self.tasks.goals[task] if isinstance(task, (int, np.integer)) else np.asarray(task, dtype=np.float64)
        achieved = self.entity_position(obs, "box")
        return -float(np.linalg.norm(achieved - goal))

    @staticmethod
    def entity_position(obs, entity: str) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        if entity == "box":
            return obs[2:4]
        if entity == "gripper":
            return obs[2:4] - obs[0:2]
        raise ValueError(f"push env has no entity '{entity}'")

    def get_state(self) -> EnvSnapshot:
        return EnvSnapshot(family=self.family,
                           gripper_pos=(float(self._gripper[0]), float(self._gripper[1])),
                           step_index=self._step_index,
                           box_pos=(float(self._box[0]), float(self._box[1])),
                           box_yaw=float(self._yaw))

    def set_state(self, snapshot: EnvSnapshot):
        if snapshot.family != self.family or snapshot.box_pos is None:
            raise SnapshotMismatchError(f"cannot restore '{snapshot.family}' snapshot into push env")
        self._gripper = np.array(snapshot.gripper_pos, dtype=np.float64)
        self._box = np.array(snapshot.box_pos, dtype=np.float64)
        self._yaw = float(snapshot.box_yaw)
        self._step_index = int(snapshot.step_index)


class PerturbedEnv:
    """Action-channel wrapper emulating the reality gap.

    Every incoming action a becomes gain * R(rotation) a + bias before the
    base env's own clipping; observation and state pass through untouched,
    so snapshots transfer between the perturbed and clean environments.
    """

    def __init__(self, base, spec: PerturbationSpec):
        spec.validate()
        self.base = base
        self.spec = spec
        c, s = math.cos(spec.action_rotation), math.sin(spec.action_rotation)
        self._rot = np.array([[c, -s], [s, c]])
        self._bias = np.asarray(spec.action_bias, dtype=np.float64)
        if isinstance(base, PushEnv):
            base.friction = base.friction * spec.friction_scale

    # state and observation interface passes through
    @property
    def family(self):
        return self.base.family

    @property
    def obs_dim(self):
        return self.base.obs_dim

    @property
    def action_dim(self):
        return self.base.action_dim

    @property
    def action_cap(self):
        return self.base.action_cap

    @property
    def tasks(self):
        return self.base.tasks

    @property
    def n_tasks(self):
        return self.base.n_tasks

    def reset(self, rng=None):
        return self.base.reset(rng)

    def observe(self):
        return self.base.observe()

    def step(self, action):
        a = _check_action(action)
        return self.base.step(self.spec.action_gain * (self._rot @ a) + self._bias)

    def task_reward(self, task, obs, action=None):
        return self.base.task_reward(task, obs, action)

    def entity_position(self, obs, entity):
        return self.base.entity_position(obs, entity)

    def get_state(self):
        return self.base.get_state()

    def set_state(self, snapshot):
        self.base.set_state(snapshot)


def wrap_perturbed(env, spec: PerturbationSpec) -> PerturbedEnv:
    return PerturbedEnv(env, spec)


def make_env(family: str, tasks: TaskSet | None = None):
    if tasks is None:
        tasks = TaskSet(default_goals(family))
    if family == "reach":
        return ReachEnv(tasks)
    if family == "push":
        return PushEnv(tasks)
    raise ValidationError("env must be 'reach' or 'push'")
