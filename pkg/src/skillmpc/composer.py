"""Zero-shot skill composition by model-predictive control in latent space.

An unseen sequencing task (ordered waypoints for the gripper or the box) is
solved without any further training: each planning round samples candidate
latents from the mixture of all task embeddings, scores every candidate by
rolling the frozen policy forward in a simulator synchronized to the real
environment's state, and executes the best latent on the real environment
for a short horizon. Rounds repeat until every waypoint has been visited or
the latent-choice budget runs out.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .embedding import SkillCheckpoint, policy_action, sample_task
from .errors import ValidationError
from .numerics import MlpParams, gaussian_sample, mlp_forward


@dataclass(frozen=True)
class MpcConfig:
    """Planning-loop knobs: candidates per round, horizons, and budget.

    The spirit of the horizon rule is that lookahead should not run far
    beyond what actually gets executed: exec_horizon < sim_horizon and, by
    default, sim_horizon at most twice exec_horizon. enforce_horizon_rule
    relaxes only the upper bound for configurations that deliberately plan
    deeper.
    """

    n_candidates: int = 15
    sim_horizon: int = 4
    exec_horizon: int = 2
    gamma: float = 0.99
    max_latent_choices: int = 100
    enforce_horizon_rule: bool = True
    use_mean_actions: bool = False
    advance_during_eval: bool = False

    def validate(self):
        if self.n_candidates < 1:
            raise ValidationError("n_candidates must be >= 1")
        if self.exec_horizon < 1:
            raise ValidationError("exec_horizon must be >= 1")
        if self.sim_horizon <= self.exec_horizon:
            raise ValidationError("sim_horizon must exceed exec_horizon")
        if self.enforce_horizon_rule and self.sim_horizon > 2 * self.exec_horizon:
            raise ValidationError("sim_horizon must be at most twice exec_horizon")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValidationError("gamma must be in [0, 1]")
        if self.max_latent_choices < 1:
            raise ValidationError("max_latent_choices must be >= 1")
        return self


@dataclass(frozen=True)
class SequenceTaskSpec:
    """An unseen task: visit 2-D waypoints in order, within a tolerance ball.

    target_entity picks which body must do the visiting: the gripper point
    or (push family only) the box center.
    """

    waypoints: np.ndarray
    tolerance: float = 0.02
    target_entity: str = "gripper"

    def __post_init__(self):
        pts = np.asarray(self.waypoints, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ValidationError("waypoints must be a non-empty list of 2-D points")
        if not np.isfinite(pts).all():
            raise ValidationError("waypoints must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "waypoints", pts)
        if not (self.tolerance > 0.0):
            raise ValidationError("tolerance must be > 0")
        if self.target_entity not in ("gripper", "box"):
            raise ValidationError("target_entity must be 'gripper' or 'box'")

    @property
    def n_waypoints(self) -> int:
        return self.waypoints.shape[0]


@dataclass(frozen=True)
class LatentEvaluation:
    """One candidate's simulated lookahead: the latent, its discounted
    return, and the simulated observation trajectory for logging."""

    latent: np.ndarray
    value: float
    trajectory: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("evaluation return must be finite")


@dataclass(frozen=True)
class StepRow:
    """One executed real-environment step of a composition."""

    round_index: int
    step_index: int
    gripper: tuple
    box: tuple | None
    latent_index: int
    latent: np.ndarray
    reward: float
    progress: int


@dataclass(frozen=True)
class RoundRecord:
    """One planning round: all candidates, their returns, and the winner."""

    round_index: int
    latents: np.ndarray
    returns: np.ndarray
    chosen: int


@dataclass(frozen=True)
class ComposeResult:
    rows: tuple
    rounds: tuple
    completed: bool
    total_steps: int
    final_progress: int
    wall_time_s: float

    @property
    def latent_choices(self) -> int:
        return len(self.rounds)


def achieved_position(spec: SequenceTaskSpec, obs) -> np.ndarray:
    """Position of the spec's target entity, read off the observation layout."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape == (2,):
        if spec.target_entity != "gripper":
            raise ValueError("target_entity 'box' needs the push observation layout")
        return obs
    if obs.shape == (4,):
        box = obs[2:4]
        return box if spec.target_entity == "box" else box - obs[0:2]
    raise ValueError(f"unrecognized observation shape {obs.shape}")


def sample_candidates(embedding: MlpParams, n_tasks: int, k: int,
                      rng: np.random.Generator) -> np.ndarray:
    """k latents from the task mixture: t ~ uniform, then z ~ p(z|t)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    eye = np.eye(n_tasks)
    latents = []
    for _ in range(k):
        task_id = sample_task(rng, n_tasks)
        latents.append(gaussian_sample(mlp_forward(embedding, eye[task_id]), rng))
    return np.stack(latents)


def current_reward(spec: SequenceTaskSpec, progress: int, obs, action=None) -> float:
    """Negative Euclidean distance from the target entity to the current
    waypoint."""
    if progress >= spec.n_waypoints:
        raise ValueError(f"progress {progress} is past the last waypoint")
    achieved = achieved_position(spec, obs)
    return -float(np.linalg.norm(achieved - spec.waypoints[progress]))


def advance_progress(spec: SequenceTaskSpec, progress: int, obs) -> int:
    """Advance past every waypoint the entity currently covers.

    A waypoint counts as visited inside the closed tolerance ball (distance
    <= tolerance), and several coincident waypoints can be consumed at once.
    """
    achieved = achieved_position(spec, obs)
    while (progress < spec.n_waypoints
           and np.linalg.norm(achieved - spec.waypoints[progress]) <= spec.tolerance):
        progress += 1
    return progress


def evaluate_latent(sim_env, policy: MlpParams, z, snapshot, spec: SequenceTaskSpec,
                    progress: int, cfg: MpcConfig, rng) -> LatentEvaluation:
    """Score one latent by a simulated rollout from the real state.

    Restores the snapshot, runs the frozen policy under z for sim_horizon
    steps, and accumulates sum_j gamma^j * reward(s_{j+1}). By default the
    target waypoint is held fixed for the whole lookahead; with
    cfg.advance_during_eval the simulated rollout advances waypoints too,
    with zero reward once all are consumed.
    """
    sim_env.set_state(snapshot)
    obs = sim_env.observe()
    trajectory = np.empty((cfg.sim_horizon, obs.shape[0]))
    local = progress
    total = 0.0
    discount = 1.0
    for j in range(cfg.sim_horizon):
        action = policy_action(policy, obs, z, rng, use_mean=cfg.use_mean_actions)
        obs = sim_env.step(action)
        trajectory[j] = obs
        if cfg.advance_during_eval:
            local = advance_progress(spec, local, obs)
        reward = 0.0 if local >= spec.n_waypoints else current_reward(spec, local, obs, action)
        total += discount * reward
        discount *= cfg.gamma
    return LatentEvaluation(latent=np.asarray(z, dtype=np.float64), value=total,
                            trajectory=trajectory)


def select_latent(evals) -> int:
    """Index of the highest-return evaluation; ties go to the lowest index."""
    if len(evals) == 0:
        raise ValueError("no candidate evaluations to select from")
    return int(np.argmax([e.value for e in evals]))


def _check_compatible(real_env, sim_env, ckpt: SkillCheckpoint, spec: SequenceTaskSpec):
    if real_env.family != ckpt.env_family:
        raise ValidationError(
            f"checkpoint env '{ckpt.env_family}' mismatches real env '{real_env.family}'")
    if sim_env.family != real_env.family:
        raise ValidationError(
            f"sim env '{sim_env.family}' mismatches real env '{real_env.family}'")
    if spec.target_entity == "box" and real_env.family != "push":
        raise ValidationError("target_entity 'box' requires the push env")


def _execute_latent(real_env, ckpt, z, spec, cfg, exec_rng, n_steps,
                    round_index, latent_index, step_offset, progress, rows):
    """Run one chosen latent on the real env, logging each step.

    Rewards are measured against the pre-advance waypoint; progress then
    updates from the real observation. Stops early on completion. Returns
    (progress, steps_taken, last_obs).
    """
    obs = real_env.observe()
    steps = 0
    for _ in range(n_steps):
        action = policy_action(ckpt.policy, obs, z, exec_rng, use_mean=cfg.use_mean_actions)
        obs = real_env.step(action)
        reward = current_reward(spec, progress, obs, action)
        progress = advance_progress(spec, progress, obs)
        gripper = real_env.entity_position(obs, "gripper")
        box = real_env.entity_position(obs, "box") if real_env.family == "push" else None
        rows.append(StepRow(
            round_index=round_index, step_index=step_offset + steps,
            gripper=(float(gripper[0]), float(gripper[1])),
            box=None if box is None else (float(box[0]), float(box[1])),
            latent_index=latent_index, latent=np.asarray(z, dtype=np.float64),
            reward=reward, progress=progress))
        steps += 1
        if progress >= spec.n_waypoints:
            break
    return progress, steps, obs


def compose(real_env, sim_env, ckpt: SkillCheckpoint, spec: SequenceTaskSpec,
            cfg: MpcConfig, rng: np.random.Generator) -> ComposeResult:
    """The outer MPC loop over latent choices.

    Per round: snapshot the real env, draw n_candidates latents from the
    embedding mixture, score each from that same snapshot in the simulator,
    and execute the argmax latent on the real env for exec_horizon steps.
    Checkpoint parameters are never modified. The rng splits into one
    candidate-sampling stream, one per-candidate evaluation stream (reused
    across rounds so candidate i sees a stable noise sequence), and one
    real-execution stream.

    Budget exhaustion is not an error: the result is returned with
    completed=False.
    """
    start = time.perf_counter()
    cfg.validate()
    _check_compatible(real_env, sim_env, ckpt, spec)
    streams = rng.spawn(cfg.n_candidates + 2)
    cand_rng, exec_rng, eval_rngs = streams[0], streams[1], streams[2:]

    rows = []
    rounds = []
    total_steps = 0
    progress = advance_progress(spec, 0, real_env.observe())
    while progress < spec.n_waypoints and len(rounds) < cfg.max_latent_choices:
        snapshot = real_env.get_state()
        latents = sample_candidates(ckpt.embedding, ckpt.cfg.n_tasks, cfg.n_candidates, cand_rng)
        evals = [evaluate_latent(sim_env, ckpt.policy, latents[i], snapshot, spec,
                                 progress, cfg, eval_rngs[i])
                 for i in range(cfg.n_candidates)]
        chosen = select_latent(evals)
        rounds.append(RoundRecord(round_index=len(rounds), latents=latents,
                                  returns=np.array([e.value for e in evals]),
                                  chosen=chosen))
        progress, steps, _ = _execute_latent(
            real_env, ckpt, latents[chosen], spec, cfg, exec_rng, cfg.exec_horizon,
            rounds[-1].round_index, chosen, total_steps, progress, rows)
        total_steps += steps

    return ComposeResult(rows=tuple(rows), rounds=tuple(rounds),
                         completed=progress >= spec.n_waypoints,
                         total_steps=total_steps, final_progress=progress,
                         wall_time_s=time.perf_counter() - start)


def open_loop_baseline(real_env, sim_env, ckpt: SkillCheckpoint, spec: SequenceTaskSpec,
                       cfg: MpcConfig, rng: np.random.Generator,
                       total_steps: int) -> ComposeResult:
    """Ablation: plan once, then run the single best latent open-loop.

    Candidate sampling and scoring mirror the first compose round (same rng
    split structure, so a shared seed yields the same initial candidates);
    the winner is then executed for total_steps with no replanning.
    """
    start = time.perf_counter()
    cfg.validate()
    _check_compatible(real_env, sim_env, ckpt, spec)
    streams = rng.spawn(cfg.n_candidates + 2)
    cand_rng, exec_rng, eval_rngs = streams[0], streams[1], streams[2:]

    rows = []
    progress = advance_progress(spec, 0, real_env.observe())
    rounds = []
    steps_taken = 0
    if progress < spec.n_waypoints:
        snapshot = real_env.get_state()
        latents = sample_candidates(ckpt.embedding, ckpt.cfg.n_tasks, cfg.n_candidates, cand_rng)
        evals = [evaluate_latent(sim_env, ckpt.policy, latents[i], snapshot, spec,
                                 progress, cfg, eval_rngs[i])
                 for i in range(cfg.n_candidates)]
        chosen = select_latent(evals)
        rounds.append(RoundRecord(round_index=0, latents=latents,
                                  returns=np.array([e.value for e in evals]),
                                  chosen=chosen))
        progress, steps_taken, _ = _execute_latent(
            real_env, ckpt, latents[chosen], spec, cfg, exec_rng, total_steps,
            0, chosen, 0, progress, rows)

    return ComposeResult(rows=tuple(rows), rounds=tuple(rounds),
                         completed=progress >= spec.n_waypoints,
                         total_steps=steps_taken, final_progress=progress,
                         wall_time_s=time.perf_counter() - start)
