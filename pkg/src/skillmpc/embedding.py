"""Joint training of the latent-conditioned skill machinery.

Three networks are learned together from multi-task rollouts:

* a policy acting on (observation, latent) pairs,
* a skill embedding mapping a one-hot task id to a latent distribution
  (sampled once per rollout, so every step of an episode shares one z),
* an inference network predicting that latent from a sliding window of
  observations.

The policy and embedding are optimized with a clipped-surrogate policy
gradient on an augmented reward: the env reward plus an embedding-entropy
bonus, the inference network's log-likelihood of the episode latent, and a
policy-entropy bonus. The inference network is regressed separately on
(window, latent) pairs with a Gaussian cross-entropy loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .numerics import (
    LOG_STD_MIN,
    AdamState,
    DiagGaussian,
    MlpParams,
    adam_init,
    adam_step,
    entropy_batch,
    gaussian_entropy,
    gaussian_log_prob,
    gaussian_sample,
    init_mlp,
    log_prob_batch,
    log_prob_grads,
    mlp_backward,
    mlp_forward,
    mlp_forward_batch,
)

CHECKPOINT_VERSION = 1

_OBS_DIMS = {"reach": 2, "push": 4}
_ACTION_DIMS = {"reach": 2, "push": 2}


@dataclass(frozen=True)
class EmbedConfig:
    """Hyperparameters of the embedding-training stage."""

    n_tasks: int
    latent_dim: int = 2
    window_len: int = 5
    alpha1: float = 0.01   # embedding-entropy bonus weight
    alpha2: float = 0.1    # inference log-likelihood bonus weight
    alpha3: float = 0.01   # policy-entropy bonus weight
    gamma: float = 0.99
    episode_horizon: int = 100
    episodes_per_iter: int = 20
    iterations: int = 300
    clip_ratio: float = 0.2
    epochs: int = 8
    policy_lr: float = 3e-4
    embed_lr: float = 3e-4
    inference_lr: float = 1e-3
    policy_hidden: tuple = (64, 64)
    embed_hidden: tuple = (64, 64)
    inference_hidden: tuple = (64, 64)

    def validate(self):
        if self.n_tasks < 1:
            raise ValidationError("n_tasks must be >= 1")
        if self.latent_dim < 1:
            raise ValidationError("latent_dim must be >= 1")
        if self.window_len < 1:
            raise ValidationError("window_len must be >= 1")
        for name in ("alpha1", "alpha2", "alpha3"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if not (0.0 < self.gamma <= 1.0):
            raise ValidationError("gamma must be in (0, 1]")
        if self.episode_horizon < 1:
            raise ValidationError("episode_horizon must be >= 1")
        if self.episodes_per_iter < 1 or self.episodes_per_iter % self.n_tasks != 0:
            raise ValidationError("episodes_per_iter must be a positive multiple of n_tasks")
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")
        if not (0.0 < self.clip_ratio < 1.0):
            raise ValidationError("clip_ratio must be in (0, 1)")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        for name in ("policy_lr", "embed_lr", "inference_lr"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")
        for name in ("policy_hidden", "embed_hidden", "inference_hidden"):
            sizes = getattr(self, name)
            if len(sizes) < 1 or any(int(s) <= 0 for s in sizes):
                raise ValidationError(f"{name} must be positive layer widths")
        return self


@dataclass(frozen=True)
class RolloutBatch:
    """Stacked on-policy episodes, all collected under one parameter snapshot.

    Per-episode fields are indexed [episode]; per-step fields [episode, step].
    states[e, i] is the observation the i-th action was taken from, and
    windows[e, i] the window_len most recent states up to and including it,
    front-padded by repeating the initial state.
    """

    task_ids: np.ndarray       # (E,)       int
    latents: np.ndarray        # (E, d_z)
    latent_log_probs: np.ndarray   # (E,)   behavior log p(z|t)
    states: np.ndarray         # (E, T, obs_dim)
    actions: np.ndarray        # (E, T, act_dim)
    env_rewards: np.ndarray    # (E, T)
    action_log_probs: np.ndarray   # (E, T) behavior log pi(a|s,z)
    policy_entropies: np.ndarray   # (E, T) behavior-policy entropies
    windows: np.ndarray        # (E, T, window_len * obs_dim)

    @property
    def n_episodes(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class SkillCheckpoint:
    """Versioned bundle of the three trained networks plus their config."""

    env_family: str
    goals: np.ndarray
    cfg: EmbedConfig
    policy: MlpParams
    embedding: MlpParams
    inference: MlpParams
    iteration: int
    seed: int
    rng_lineage: str
    format_version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        if self.env_family not in _OBS_DIMS:
            raise ValidationError("env must be 'reach' or 'push'")
        goals = np.asarray(self.goals, dtype=np.float64)
        goals.flags.writeable = False
        object.__setattr__(self, "goals", goals)
        cfg = self.cfg
        if goals.shape != (cfg.n_tasks, 2):
            raise ValidationError(
                f"goal table shape {goals.shape} mismatches n_tasks {cfg.n_tasks}")
        obs_dim = _OBS_DIMS[self.env_family]
        act_dim = _ACTION_DIMS[self.env_family]
        expected = {
            "policy": (self.policy, obs_dim + cfg.latent_dim, act_dim),
            "embedding": (self.embedding, cfg.n_tasks, cfg.latent_dim),
            "inference": (self.inference, cfg.window_len * obs_dim, cfg.latent_dim),
        }
        for name, (params, in_dim, out_dim) in expected.items():
            if params.in_dim != in_dim or params.out_dim != out_dim:
                raise ValidationError(
                    f"{name} network shape {params.layer_sizes} inconsistent with config")

    @property
    def obs_dim(self) -> int:
        return _OBS_DIMS[self.env_family]

    @property
    def action_dim(self) -> int:
        return _ACTION_DIMS[self.env_family]


def one_hot(task_id: int, n_tasks: int) -> np.ndarray:
    v = np.zeros(n_tasks)
    v[task_id] = 1.0
    return v


def sample_task(rng: np.random.Generator, n_tasks: int) -> int:
    """Uniform draw over the task ids {0, ..., n_tasks - 1}."""
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    return int(rng.integers(0, n_tasks))


def build_windows(states: np.ndarray, window_len: int) -> np.ndarray:
    """Sliding windows ending at each step, front-padded with the first state.

    states (T, s) -> (T, window_len * s); row i holds states
    [i-window_len+1 .. i] with negative indices replaced by state 0.
    """
    horizon = states.shape[0]
    offsets = np.arange(window_len - 1, -1, -1)
    idx = np.maximum(np.arange(horizon)[:, None] - offsets[None, :], 0)
    return states[idx].reshape(horizon, -1)


def policy_action(policy: MlpParams, obs, z, rng=None, use_mean: bool = False) -> np.ndarray:
    """Action from the latent-conditioned policy at one state."""
    g = mlp_forward(policy, np.concatenate([np.asarray(obs, float), np.asarray(z, float)]))
    if use_mean:
        return g.mean.copy()
    return gaussian_sample(g, rng)


@dataclass(frozen=True)
class EpisodeRecord:
    task_id: int
    latent: np.ndarray
    latent_log_prob: float
    states: np.ndarray
    actions: np.ndarray
    env_rewards: np.ndarray
    action_log_probs: np.ndarray
    policy_entropies: np.ndarray


def collect_rollout(policy: MlpParams, embedding: MlpParams, env, task_id: int,
                    rng: np.random.Generator, cfg: EmbedConfig) -> EpisodeRecord:
    """One episode under a fixed task id and a single sampled latent.

    The one-hot task id goes through the embedding exactly once; the drawn
    z conditions the policy at every step.
    """
    z_dist = mlp_forward(embedding, one_hot(task_id, cfg.n_tasks))
    z = gaussian_sample(z_dist, rng)
    z_logp = gaussian_log_prob(z_dist, z)

    obs = env.reset(rng)
    horizon = cfg.episode_horizon
    states = np.empty((horizon, env.obs_dim))
    actions = np.empty((horizon, env.action_dim))
    rewards = np.empty(horizon)
    logps = np.empty(horizon)
    entropies = np.empty(horizon)
    for i in range(horizon):
        states[i] = obs
        a_dist = mlp_forward(policy, np.concatenate([obs, z]))
        a = gaussian_sample(a_dist, rng)
        actions[i] = a
        logps[i] = gaussian_log_prob(a_dist, a)
        entropies[i] = gaussian_entropy(a_dist)
        obs = env.step(a)
        rewards[i] = env.task_reward(task_id, obs, a)
    return EpisodeRecord(task_id=task_id, latent=z, latent_log_prob=z_logp,
                         states=states, actions=actions, env_rewards=rewards,
                         action_log_probs=logps, policy_entropies=entropies)


def collect_batch(policy: MlpParams, embedding: MlpParams, env, cfg: EmbedConfig,
                  rng: np.random.Generator) -> RolloutBatch:
    """Collect one training batch, stratified equally across tasks."""
    per_task = cfg.episodes_per_iter // cfg.n_tasks
    episodes = []
    for task_id in range(cfg.n_tasks):
        for _ in range(per_task):
            episodes.append(collect_rollout(policy, embedding, env, task_id, rng, cfg))
    windows = np.stack([build_windows(ep.states, cfg.window_len) for ep in episodes])
    return RolloutBatch(
        task_ids=np.array([ep.task_id for ep in episodes], dtype=np.int64),
        latents=np.stack([ep.latent for ep in episodes]),
        latent_log_probs=np.array([ep.latent_log_prob for ep in episodes]),
        states=np.stack([ep.states for ep in episodes]),
        actions=np.stack([ep.actions for ep in episodes]),
        env_rewards=np.stack([ep.env_rewards for ep in episodes]),
        action_log_probs=np.stack([ep.action_log_probs for ep in episodes]),
        policy_entropies=np.stack([ep.policy_entropies for ep in episodes]),
        windows=windows,
    )


def augmented_reward(batch: RolloutBatch, embedding: MlpParams, inference: MlpParams,
                     cfg: EmbedConfig):
    """Per-step augmented rewards, with the embedding and inference nets
    frozen at their current values.

    r_hat[e, i] = alpha1 * mean-over-tasks embedding entropy
                + alpha2 * log q(z_e | window[e, i])
                + alpha3 * policy entropy at (s_i, z_e)
                + env reward.

    Returns (r_hat, aux) where aux carries the individual terms for metrics.
    """
    n_eps, horizon = batch.env_rewards.shape
    if batch.windows.shape[:2] != (n_eps, horizon) or \
            batch.windows.shape[2] != cfg.window_len * batch.states.shape[2]:
        raise ValueError("window length mismatches the config")

    _, embed_log_stds, _ = mlp_forward_batch(embedding, np.eye(cfg.n_tasks))
    task_entropies = entropy_batch(embed_log_stds)
    mean_embed_entropy = float(task_entropies.mean())

    flat_windows = batch.windows.reshape(n_eps * horizon, -1)
    q_means, q_log_stds, _ = mlp_forward_batch(inference, flat_windows)
    z_per_step = np.repeat(batch.latents, horizon, axis=0)
    log_q = log_prob_batch(q_means, q_log_stds, z_per_step).reshape(n_eps, horizon)

    r_hat = (cfg.alpha1 * mean_embed_entropy
             + cfg.alpha2 * log_q
             + cfg.alpha3 * batch.policy_entropies
             + batch.env_rewards)
    aux = {
        "embed_entropy_per_task": task_entropies,
        "inference_log_prob_mean": float(log_q.mean()),
        "policy_entropy_mean": float(batch.policy_entropies.mean()),
    }
    return r_hat, aux


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Suffix-discounted return-to-go along axis 1."""
    returns = np.empty_like(rewards)
    acc = np.zeros(rewards.shape[0])
    for i in range(rewards.shape[1] - 1, -1, -1):
        acc = rewards[:, i] + gamma * acc
        returns[:, i] = acc
    return returns


def _advantages(batch: RolloutBatch, r_hat: np.ndarray, cfg: EmbedConfig) -> np.ndarray:
    """Return-to-go minus a per-task, per-timestep mean-return baseline,
    then batch-normalized."""
    returns = discounted_returns(r_hat, cfg.gamma)
    adv = np.empty_like(returns)
    for task_id in np.unique(batch.task_ids):
        rows = batch.task_ids == task_id
        adv[rows] = returns[rows] - returns[rows].mean(axis=0)
    std = adv.std()
    if std > 0:
        adv = (adv - adv.mean()) / (std + 1e-8)
    return adv


def ppo_update(policy: MlpParams, embedding: MlpParams, batch: RolloutBatch,
               r_hat: np.ndarray, cfg: EmbedConfig,
               policy_opt: AdamState, embed_opt: AdamState):
    """Clipped-surrogate ascent on the joint policy/embedding objective.

    The importance ratio couples the step's action log-prob with the
    episode latent's log-prob under the embedding, so the surrogate
    gradient reaches both networks. The embedding-entropy bonus is also
    differentiated directly (it is the only r_hat term that depends on
    parameters being updated here).

    Returns (policy, embedding, policy_opt, embed_opt, stats).
    """
    n_eps, horizon = batch.env_rewards.shape
    n_steps = n_eps * horizon
    adv = _advantages(batch, r_hat, cfg).reshape(n_steps)

    obs_flat = batch.states.reshape(n_steps, -1)
    z_flat = np.repeat(batch.latents, horizon, axis=0)
    policy_in = np.concatenate([obs_flat, z_flat], axis=1)
    actions_flat = batch.actions.reshape(n_steps, -1)
    episode_of_step = np.repeat(np.arange(n_eps), horizon)
    behavior_logp = (batch.action_log_probs + batch.latent_log_probs[:, None]).reshape(n_steps)
    task_eye = np.eye(cfg.n_tasks)

    stats = {}
    for _ in range(cfg.epochs):
        a_means, a_log_stds, policy_cache = mlp_forward_batch(policy, policy_in)
        logp_actions = log_prob_batch(a_means, a_log_stds, actions_flat)

        e_means, e_log_stds, embed_cache = mlp_forward_batch(embedding, task_eye)
        ep_means = e_means[batch.task_ids]
        ep_log_stds = e_log_stds[batch.task_ids]
        logp_latents = log_prob_batch(ep_means, ep_log_stds, batch.latents)

        logp_joint = logp_actions + logp_latents[episode_of_step]
        ratio = np.exp(np.clip(logp_joint - behavior_logp, -50.0, 50.0))
        clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
        surr_raw = ratio * adv
        surr_clip = clipped * adv
        objective = float(np.minimum(surr_raw, surr_clip).mean()) \
            + cfg.alpha1 * float(entropy_batch(e_log_stds).mean())
        if not np.isfinite(objective):
            raise RuntimeError(
                f"non-finite surrogate objective (ratio range [{ratio.min()}, {ratio.max()}], "
                f"advantage range [{adv.min()}, {adv.max()}])")

        # d objective / d logp_joint, zero where the clipped branch saturates
        g = np.where(surr_raw <= surr_clip, surr_raw, 0.0) / n_steps

        d_mean_a, d_ls_a = log_prob_grads(a_means, a_log_stds, actions_flat)
        policy_grads = mlp_backward(policy, policy_cache,
                                    -g[:, None] * d_mean_a, -g[:, None] * d_ls_a)
        policy, policy_opt = adam_step(policy_opt, policy, policy_grads)

        g_ep = np.zeros(n_eps)
        np.add.at(g_ep, episode_of_step, g)
        d_mean_z, d_ls_z = log_prob_grads(ep_means, ep_log_stds, batch.latents)
        d_mean_t = np.zeros_like(e_means)
        d_ls_t = np.zeros_like(e_log_stds)
        np.add.at(d_mean_t, batch.task_ids, g_ep[:, None] * d_mean_z)
        np.add.at(d_ls_t, batch.task_ids, g_ep[:, None] * d_ls_z)
        d_ls_t += cfg.alpha1 / cfg.n_tasks   # direct embedding-entropy gradient
        embed_grads = mlp_backward(embedding, embed_cache, -d_mean_t, -d_ls_t)
        embedding, embed_opt = adam_step(embed_opt, embedding, embed_grads)

        stats = {
            "objective": objective,
            "clip_fraction": float((surr_clip < surr_raw).mean()),
            "mean_ratio": float(ratio.mean()),
        }
    return policy, embedding, policy_opt, embed_opt, stats


def inference_update(inference: MlpParams, batch: RolloutBatch, cfg: EmbedConfig,
                     inference_opt: AdamState):
    """Supervised regression of the episode latent from state windows.

    Minimizes the Gaussian cross-entropy -mean log q(z_e | window[e, i]) for
    the configured number of epochs; the policy and embedding are untouched.
    Returns (inference, inference_opt, entry_loss) where entry_loss is the
    loss before this call's updates.
    """
    n_eps, horizon = batch.env_rewards.shape
    n_steps = n_eps * horizon
    flat_windows = batch.windows.reshape(n_steps, -1)
    targets = np.repeat(batch.latents, horizon, axis=0)

    entry_loss = None
    for _ in range(cfg.epochs):
        q_means, q_log_stds, cache = mlp_forward_batch(inference, flat_windows)
        loss = -float(log_prob_batch(q_means, q_log_stds, targets).mean())
        if entry_loss is None:
            entry_loss = loss
        d_mean, d_ls = log_prob_grads(q_means, q_log_stds, targets)
        grads = mlp_backward(inference, cache, -d_mean / n_steps, -d_ls / n_steps)
        inference, inference_opt = adam_step(inference_opt, inference, grads)
    return inference, inference_opt, entry_loss


def init_networks(cfg: EmbedConfig, obs_dim: int, action_dim: int, rng: np.random.Generator):
    """Fresh policy, embedding, and inference networks (in that rng order)."""
    policy = init_mlp(rng, (obs_dim + cfg.latent_dim, *cfg.policy_hidden, 2 * action_dim))
    embedding = init_mlp(rng, (cfg.n_tasks, *cfg.embed_hidden, 2 * cfg.latent_dim))
    inference = init_mlp(rng, (cfg.window_len * obs_dim, *cfg.inference_hidden, 2 * cfg.latent_dim))
    return policy, embedding, inference


def train(cfg: EmbedConfig, env_factory, seed: int,
          metrics_hook=None, batch_hook=None) -> SkillCheckpoint:
    """Full training loop: collect, augment, surrogate-update, regress.

    metrics_hook, if given, receives one dict per iteration; batch_hook
    receives (iteration, batch, r_hat) before the updates. Identical seeds
    produce bit-identical checkpoints.
    """
    cfg.validate()
    env = env_factory()
    if env.n_tasks != cfg.n_tasks:
        raise ValidationError(f"n_tasks {cfg.n_tasks} mismatches the env's {env.n_tasks} goals")

    root = np.random.SeedSequence(seed)
    init_ss, rollout_ss = root.spawn(2)
    lineage = f"root={seed};children=[init,rollout]"
    policy, embedding, inference = init_networks(cfg, env.obs_dim, env.action_dim,
                                                 np.random.default_rng(init_ss))
    policy_opt = adam_init(policy, cfg.policy_lr)
    embed_opt = adam_init(embedding, cfg.embed_lr)
    inference_opt = adam_init(inference, cfg.inference_lr)
    rollout_rng = np.random.default_rng(rollout_ss)

    for iteration in range(cfg.iterations):
        batch = collect_batch(policy, embedding, env, cfg, rollout_rng)
        r_hat, aux = augmented_reward(batch, embedding, inference, cfg)
        if batch_hook is not None:
            batch_hook(iteration, batch, r_hat)
        policy, embedding, policy_opt, embed_opt, ppo_stats = ppo_update(
            policy, embedding, batch, r_hat, cfg, policy_opt, embed_opt)
        inference, inference_opt, inference_loss = inference_update(
            inference, batch, cfg, inference_opt)

        if metrics_hook is not None:
            per_task_return = []
            per_task_final_dist = []
            for task_id in range(cfg.n_tasks):
                rows = batch.task_ids == task_id
                per_task_return.append(float(batch.env_rewards[rows].sum(axis=1).mean()))
                per_task_final_dist.append(float(-batch.env_rewards[rows, -1].mean()))
            metrics_hook({
                "iteration": iteration,
                "task_return": per_task_return,
                "task_final_distance": per_task_final_dist,
                "embed_entropy": [float(h) for h in aux["embed_entropy_per_task"]],
                "policy_entropy": aux["policy_entropy_mean"],
                "inference_loss": inference_loss,
                "inference_log_prob": aux["inference_log_prob_mean"],
                "surrogate_objective": ppo_stats.get("objective"),
                "clip_fraction": ppo_stats.get("clip_fraction"),
            })

    return SkillCheckpoint(env_family=env.family, goals=env.tasks.goals, cfg=cfg,
                           policy=policy, embedding=embedding, inference=inference,
                           iteration=cfg.iterations, seed=seed, rng_lineage=lineage)


# ---------------------------------------------------------------------------
# Post-training evaluation of the embedding criteria.

def entropy_floor(latent_dim: int) -> float:
    """Embedding entropy when every log-std sits at the clamp floor."""
    degenerate = DiagGaussian(np.zeros(latent_dim), np.full(latent_dim, LOG_STD_MIN))
    return gaussian_entropy(degenerate)


def evaluate_policy(ckpt: SkillCheckpoint, env, rollouts_per_task: int,
                    rng: np.random.Generator):
    """Per-task mean return and mean final distance over fresh rollouts."""
    returns = np.zeros(ckpt.cfg.n_tasks)
    final_dists = np.zeros(ckpt.cfg.n_tasks)
    for task_id in range(ckpt.cfg.n_tasks):
        for _ in range(rollouts_per_task):
            ep = collect_rollout(ckpt.policy, ckpt.embedding, env, task_id, rng, ckpt.cfg)
            returns[task_id] += ep.env_rewards.sum()
            final_dists[task_id] += -ep.env_rewards[-1]
    return returns / rollouts_per_task, final_dists / rollouts_per_task


def identifiability(ckpt: SkillCheckpoint, env, windows_per_task: int,
                    rng: np.random.Generator):
    """How reliably the inference net attributes windows to their latent.

    For each held-out window the episode's true latent competes against one
    latent drawn from every other task's embedding. Returns (nway, pairwise)
    rates: nway counts the true latent scoring above all competitors (chance
    1/N), pairwise counts per-competitor wins (chance 0.5).
    """
    cfg = ckpt.cfg
    task_dists = [mlp_forward(ckpt.embedding, one_hot(t, cfg.n_tasks))
                  for t in range(cfg.n_tasks)]
    episodes_needed = max(1, windows_per_task // max(1, cfg.episode_horizon // 10))
    nway_hits = 0
    nway_total = 0
    pair_hits = 0
    pair_total = 0
    for task_id in range(cfg.n_tasks):
        collected = 0
        for _ in range(episodes_needed * 4):
            if collected >= windows_per_task:
                break
            ep = collect_rollout(ckpt.policy, ckpt.embedding, env, task_id, rng, cfg)
            all_windows = build_windows(ep.states, cfg.window_len)
            take = min(windows_per_task - collected, max(1, cfg.episode_horizon // 10))
            picks = rng.integers(0, all_windows.shape[0], size=take)
            for idx in picks:
                q = mlp_forward(ckpt.inference, all_windows[idx])
                true_score = gaussian_log_prob(q, ep.latent)
                others = []
                for other in range(cfg.n_tasks):
                    if other == task_id:
                        continue
                    z_other = gaussian_sample(task_dists[other], rng)
                    others.append(gaussian_log_prob(q, z_other))
                pair_hits += sum(true_score > s for s in others)
                pair_total += len(others)
                nway_hits += int(all(true_score > s for s in others))
                nway_total += 1
            collected += take
    return nway_hits / max(1, nway_total), pair_hits / max(1, pair_total)
