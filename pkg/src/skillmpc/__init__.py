"""Latent skill embeddings with MPC composition on planar manipulation tasks.

Pipeline: train a latent-conditioned policy, a task-to-latent embedding,
and a latent-from-trajectory inference network jointly on a deterministic
simulator; then solve unseen waypoint-sequencing tasks zero-shot by
sampling candidate latents and picking, via simulator lookahead from the
real environment's exact state, the one to execute next.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .composer import (
    ComposeResult,
    LatentEvaluation,
    MpcConfig,
    SequenceTaskSpec,
    compose,
    evaluate_latent,
    open_loop_baseline,
    sample_candidates,
    select_latent,
)
from .config import RunConfig, load_run_config, load_task_spec
from .embedding import (
    EmbedConfig,
    RolloutBatch,
    SkillCheckpoint,
    augmented_reward,
    collect_batch,
    collect_rollout,
    inference_update,
    ppo_update,
    sample_task,
    train,
)
from .envs import (
    EnvSnapshot,
    PerturbationSpec,
    PerturbedEnv,
    PushEnv,
    ReachEnv,
    TaskSet,
    default_goals,
    make_env,
    wrap_perturbed,
)
from .errors import SnapshotMismatchError, ValidationError

__version__ = "0.1.0"
