"""Acceptance suite: the eight shipping criteria, one test per criterion.

Each test finishes by printing a single `[criterion N] PASS` line with its
headline numbers (visible under `pytest -s`); a failure reads as an assertion
error naming the criterion. The reach checkpoint is trained once per session
(criterion 3) and shared with criteria 4 and 6. Criterion 7 runs on the
bundled hand-built push skill library from scripts/push_pipeline.py; see that
script's docstring for why push skills are constructed rather than trained.
"""

from __future__ import annotations

import os
import sys
import time

import numpy as np
import pytest

from skillmpc.checkpoint import render_checkpoint, save_checkpoint
from skillmpc.composer import (LatentEvaluation, MpcConfig, SequenceTaskSpec,
                               compose, evaluate_latent, open_loop_baseline,
                               select_latent)
from skillmpc.config import load_run_config, load_task_spec
from skillmpc.embedding import (EmbedConfig, SkillCheckpoint, entropy_floor,
                                evaluate_policy, identifiability,
                                init_networks, train)
from skillmpc.envs import (BOX_HALF, EnvSnapshot, GRIPPER_RADIUS,
                           WORKSPACE_HALF, TaskSet, make_env, wrap_perturbed)
from skillmpc.errors import ValidationError
from skillmpc.numerics import (DiagGaussian, backprop, entropy_batch,
                               gaussian_entropy, gaussian_log_prob,
                               gaussian_sample, init_mlp, log_prob_grads,
                               mlp_backward, mlp_forward, mlp_forward_batch)

from test_numerics import _flatten, _numeric_grad, _unflatten

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(_ROOT, "scripts"))

from push_pipeline import build_push_library  # noqa: E402

_CONFIGS = os.path.join(_ROOT, "configs")


def _announce(n: int, message: str):
    print(f"\n[criterion {n}] PASS - {message}")


@pytest.fixture(scope="session")
def reach_run():
    return load_run_config(os.path.join(_CONFIGS, "reach.ini"))


@pytest.fixture(scope="session")
def reach_training(reach_run):
    """Train the reach checkpoint once; criteria 3, 4, and 6 share it."""
    start = time.perf_counter()
    ckpt = train(reach_run.embed,
                 lambda: make_env(reach_run.family, reach_run.tasks),
                 reach_run.seed)
    return ckpt, time.perf_counter() - start


class TestCriterion1Numerics:
    def test_backprop_matches_finite_differences_and_gaussian_mc(self):
        start = time.perf_counter()
        rng = np.random.default_rng(1001)
        worst = 0.0
        for case in range(120):
            depth = int(rng.integers(1, 3))
            hidden = tuple(int(rng.integers(3, 9)) for _ in range(depth))
            in_dim = int(rng.integers(2, 7))
            out_dim = int(rng.integers(1, 4))
            sizes = (in_dim, *hidden, 2 * out_dim)
            scale = float(rng.choice([0.01, 0.2]))
            params = init_mlp(rng, sizes, head_scale=scale)
            x = rng.normal(size=in_dim)

            if case % 2 == 0:
                # linear head objective: random weights on mean and log_std
                wm = rng.normal(size=out_dim)
                ws = rng.normal(size=out_dim)

                def loss(flat):
                    dist = mlp_forward(_unflatten(flat, params), x)
                    return float(wm @ dist.mean + ws @ dist.log_std)

                grads = backprop(params, x, wm, ws)
            else:
                # log-density of a fixed action under the predicted Gaussian
                action = rng.normal(size=out_dim)

                def loss(flat):
                    dist = mlp_forward(_unflatten(flat, params), x)
                    return float(gaussian_log_prob(dist, action))

                dist = mlp_forward(params, x)
                d_mean, d_log_std = log_prob_grads(
                    dist.mean[None], dist.log_std[None], action[None])
                grads = backprop(params, x, d_mean[0], d_log_std[0])

            analytic = _flatten(grads)
            numeric = _numeric_grad(loss, _flatten(params))
            # coordinates far below the gradient's own scale are pure
            # finite-difference noise, so floor the denominator there
            floor = max(1e-3 * float(np.max(np.abs(numeric))), 1e-8)
            err = np.max(np.abs(analytic - numeric)
                         / np.maximum(np.abs(numeric), floor))
            worst = max(worst, float(err))
        assert worst < 1e-4

        # closed-form entropy vs Monte-Carlo -E[log p] under the same sampler
        mc_worst = 0.0
        for mean, log_std in [
            (np.zeros(2), np.array([0.0, 0.0])),
            (np.array([1.5, -2.0, 0.3]), np.array([-1.0, 0.5, -0.3])),
            (np.array([-4.0]), np.array([1.5])),
        ]:
            dist = DiagGaussian(mean=mean, log_std=log_std)
            total = 0.0
            n = 100_000
            for _ in range(n):
                total += gaussian_log_prob(dist, gaussian_sample(dist, rng))
            mc_entropy = -total / n
            mc_worst = max(mc_worst, abs(mc_entropy - gaussian_entropy(dist)))
        assert mc_worst < 1e-2

        elapsed = time.perf_counter() - start
        assert elapsed < 60.0
        _announce(1, f"max grad rel err {worst:.2e}, entropy MC gap "
                     f"{mc_worst:.2e}, {elapsed:.1f}s")


class TestCriterion2EnvDeterminism:
    def test_snapshot_replay_and_invariants(self):
        start = time.perf_counter()
        rng = np.random.default_rng(2002)
        for trial in range(1000):
            family = "reach" if trial % 2 == 0 else "push"
            env = make_env(family)
            env.reset()
            for _ in range(int(rng.integers(0, 20))):
                env.step(rng.uniform(-0.08, 0.08, size=2))
            snap = env.get_state()
            actions = rng.uniform(-0.08, 0.08, size=(int(rng.integers(1, 12)), 2))
            first = [env.step(a).tobytes() for a in actions]
            end_state = env.get_state()
            env.set_state(snap)
            second = [env.step(a).tobytes() for a in actions]
            assert first == second
            assert env.get_state() == end_state

        contact = GRIPPER_RADIUS + BOX_HALF
        for trial in range(300):
            family = "reach" if trial % 2 == 0 else "push"
            env = make_env(family)
            obs = env.reset()
            for _ in range(25):
                if family == "push":
                    gripper = obs[2:] - obs[:2]
                    box = obs[2:]
                else:
                    gripper, box = obs, None
                action = rng.uniform(-12.0, 12.0, size=2)
                obs = env.step(action)
                new_gripper = obs[2:] - obs[:2] if family == "push" else obs
                # clipping: one step never exceeds the per-axis action cap
                assert np.all(np.abs(new_gripper - gripper)
                              <= env.action_cap + 1e-12)
                # containment: both bodies stay inside the workspace walls
                assert np.all(np.abs(new_gripper) <= WORKSPACE_HALF + 1e-12)
                if family == "push":
                    new_box = obs[2:]
                    assert np.all(np.abs(new_box) <= WORKSPACE_HALF + 1e-12)
                    # passivity: an out-of-reach box never moves
                    far = (np.linalg.norm(gripper - box) > contact + 2 * env.action_cap)
                    if far:
                        assert new_box.tobytes() == box.tobytes()
        elapsed = time.perf_counter() - start
        assert elapsed < 60.0
        _announce(2, f"1000 bit-identical replays, invariants over 300 fuzzed "
                     f"runs, {elapsed:.1f}s")


class TestCriterion3ReachTraining:
    def test_final_distance_and_embedding_entropy(self, reach_run, reach_training):
        ckpt, train_seconds = reach_training
        assert train_seconds < 900.0
        env = make_env(reach_run.family, reach_run.tasks)
        rollout_ss, _ = np.random.SeedSequence(reach_run.seed).spawn(2)
        _, dists = evaluate_policy(ckpt, env, reach_run.eval_rollouts,
                                   np.random.default_rng(rollout_ss))
        assert reach_run.eval_rollouts == 20
        assert np.all(np.asarray(dists) < 0.05)

        _, log_stds, _ = mlp_forward_batch(ckpt.embedding,
                                           np.eye(ckpt.cfg.n_tasks))
        entropies = entropy_batch(log_stds)
        floor = entropy_floor(ckpt.cfg.latent_dim)
        assert np.all(entropies >= floor + 0.5)
        _announce(3, f"train {train_seconds:.0f}s, final distances "
                     f"{np.round(np.asarray(dists), 3).tolist()} m, embedding "
                     f"entropy margin {float(np.min(entropies) - floor):.2f} nats")


class TestCriterion4Identifiability:
    def test_trained_beats_chance_untrained_within_band(self, reach_run,
                                                        reach_training):
        ckpt, _ = reach_training
        env = make_env(reach_run.family, reach_run.tasks)
        _, ident_ss = np.random.SeedSequence(reach_run.seed).spawn(2)
        assert reach_run.eval_windows == 100
        _, pairwise = identifiability(ckpt, env, reach_run.eval_windows,
                                      np.random.default_rng(ident_ss))
        assert pairwise >= 0.80

        nets = init_networks(reach_run.embed, env.obs_dim, env.action_dim,
                             np.random.default_rng(99))
        untrained = SkillCheckpoint(
            env_family=reach_run.family, goals=reach_run.tasks.goals,
            cfg=reach_run.embed, policy=nets[0], embedding=nets[1],
            inference=nets[2], iteration=0, seed=99,
            rng_lineage="root=99;children=[init,rollout]")
        _, chance = identifiability(untrained, env, reach_run.eval_windows,
                                    np.random.default_rng(ident_ss))
        assert 0.3 <= chance <= 0.7
        _announce(4, f"trained pairwise {pairwise:.3f} (>= 0.80), untrained "
                     f"{chance:.3f} within chance band [0.3, 0.7]")


class TestCriterion5AlgorithmEquivalence:
    def test_select_scan_evaluate_scorer_and_horizon_rule(self):
        # select_latent vs a brute-force first-argmax scan, ties included
        rng = np.random.default_rng(5005)
        traj = np.zeros((1, 2))
        for _ in range(1000):
            n = int(rng.integers(1, 16))
            values = (rng.integers(-4, 4, size=n).astype(float)
                      if rng.random() < 0.5 else rng.normal(size=n))
            evals = [LatentEvaluation(latent=np.zeros(2), value=float(v),
                                      trajectory=traj) for v in values]
            best, best_i = -np.inf, -1
            for i, v in enumerate(values):
                if v > best:
                    best, best_i = float(v), i
            assert select_latent(evals) == best_i

        # evaluate_latent vs an independently written discounted scorer
        ckpt = build_push_library()
        reach_net = init_mlp(np.random.default_rng(55), (2 + 2, 8, 4),
                             head_scale=0.3)
        case_rng = np.random.default_rng(5006)
        for case in range(50):
            family = "reach" if case % 2 == 0 else "push"
            policy = reach_net if family == "reach" else ckpt.policy
            horizon = int(case_rng.integers(2, 7))
            gamma = float(case_rng.uniform(0.5, 1.0))
            cfg = MpcConfig(n_candidates=1, sim_horizon=horizon,
                            exec_horizon=1, gamma=gamma,
                            enforce_horizon_rule=False)
            waypoints = case_rng.uniform(-0.3, 0.3, size=(2, 2))
            entity = "gripper" if family == "reach" else "box"
            spec = SequenceTaskSpec(waypoints=waypoints, tolerance=0.02,
                                    target_entity=entity)
            progress = int(case_rng.integers(0, 2))
            z = case_rng.uniform(-1.0, 1.0, size=2)
            pos = tuple(case_rng.uniform(-0.4, 0.4, size=2))
            if family == "reach":
                snap = EnvSnapshot(family="reach", gripper_pos=pos, step_index=0)
            else:
                snap = EnvSnapshot(family="push", gripper_pos=pos, step_index=0,
                                   box_pos=(0.1, 0.0), box_yaw=0.0)

            sim = make_env(family)
            sim.reset()
            got = evaluate_latent(sim, policy, z, snap, spec, progress, cfg,
                                  np.random.default_rng(900 + case))

            oracle = make_env(family)
            oracle.reset()
            oracle.set_state(snap)
            step_rng = np.random.default_rng(900 + case)
            obs = oracle.observe()
            target = waypoints[progress]
            total, disc = 0.0, 1.0
            for _ in range(horizon):
                dist = mlp_forward(policy, np.concatenate([obs, z]))
                obs = oracle.step(gaussian_sample(dist, step_rng))
                achieved = oracle.entity_position(obs, entity)
                total += disc * -float(np.linalg.norm(achieved - target))
                disc *= gamma
            assert got.value == pytest.approx(total, abs=1e-10)

        # horizon rule: N < T <= 2N enforced by construction
        MpcConfig(sim_horizon=4, exec_horizon=2).validate()
        MpcConfig(sim_horizon=4, exec_horizon=3).validate()
        with pytest.raises(ValidationError):
            MpcConfig(sim_horizon=4, exec_horizon=4).validate()
        with pytest.raises(ValidationError):
            MpcConfig(sim_horizon=5, exec_horizon=2).validate()
        _announce(5, "1000 select scans, 50 scorer matches at 1e-10, "
                     "horizon rule enforced")


class TestCriterion6ZeroShotSquare:
    def test_square_within_budget_without_updates(self, reach_run,
                                                  reach_training, tmp_path):
        ckpt, _ = reach_training
        spec = load_task_spec(os.path.join(_CONFIGS, "square_spec.ini"))
        for waypoint in spec.waypoints:  # square corners are unseen goals
            assert np.all(np.linalg.norm(reach_run.tasks.goals - waypoint,
                                         axis=1) > 1e-9)
        assert (reach_run.mpc.n_candidates, reach_run.mpc.sim_horizon,
                reach_run.mpc.exec_horizon) == (15, 4, 2)

        path = tmp_path / "ckpt.txt"
        save_checkpoint(path, ckpt)
        bytes_before = path.read_bytes()
        text_before = render_checkpoint(ckpt)

        start = time.perf_counter()
        real = make_env(reach_run.family, reach_run.tasks)
        real.reset()
        sim = make_env(reach_run.family, reach_run.tasks)
        result = compose(real, sim, ckpt, spec, reach_run.mpc,
                         np.random.default_rng(np.random.SeedSequence(reach_run.seed)))
        elapsed = time.perf_counter() - start

        assert result.completed
        assert result.latent_choices <= 100
        assert render_checkpoint(ckpt) == text_before
        assert path.read_bytes() == bytes_before
        assert elapsed < 120.0
        _announce(6, f"square done in {result.latent_choices} latent choices "
                     f"({result.total_steps} steps), checkpoint bytes "
                     f"unchanged, {elapsed:.1f}s")


class TestCriterion7RealityGap:
    def test_mpc_completes_where_open_loop_fails(self):
        run = load_run_config(os.path.join(_CONFIGS, "push.ini"))
        assert run.perturb.action_gain == 0.8
        assert run.perturb.action_rotation == pytest.approx(np.radians(5.0))
        assert (run.mpc.n_candidates, run.mpc.sim_horizon,
                run.mpc.exec_horizon) == (50, 30, 10)

        ckpt = build_push_library()
        assert np.array_equal(ckpt.goals, run.tasks.goals)
        spec = load_task_spec(os.path.join(_CONFIGS, "push_upleft_spec.ini"))

        start = time.perf_counter()
        real = wrap_perturbed(make_env(run.family, run.tasks), run.perturb)
        real.reset()
        sim = make_env(run.family, run.tasks)
        result = compose(real, sim, ckpt, spec, run.mpc,
                         np.random.default_rng(np.random.SeedSequence(run.seed)))
        assert result.completed
        assert result.latent_choices <= run.mpc.max_latent_choices

        ablation_env = wrap_perturbed(make_env(run.family, run.tasks), run.perturb)
        ablation_env.reset()
        baseline = open_loop_baseline(
            ablation_env, sim, ckpt, spec, run.mpc,
            np.random.default_rng(np.random.SeedSequence(run.seed)),
            total_steps=result.total_steps)
        elapsed = time.perf_counter() - start

        assert baseline.final_progress < spec.n_waypoints
        assert elapsed < 600.0
        _announce(7, f"MPC {result.final_progress}/{spec.n_waypoints} waypoints "
                     f"in {result.latent_choices} choices; open-loop stuck at "
                     f"{baseline.final_progress}/{spec.n_waypoints} in the same "
                     f"{result.total_steps} steps, {elapsed:.1f}s")


class TestCriterion8Reduction:
    def test_zero_alphas_reduce_to_raw_rewards(self):
        cfg = EmbedConfig(n_tasks=4, latent_dim=2, window_len=3,
                          alpha1=0.0, alpha2=0.0, alpha3=0.0,
                          episode_horizon=8, episodes_per_iter=4, iterations=3,
                          epochs=2, policy_hidden=(8,), embed_hidden=(8,),
                          inference_hidden=(8,))
        seen = []

        def check_batch(iteration, batch, r_hat):
            assert np.array_equal(r_hat, batch.env_rewards)
            seen.append(iteration)

        train(cfg, lambda: make_env("reach"), seed=8, batch_hook=check_batch)
        assert seen == [0, 1, 2]
        _announce(8, "r_hat identical to raw env rewards on all 3 iterations")
