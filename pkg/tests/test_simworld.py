import numpy as np
import pytest

from tactbench import simworld as sw
from tactbench.config import EnvConfig


def hold_action(state):
    return sw.ActionCommand(target_pos=state.gripper_pos.copy(), gripper_cmd=state.gripper_width / 0.08)


def states_equal(a, b):
    return (
        np.array_equal(a.gripper_pos, b.gripper_pos)
        and a.gripper_width == b.gripper_width
        and np.array_equal(a.plug_pos, b.plug_pos)
        and a.plug_grasped == b.plug_grasped
        and a.target_port_index == b.target_port_index
        and a.plug_inserted_port == b.plug_inserted_port
        and a.contact_force == b.contact_force
    )


class TestReset:
    def test_seeded_determinism(self, env_cfg):
        s1 = sw.reset(env_cfg, 7, False)
        s2 = sw.reset(env_cfg, 7, False)
        assert states_equal(s1, s2)
        assert s1.step_count == 0
        assert s1.gripper_width == env_cfg.width_max

    def test_drift_changes_bead_centers(self, env_cfg):
        layout = sw.BeadLayout.create(env_cfg, seed=3)
        recorded_state = layout.rng_state()
        before = layout.bead_centers.copy()
        sw.reset(env_cfg, 7, True, layout)
        after_first = layout.bead_centers.copy()
        sw.reset(env_cfg, 7, True, layout)
        assert not np.array_equal(after_first, layout.bead_centers)

        # Oracle: replay the random walk from the recorded RNG state.
        rng = np.random.default_rng()
        rng.bit_generator.state = recorded_state
        replay = np.clip(before + rng.normal(0, layout.drift_sigma, before.shape), 0, 1)
        assert np.array_equal(replay, after_first)

    def test_no_drift_keeps_layout(self, env_cfg):
        layout = sw.BeadLayout.create(env_cfg, seed=3)
        before = layout.bead_centers.copy()
        sw.reset(env_cfg, 7, False, layout)
        assert np.array_equal(before, layout.bead_centers)

    def test_target_port_is_nearest(self, env_cfg):
        state = sw.reset(env_cfg, 0, False)
        dists = np.linalg.norm(state.port_positions - state.gripper_pos, axis=1)
        assert state.target_port_index == int(np.argmin(dists))

    def test_negative_seed_rejected(self, env_cfg):
        with pytest.raises(ValueError):
            sw.reset(env_cfg, -1, False)

    def test_positions_in_unit_square(self, env_cfg):
        for seed in range(20):
            s = sw.reset(env_cfg, seed, False)
            assert np.all(s.plug_pos >= 0) and np.all(s.plug_pos <= 1)
            assert np.all(s.gripper_pos >= 0) and np.all(s.gripper_pos <= 1)


class TestStep:
    def test_fixed_point(self, env_cfg):
        state = sw.reset(env_cfg, 1, False)
        nxt = sw.step(state, hold_action(state), env_cfg)
        assert states_equal(state, nxt)
        assert nxt.step_count == state.step_count + 1

    def test_non_finite_action_rejected(self, env_cfg):
        state = sw.reset(env_cfg, 1, False)
        with pytest.raises(sw.InvalidActionError):
            sw.step(state, sw.ActionCommand(np.array([np.nan, 0.5]), 1.0), env_cfg)
        with pytest.raises(sw.InvalidActionError):
            sw.step(state, sw.ActionCommand(np.array([0.5, 0.5]), float("inf")), env_cfg)

    def test_bounded_motion(self, env_cfg):
        state = sw.reset(env_cfg, 1, False)
        far = sw.ActionCommand(np.array([0.99, 0.01]), 1.0)
        nxt = sw.step(state, far, env_cfg)
        moved = np.linalg.norm(nxt.gripper_pos - state.gripper_pos)
        assert moved <= env_cfg.max_step_per_tick + 1e-12

    def test_grasp_predicate(self, env_cfg):
        state = sw.reset(env_cfg, 1, False)
        # Teleport-by-steps to the plug, then close.
        for _ in range(60):
            state = sw.step(state, sw.ActionCommand(state.plug_pos.copy(), 1.0), env_cfg)
            if np.linalg.norm(state.gripper_pos - state.plug_pos) < 1e-9:
                break
        for _ in range(5):
            state = sw.step(state, sw.ActionCommand(state.plug_pos.copy(), 0.0), env_cfg)
        # Oracle: direct evaluation of the grasp predicate.
        near = np.linalg.norm(state.gripper_pos - state.plug_pos) <= env_cfg.grasp_radius
        closed = state.gripper_width < env_cfg.grasp_close_threshold
        assert near and closed
        assert state.plug_grasped
        assert state.contact_force > 0

    def _grasped_state(self, env_cfg, seed=1):
        state = sw.reset(env_cfg, seed, False)
        rng = np.random.default_rng(0)
        for _ in range(200):
            state = sw.step(state, sw.scripted_expert(state, env_cfg, rng), env_cfg)
            if state.plug_grasped:
                return state
        raise AssertionError("expert never grasped")

    def test_insertion_into_non_target_port(self, env_cfg):
        state = self._grasped_state(env_cfg)
        wrong = 1 - state.target_port_index
        port = state.port_positions[wrong]
        # Carry above the wrong port, then push past the line.
        for _ in range(100):
            state = sw.step(
                state, sw.ActionCommand(np.array([port[0], env_cfg.expert_carry_y]), 0.0), env_cfg
            )
            if abs(state.gripper_pos[0] - port[0]) < 1e-6:
                break
        for _ in range(30):
            state = sw.step(
                state,
                sw.ActionCommand(np.array([port[0], env_cfg.port_line_y - 0.02]), 0.0),
                env_cfg,
            )
            if state.plug_inserted_port is not None:
                break
        assert state.plug_inserted_port == wrong
        # Oracle: insertion predicate at the port line.
        assert abs(state.plug_pos[0] - port[0]) <= env_cfg.insert_tolerance
        for _ in range(3):
            state = sw.step(state, sw.ActionCommand(state.gripper_pos.copy(), 1.0), env_cfg)
        assert state.gripper_width > env_cfg.release_threshold
        assert not sw.check_success(state, env_cfg)

    def test_plate_blocks_unaligned_plug(self, env_cfg):
        state = self._grasped_state(env_cfg)
        # Aim between the two ports, well away from both slots.
        mid_x = float(state.port_positions[:, 0].mean())
        for _ in range(100):
            state = sw.step(
                state, sw.ActionCommand(np.array([mid_x, env_cfg.port_line_y - 0.05]), 0.0), env_cfg
            )
        assert state.plug_inserted_port is None
        assert state.plug_pos[1] >= env_cfg.port_line_y - 1e-12


class TestSuccess:
    def _success_state(self, env_cfg, seed=2):
        env = sw.PlugInsertionEnv(env_cfg, layout_seed=0)
        states, _, ok = sw.rollout_expert(env, seed)
        assert ok
        return states[-1]

    def test_inserted_and_released(self, env_cfg):
        state = self._success_state(env_cfg)
        assert state.plug_inserted_port == state.target_port_index
        assert state.gripper_width > env_cfg.release_threshold
        assert sw.check_success(state, env_cfg)

    def test_release_required(self, env_cfg):
        state = self._success_state(env_cfg)
        closed = sw.WorldState(
            gripper_pos=state.gripper_pos,
            gripper_width=0.01,
            plug_pos=state.plug_pos,
            plug_grasped=False,
            port_positions=state.port_positions,
            target_port_index=state.target_port_index,
            plug_inserted_port=state.plug_inserted_port,
            contact_force=0.0,
            step_count=state.step_count,
        )
        assert not sw.check_success(closed, env_cfg)

    def test_wrong_port_fails(self, env_cfg):
        state = self._success_state(env_cfg)
        wrong = sw.WorldState(
            gripper_pos=state.gripper_pos,
            gripper_width=state.gripper_width,
            plug_pos=state.plug_pos,
            plug_grasped=False,
            port_positions=state.port_positions,
            target_port_index=1 - state.target_port_index,
            plug_inserted_port=state.plug_inserted_port,
            contact_force=0.0,
            step_count=state.step_count,
        )
        assert not sw.check_success(wrong, env_cfg)

    def test_success_monotone_under_hold(self, env_cfg):
        state = self._success_state(env_cfg)
        for _ in range(10):
            state = sw.step(state, sw.ActionCommand(state.gripper_pos.copy(), 1.0), env_cfg)
            assert sw.check_success(state, env_cfg)


class TestRendering:
    def test_shapes_and_determinism(self, env_cfg):
        state = sw.reset(env_cfg, 5, False)
        v1 = sw.render_views(state, env_cfg, 3)
        v2 = sw.render_views(state, env_cfg, 3)
        assert len(v1) == 3
        for a, b in zip(v1, v2):
            assert a.shape == (64, 64, 3)
            assert a.min() >= 0.0 and a.max() <= 1.0
            assert np.array_equal(a, b)

    def test_camera_count_knob(self, env_cfg):
        state = sw.reset(env_cfg, 5, False)
        assert len(sw.render_views(state, env_cfg, 1)) == 1
        assert len(sw.render_views(state, env_cfg, 5)) == 5
        with pytest.raises(ValueError):
            sw.render_views(state, env_cfg, 0)

    def test_distinct_viewpoints(self, env_cfg):
        state = sw.reset(env_cfg, 5, False)
        views = sw.render_views(state, env_cfg, 3)
        assert not np.array_equal(views[0], views[1])
        assert not np.array_equal(views[0], views[2])

    def test_plug_move_changes_only_footprint(self, env_cfg):
        a = sw.reset(env_cfg, 5, False)
        b = sw.WorldState(
            gripper_pos=a.gripper_pos,
            gripper_width=a.gripper_width,
            plug_pos=a.plug_pos + np.array([0.05, 0.03]),
            plug_grasped=a.plug_grasped,
            port_positions=a.port_positions,
            target_port_index=a.target_port_index,
            plug_inserted_port=None,
            contact_force=0.0,
            step_count=0,
        )
        va = sw.render_views(a, env_cfg, 3)
        vb = sw.render_views(b, env_cfg, 3)
        for cam in range(3):
            diff = np.any(va[cam] != vb[cam], axis=-1)
            footprint = sw.plug_footprint_mask(a, env_cfg, cam) | sw.plug_footprint_mask(
                b, env_cfg, cam
            )
            assert not np.any(diff & ~footprint)


class TestTactile:
    def test_resting_layout_deterministic(self, env_cfg):
        import dataclasses

        cfg = dataclasses.replace(env_cfg, bead_jitter_sigma=0.0)
        layout = sw.BeadLayout.create(cfg, 0)
        state = sw.reset(cfg, 0, False)
        assert state.contact_force == 0.0
        img1 = sw.render_tactile(state, layout, cfg, np.random.default_rng(0))
        img2 = sw.render_tactile(state, layout, cfg, np.random.default_rng(99))
        assert np.array_equal(img1, img2)
        assert img1.shape == (cfg.tactile_size, cfg.tactile_size, 3)

    def test_force_pushes_beads_outward(self, env_cfg):
        layout = sw.BeadLayout.create(env_cfg, 0)
        contact = np.array([0.5, 0.5])
        disp = sw.bead_displacement(layout.bead_centers, contact, force=1.0, cfg=env_cfg)
        rel = layout.bead_centers - contact
        radial = (disp * rel).sum(axis=1) / np.linalg.norm(rel, axis=1)
        assert np.all(radial > 0)
        assert radial.mean() > 0

        # Magnitude scales with force and inversely with distance.
        disp2 = sw.bead_displacement(layout.bead_centers, contact, force=2.0, cfg=env_cfg)
        assert np.allclose(disp2, 2 * disp)

    def test_force_changes_render(self, env_cfg):
        import dataclasses

        cfg = dataclasses.replace(env_cfg, bead_jitter_sigma=0.0)
        layout = sw.BeadLayout.create(cfg, 0)
        rest = sw.reset(cfg, 0, False)
        pressed = dataclasses.replace(rest, contact_force=1.0)
        img_rest = sw.render_tactile(rest, layout, cfg, np.random.default_rng(0))
        img_pressed = sw.render_tactile(pressed, layout, cfg, np.random.default_rng(0))
        assert not np.array_equal(img_rest, img_pressed)

    def test_jitter_makes_frames_differ(self, env_cfg):
        layout = sw.BeadLayout.create(env_cfg, 0)
        state = sw.reset(env_cfg, 0, False)
        rng = np.random.default_rng(0)
        f1 = sw.render_tactile(state, layout, env_cfg, rng)
        f2 = sw.render_tactile(state, layout, env_cfg, rng)
        assert not np.array_equal(f1, f2)

    def test_beads_constant_within_episode(self, env_cfg):
        env = sw.PlugInsertionEnv(env_cfg, layout_seed=0)
        env.reset(3, drift=True)
        centers = env.layout.bead_centers.copy()
        rng = np.random.default_rng(1)
        for _ in range(20):
            env.step(sw.scripted_expert(env.state, env_cfg, rng))
            env.render_tactile()
        assert np.array_equal(centers, env.layout.bead_centers)


class TestExpert:
    def test_terminal_hold_action(self, env_cfg):
        env = sw.PlugInsertionEnv(env_cfg, layout_seed=0)
        states, _, ok = sw.rollout_expert(env, 4)
        assert ok
        final = states[-1]
        action = sw.scripted_expert(final, env_cfg, np.random.default_rng(0))
        assert np.array_equal(action.target_pos, final.gripper_pos)
        assert action.gripper_cmd == 1.0

    def test_first_action_targets_above_plug(self, env_cfg):
        state = sw.reset(env_cfg, 11, False)
        assert sw.expert_stage(state, env_cfg) == "approach_above_plug"
        action = sw.scripted_expert(state, env_cfg, np.random.default_rng(0))
        expected = state.plug_pos + np.array([0.0, env_cfg.expert_hover])
        assert np.linalg.norm(action.target_pos - expected) < 6 * env_cfg.expert_jitter_sigma
        assert action.gripper_cmd == 1.0

    def test_batch_success_rate(self, env_cfg):
        env = sw.PlugInsertionEnv(env_cfg, layout_seed=0)
        wins = sum(sw.rollout_expert(env, seed)[2] for seed in range(100))
        assert wins >= 99

    def test_success_under_goal_noise(self, env_cfg):
        env = sw.PlugInsertionEnv(env_cfg, layout_seed=0)
        wins = sum(
            sw.rollout_expert(env, seed, goal_noise_sigma=0.0025)[2] for seed in range(100)
        )
        assert wins >= 80


class TestGoalNoise:
    def test_zero_sigma_identity(self):
        action = sw.ActionCommand(np.array([0.3, 0.4]), 0.7)
        out = sw.inject_goal_noise(action, 0.0, np.random.default_rng(0))
        assert out is action

    def test_sample_std(self):
        rng = np.random.default_rng(0)
        action = sw.ActionCommand(np.array([0.5, 0.5]), 1.0)
        deltas = np.array(
            [sw.inject_goal_noise(action, 0.0025, rng).target_pos - action.target_pos
             for _ in range(100_000)]
        )
        std = deltas.std(axis=0)
        assert np.all(np.abs(std - 0.0025) < 0.0025 * 0.05)

    def test_gripper_cmd_unchanged(self):
        rng = np.random.default_rng(0)
        action = sw.ActionCommand(np.array([0.5, 0.5]), 0.123)
        for _ in range(50):
            assert sw.inject_goal_noise(action, 0.01, rng).gripper_cmd == 0.123

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            sw.inject_goal_noise(sw.ActionCommand(np.array([0.5, 0.5]), 1.0), -1.0,
                                 np.random.default_rng(0))


class TestTrajectoryDeterminism:
    def test_bit_identical_rollouts(self, env_cfg):
        def run():
            env = sw.PlugInsertionEnv(env_cfg, layout_seed=9)
            states, actions, ok = sw.rollout_expert(env, 17, drift=True)
            renders = sw.render_views(states[-1], env_cfg, 3)
            tact = sw.render_tactile(states[-1], env.layout, env_cfg, np.random.default_rng(3))
            return states, actions, renders, tact

        s1, a1, r1, t1 = run()
        s2, a2, r2, t2 = run()
        assert len(s1) == len(s2)
        for x, y in zip(s1, s2):
            assert states_equal(x, y)
        for x, y in zip(a1, a2):
            assert np.array_equal(x.target_pos, y.target_pos) and x.gripper_cmd == y.gripper_cmd
        for x, y in zip(r1, r2):
            assert np.array_equal(x, y)
        assert np.array_equal(t1, t2)
