import numpy as np
import pytest

from tactbench import datastore as ds
from tactbench.container import ContainerError, read_arrays, write_arrays
from tactbench.simworld import ActionCommand, PlugInsertionEnv


class TestContainer:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "floats": rng.standard_normal((3, 4, 5)),
            "bytes": rng.integers(0, 255, (7, 2), dtype=np.uint8),
            "ints": np.arange(10, dtype=np.int64),
        }
        meta = {"nested": {"a": 1}, "flag": True}
        path = tmp_path / "x.tbar"
        write_arrays(path, arrays, meta)
        back, back_meta = read_arrays(path)
        assert back_meta == meta
        for name in arrays:
            assert back[name].dtype == arrays[name].dtype
            assert np.array_equal(back[name], arrays[name])

    def test_identical_content_identical_bytes(self, tmp_path):
        arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3)}
        p1, p2 = tmp_path / "1.tbar", tmp_path / "2.tbar"
        write_arrays(p1, arrays, {"k": 1})
        write_arrays(p2, arrays, {"k": 1})
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.tbar"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ContainerError):
            read_arrays(path)


class TestTactileWindow:
    def frame(self, value, shape=(3, 8, 8)):
        return np.full(shape, value, dtype=np.float32)

    def test_init_duplicates(self):
        w = ds.window_init(self.frame(0.5), 5)
        assert len(w) == 5
        for f in w.frames():
            assert np.array_equal(f, self.frame(0.5))

    def test_collapsed_channel_count(self):
        w = ds.window_init(np.zeros((3, 48, 48), dtype=np.float32), 5)
        assert w.collapsed().shape == (15, 48, 48)
        w1 = ds.window_init(np.zeros((3, 48, 48), dtype=np.float32), 1)
        assert w1.collapsed().shape == (3, 48, 48)

    def test_invalid_horizon(self):
        with pytest.raises(ds.InvalidHorizonError):
            ds.window_init(self.frame(0.0), 0)

    def test_push_fifo(self):
        w = ds.window_init(self.frame(0.0), 5)
        ds.window_push(w, self.frame(1.0))
        frames = w.frames()
        assert np.array_equal(frames[-1], self.frame(1.0))
        for f in frames[:-1]:
            assert np.array_equal(f, self.frame(0.0))

    def test_five_pushes_evict_original(self):
        w = ds.window_init(self.frame(0.0), 5)
        for i in range(1, 6):
            w.push(self.frame(float(i)))
        values = [f[0, 0, 0] for f in w.frames()]
        assert values == [1.0, 2.0, 3.0, 4.0, 5.0]

    def test_fifo_matches_list_oracle(self):
        rng = np.random.default_rng(0)
        for h in (1, 2, 5, 8):
            first = self.frame(rng.uniform())
            w = ds.window_init(first, h)
            oracle = [first] * h
            for _ in range(30):
                f = self.frame(rng.uniform())
                w.push(f)
                oracle = (oracle + [f])[-h:]
                assert len(w) == h
                for got, want in zip(w.frames(), oracle):
                    assert np.array_equal(got, want)
                assert np.array_equal(w.collapsed(), np.concatenate(oracle, axis=0))

    def test_shape_mismatch_rejected(self):
        w = ds.window_init(self.frame(0.0), 3)
        with pytest.raises(ValueError):
            w.push(np.zeros((3, 4, 4), dtype=np.float32))
        with pytest.raises(ValueError):
            ds.window_init(np.zeros((8, 8)), 3)


class TestEpisodeIO:
    def test_record_load_roundtrip(self, tmp_path, env_cfg, expert_episode):
        path = tmp_path / "ep.tbar"
        ds.save_episode(expert_episode, path)
        back = ds.load_episode(path)
        assert np.array_equal(back.camera_images, expert_episode.camera_images)
        assert np.array_equal(back.tactile_frames, expert_episode.tactile_frames)
        assert np.array_equal(back.proprio, expert_episode.proprio)
        assert np.array_equal(back.actions, expert_episode.actions)
        assert back.seed == expert_episode.seed
        assert back.success == expert_episode.success

    def test_expert_episode_metadata(self, expert_episode):
        assert expert_episode.success
        assert expert_episode.length == len(expert_episode.actions)
        assert expert_episode.camera_images.dtype == np.uint8

    def test_manifest_bookkeeping(self, tmp_path, env_cfg):
        env = PlugInsertionEnv(env_cfg, layout_seed=0)
        hold = lambda t, s, o: ActionCommand(s.gripper_pos.copy(), 1.0)
        for seed in range(100):
            episode = ds.collect_episode(env, seed, hold, max_steps=2)
            ds.save_episode(episode, tmp_path / f"episode_{seed:06d}.tbar")
            ds.append_manifest(
                tmp_path / "manifest.jsonl",
                {"file": f"episode_{seed:06d}.tbar", "seed": seed,
                 "drift_episode_index": 0, "length": episode.length, "success": episode.success},
            )
        entries = ds.read_manifest(tmp_path / "manifest.jsonl")
        assert len(entries) == 100
        episodes = ds.load_dataset(tmp_path)
        assert len(episodes) == 100

    def test_mismatched_lengths_rejected(self, expert_episode):
        with pytest.raises(ValueError):
            ds.Episode(
                camera_images=expert_episode.camera_images,
                tactile_frames=expert_episode.tactile_frames[:-1],
                proprio=expert_episode.proprio,
                actions=expert_episode.actions,
                seed=0,
                drift_episode_index=0,
                success=True,
            )


class TestNormStats:
    def test_boundaries_and_midpoint(self, expert_episodes):
        stats = ds.compute_norm_stats(expert_episodes)
        low = ds.normalize_action(stats, stats.action_min)
        high = ds.normalize_action(stats, stats.action_max)
        mid = ds.normalize_action(stats, (stats.action_min + stats.action_max) / 2)
        assert np.allclose(low, -1.0)
        assert np.allclose(high, 1.0)
        assert np.allclose(mid, 0.0)

    def test_roundtrip_random_actions(self, expert_episodes):
        stats = ds.compute_norm_stats(expert_episodes)
        rng = np.random.default_rng(0)
        actions = rng.uniform(stats.action_min, stats.action_max, size=(1000, 3))
        back = ds.denormalize_action(stats, ds.normalize_action(stats, actions))
        assert np.abs(back - actions).max() < 1e-9

    def test_constant_dimension_floored(self):
        actions = np.zeros((10, 3))
        actions[:, 0] = np.linspace(0, 1, 10)
        proprio = np.random.default_rng(0).uniform(size=(10, 3))
        with pytest.warns(UserWarning):
            stats = ds.norm_stats_from_arrays(actions, proprio)
        assert stats.action_max[1] - stats.action_min[1] >= 1e-6
        assert np.all(stats.proprio_std > 0)

    def test_requires_episodes(self):
        with pytest.raises(ValueError):
            ds.compute_norm_stats([])

    def test_dict_roundtrip(self, expert_episodes):
        stats = ds.compute_norm_stats(expert_episodes)
        back = ds.NormStats.from_dict(stats.to_dict())
        assert np.array_equal(back.action_min, stats.action_min)
        assert np.array_equal(back.proprio_std, stats.proprio_std)


class TestWindowsAt:
    def test_early_timesteps_duplicate_first_frame(self, expert_episode):
        h = 5
        wins = ds.windows_at(expert_episode, np.array([0, 2]), h)
        assert wins.shape[1] == 3 * h
        first = ds.hwc_to_chw(ds.to_float(expert_episode.tactile_frames[0]))
        # t=0: all five slots are the first frame.
        for j in range(h):
            assert np.array_equal(wins[0, 3 * j : 3 * (j + 1)], first)
        # t=2: slots are frames [0, 0, 0, 1, 2].
        want = [0, 0, 0, 1, 2]
        for j, idx in enumerate(want):
            frame = ds.hwc_to_chw(ds.to_float(expert_episode.tactile_frames[idx]))
            assert np.array_equal(wins[1, 3 * j : 3 * (j + 1)], frame)

    def test_matches_live_window(self, expert_episode):
        h = 4
        t = 9
        frames = [
            ds.hwc_to_chw(ds.to_float(expert_episode.tactile_frames[i])) for i in range(t + 1)
        ]
        live = ds.window_init(frames[0], h)
        for f in frames[1:]:
            live.push(f)
        wins = ds.windows_at(expert_episode, np.array([t]), h)
        assert np.array_equal(wins[0], live.collapsed())

    def test_action_chunk_edge_padding(self, expert_episode):
        horizon = 20
        t = expert_episode.length - 3
        chunk = ds.action_chunk_at(expert_episode, t, horizon)
        assert chunk.shape == (horizon, 3)
        assert np.array_equal(chunk[0], expert_episode.actions[t])
        for row in chunk[3:]:
            assert np.array_equal(row, expert_episode.actions[-1])
