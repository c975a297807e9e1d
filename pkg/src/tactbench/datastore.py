"""Demonstration recording, tactile-horizon windowing, and normalization.

Episodes are stored one file per episode (images as uint8, proprio and
actions as float64) in the container format from :mod:`tactbench.container`,
plus a JSONL manifest listing files, seeds, and success flags. Files are
immutable after close; concurrent readers are safe.
"""
from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import EnvConfig
from .container import read_arrays, write_arrays
from .simworld import ActionCommand, PlugInsertionEnv, check_success, inject_goal_noise


class InvalidHorizonError(ValueError):
    """Raised when a tactile horizon below 1 is requested."""


class TactileWindow:
    """Rolling FIFO buffer of exactly ``h`` tactile frames (each 3xHtxWt).

    The collapsed view concatenates the frames oldest-to-newest on the channel
    axis, producing a single 3h-channel image.
    """

    def __init__(self, first_frame: np.ndarray, horizon: int):
        if horizon < 1:
            raise InvalidHorizonError(f"horizon must be >= 1, got {horizon}")
        first_frame = np.asarray(first_frame)
        if first_frame.ndim != 3 or first_frame.shape[0] != 3:
            raise ValueError(f"expected a 3xHxW frame, got shape {first_frame.shape}")
        self.horizon = horizon
        self._frames: deque[np.ndarray] = deque(
            [first_frame.copy() for _ in range(horizon)], maxlen=horizon
        )

    def push(self, frame: np.ndarray) -> "TactileWindow":
        frame = np.asarray(frame)
        if frame.shape != self._frames[0].shape:
            raise ValueError(
                f"frame shape {frame.shape} does not match window shape {self._frames[0].shape}"
            )
        self._frames.append(frame.copy())
        return self

    def frames(self) -> list[np.ndarray]:
        return list(self._frames)

    def collapsed(self) -> np.ndarray:
        """Channel-wise concatenation, oldest first: shape (3h, Ht, Wt)."""
        return np.concatenate(list(self._frames), axis=0)

    def __len__(self) -> int:
        return len(self._frames)


def window_init(first_frame: np.ndarray, horizon: int) -> TactileWindow:
    return TactileWindow(first_frame, horizon)


def window_push(window: TactileWindow, frame: np.ndarray) -> TactileWindow:
    return window.push(frame)


def hwc_to_chw(img: np.ndarray) -> np.ndarray:
    return np.transpose(img, (2, 0, 1))


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------

@dataclass
class Episode:
    """One recorded demonstration, synchronized at the simulator tick."""

    camera_images: np.ndarray  # (T, C, H, W, 3) uint8
    tactile_frames: np.ndarray  # (T, Ht, Wt, 3) uint8
    proprio: np.ndarray  # (T, 3) float64: x, y, gripper width
    actions: np.ndarray  # (T, 3) float64: target x, target y, gripper cmd
    seed: int
    drift_episode_index: int
    success: bool

    def __post_init__(self):
        T = len(self.actions)
        if not (len(self.camera_images) == len(self.tactile_frames) == len(self.proprio) == T):
            raise ValueError("per-timestep arrays must have equal length")

    @property
    def length(self) -> int:
        return len(self.actions)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def to_float(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32) / 255.0


def collect_episode(
    env: PlugInsertionEnv,
    seed: int,
    action_fn,
    *,
    drift: bool = False,
    goal_noise_sigma: float = 0.0,
    max_steps: int | None = None,
) -> Episode:
    """Roll out ``action_fn(t, state, obs)`` and record all modalities per tick.

    ``obs`` holds the current camera renders, tactile frame, and proprio
    vector. The recorded action is the commanded one; goal noise (if any) is
    injected only into the executed action.
    """
    cfg = env.cfg
    cap = cfg.max_episode_steps if max_steps is None else max_steps
    noise_rng = np.random.default_rng([seed, 0x40])

    state = env.reset(seed, drift)
    cams, tacs, proprios, acts = [], [], [], []
    for t in range(cap):
        views = env.render_views()
        tactile = env.render_tactile()
        obs = {"images": views, "tactile": tactile, "proprio": state.proprio()}
        action = action_fn(t, state, obs)

        cams.append(np.stack([to_uint8(v) for v in views]))
        tacs.append(to_uint8(tactile))
        proprios.append(state.proprio())
        acts.append(action.as_array())

        executed = inject_goal_noise(action, goal_noise_sigma, noise_rng)
        state = env.step(executed)
        if check_success(state, cfg):
            break

    return Episode(
        camera_images=np.stack(cams),
        tactile_frames=np.stack(tacs),
        proprio=np.stack(proprios),
        actions=np.stack(acts),
        seed=seed,
        drift_episode_index=env.drift_episode_index,
        success=check_success(state, cfg),
    )


def save_episode(episode: Episode, path: str | Path) -> None:
    write_arrays(
        path,
        {
            "camera_images": episode.camera_images,
            "tactile_frames": episode.tactile_frames,
            "proprio": episode.proprio,
            "actions": episode.actions,
        },
        meta={
            "seed": episode.seed,
            "drift_episode_index": episode.drift_episode_index,
            "length": episode.length,
            "success": episode.success,
        },
    )


def load_episode(path: str | Path) -> Episode:
    arrays, meta = read_arrays(path)
    return Episode(
        camera_images=arrays["camera_images"],
        tactile_frames=arrays["tactile_frames"],
        proprio=arrays["proprio"],
        actions=arrays["actions"],
        seed=int(meta["seed"]),
        drift_episode_index=int(meta["drift_episode_index"]),
        success=bool(meta["success"]),
    )


def append_manifest(manifest_path: str | Path, entry: dict) -> None:
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    with open(manifest_path, "a") as f:
        f.write(json.dumps(entry, sort_keys=True) + "\n")


def read_manifest(manifest_path: str | Path) -> list[dict]:
    with open(manifest_path) as f:
        return [json.loads(line) for line in f if line.strip()]


def record_episode(
    env: PlugInsertionEnv,
    seed: int,
    action_fn,
    out_dir: str | Path,
    *,
    drift: bool = False,
    goal_noise_sigma: float = 0.0,
    manifest_name: str = "manifest.jsonl",
) -> tuple[Episode, Path]:
    """Collect one episode, write its file, and append a manifest entry."""
    out_dir = Path(out_dir)
    episode = collect_episode(
        env, seed, action_fn, drift=drift, goal_noise_sigma=goal_noise_sigma
    )
    filename = f"episode_{seed:06d}.tbar"
    path = out_dir / filename
    save_episode(episode, path)
    append_manifest(
        out_dir / manifest_name,
        {
            "file": filename,
            "seed": seed,
            "drift_episode_index": episode.drift_episode_index,
            "length": episode.length,
            "success": episode.success,
        },
    )
    return episode, path


def load_dataset(dataset_dir: str | Path, manifest_name: str = "manifest.jsonl") -> list[Episode]:
    """Load every episode listed in the manifest into memory."""
    dataset_dir = Path(dataset_dir)
    entries = read_manifest(dataset_dir / manifest_name)
    return [load_episode(dataset_dir / e["file"]) for e in entries]


def windows_at(episode: Episode, timesteps: np.ndarray, horizon: int) -> np.ndarray:
    """Collapsed tactile windows (B, 3h, Ht, Wt) ending at the given timesteps.

    Early timesteps are padded with duplicates of the first frame, matching
    the live buffer initialization.
    """
    frames = episode.tactile_frames
    out = []
    for t in timesteps:
        idx = np.clip(np.arange(t - horizon + 1, t + 1), 0, len(frames) - 1)
        chw = [hwc_to_chw(to_float(frames[i])) for i in idx]
        out.append(np.concatenate(chw, axis=0))
    return np.stack(out)


def camera_images_at(episode: Episode, timesteps: np.ndarray) -> np.ndarray:
    """Float camera images (B, C, 3, H, W) at the given timesteps."""
    imgs = episode.camera_images[timesteps]  # (B, C, H, W, 3) uint8
    return np.transpose(to_float(imgs), (0, 1, 4, 2, 3))


def action_chunk_at(episode: Episode, t: int, horizon: int) -> np.ndarray:
    """Future action chunk starting at t, edge-padded with the last action."""
    idx = np.clip(np.arange(t, t + horizon), 0, episode.length - 1)
    return episode.actions[idx]


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

WIDTH_FLOOR = 1e-6


@dataclass
class NormStats:
    """Per-dimension action min/max and proprio mean/std."""

    action_min: np.ndarray
    action_max: np.ndarray
    proprio_mean: np.ndarray
    proprio_std: np.ndarray

    def to_dict(self) -> dict:
        return {
            "action_min": self.action_min.tolist(),
            "action_max": self.action_max.tolist(),
            "proprio_mean": self.proprio_mean.tolist(),
            "proprio_std": self.proprio_std.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "NormStats":
        return NormStats(
            action_min=np.asarray(d["action_min"], dtype=np.float64),
            action_max=np.asarray(d["action_max"], dtype=np.float64),
            proprio_mean=np.asarray(d["proprio_mean"], dtype=np.float64),
            proprio_std=np.asarray(d["proprio_std"], dtype=np.float64),
        )


def compute_norm_stats(episodes: list[Episode]) -> NormStats:
    if not episodes:
        raise ValueError("need at least one episode")
    actions = np.concatenate([e.actions for e in episodes], axis=0)
    proprio = np.concatenate([e.proprio for e in episodes], axis=0)
    return norm_stats_from_arrays(actions, proprio)


def norm_stats_from_arrays(actions: np.ndarray, proprio: np.ndarray) -> NormStats:
    amin = actions.min(axis=0).astype(np.float64)
    amax = actions.max(axis=0).astype(np.float64)
    width = amax - amin
    if np.any(width < WIDTH_FLOOR):
        warnings.warn("constant action dimension; flooring normalization width at 1e-6")
        amax = np.where(width < WIDTH_FLOOR, amin + WIDTH_FLOOR, amax)
    std = proprio.std(axis=0).astype(np.float64)
    std = np.maximum(std, WIDTH_FLOOR)
    return NormStats(
        action_min=amin,
        action_max=amax,
        proprio_mean=proprio.mean(axis=0).astype(np.float64),
        proprio_std=std,
    )


def normalize_action(stats: NormStats, action: np.ndarray) -> np.ndarray:
    """Affine map of each dimension onto [-1, 1] over the observed hull."""
    return 2.0 * (action - stats.action_min) / (stats.action_max - stats.action_min) - 1.0


def denormalize_action(stats: NormStats, normed: np.ndarray) -> np.ndarray:
    return (normed + 1.0) / 2.0 * (stats.action_max - stats.action_min) + stats.action_min


def normalize_proprio(stats: NormStats, proprio: np.ndarray) -> np.ndarray:
    return (proprio - stats.proprio_mean) / stats.proprio_std
