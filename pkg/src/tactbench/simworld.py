"""Planar plug-insertion world with a synthetic bead tactile sensor.

The workspace is the unit square with 1 unit = 1 meter, so millimeter
tolerances map directly (e.g. 2.5 mm goal noise = sigma 0.0025). The world is
kinematic: the gripper tracks commanded targets at a bounded rate, the plug
follows the gripper rigidly while grasped, and a port plate at ``port_line_y``
blocks downward motion except through a port slot. Contact force is a
normalized scalar from finger squeeze and plate penetration; it drives the
bead displacement in the tactile render.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .config import EnvConfig


class InvalidActionError(ValueError):
    """Raised when an action contains non-finite components."""


@dataclass(frozen=True)
class ActionCommand:
    """Absolute position target plus gripper opening fraction (0=closed, 1=open)."""

    target_pos: np.ndarray  # (2,) meters, clamped to [0,1]^2 on application
    gripper_cmd: float

    def __post_init__(self):
        object.__setattr__(self, "target_pos", np.asarray(self.target_pos, dtype=np.float64))

    def as_array(self) -> np.ndarray:
        return np.array([self.target_pos[0], self.target_pos[1], self.gripper_cmd], dtype=np.float64)

    @staticmethod
    def from_array(arr) -> "ActionCommand":
        arr = np.asarray(arr, dtype=np.float64)
        return ActionCommand(target_pos=arr[:2].copy(), gripper_cmd=float(arr[2]))


@dataclass(frozen=True)
class WorldState:
    """Full simulator state. Positions in meters inside the unit square."""

    gripper_pos: np.ndarray  # (2,)
    gripper_width: float  # [0, width_max]
    plug_pos: np.ndarray  # (2,)
    plug_grasped: bool
    port_positions: np.ndarray  # (P, 2)
    target_port_index: int
    plug_inserted_port: int | None
    contact_force: float  # >= 0, normalized units
    step_count: int

    def proprio(self) -> np.ndarray:
        return np.array(
            [self.gripper_pos[0], self.gripper_pos[1], self.gripper_width], dtype=np.float64
        )


@dataclass
class BeadLayout:
    """Rest positions of the sensor beads in sensor-local unit coordinates.

    ``drift_step`` applies one random-walk move to every center; it is called
    exactly once per episode reset when drift is enabled, so the layout wanders
    between episodes but stays fixed within one.
    """

    bead_centers: np.ndarray  # (B, 2) in [0,1]^2
    jitter_sigma: float
    drift_sigma: float
    rng: np.random.Generator

    @staticmethod
    def create(cfg: EnvConfig, seed: int) -> "BeadLayout":
        rng = np.random.default_rng([seed, 0xBEAD])
        centers = rng.uniform(0.15, 0.85, size=(cfg.num_beads, 2))
        return BeadLayout(
            bead_centers=centers,
            jitter_sigma=cfg.bead_jitter_sigma,
            drift_sigma=cfg.bead_drift_sigma,
            rng=rng,
        )

    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    def drift_step(self) -> None:
        move = self.rng.normal(0.0, self.drift_sigma, size=self.bead_centers.shape)
        self.bead_centers = np.clip(self.bead_centers + move, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Core dynamics
# ---------------------------------------------------------------------------

def reset(cfg: EnvConfig, seed: int, drift: bool, layout: BeadLayout | None = None) -> WorldState:
    """Initial state for one episode; advances ``layout`` by one drift step if asked.

    Identical (seed, drift, prior layout) give a bit-identical state.
    """
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    if drift and layout is not None:
        layout.drift_step()

    rng = np.random.default_rng([seed, 0x51A7])
    plug_pos = np.asarray(cfg.plug_holder_pos, dtype=np.float64) + rng.normal(
        0.0, cfg.plug_jitter_sigma, size=2
    )
    plug_pos = np.clip(plug_pos, 0.0, 1.0)

    gripper = np.asarray(cfg.gripper_start_pos, dtype=np.float64)
    ports = np.asarray(cfg.port_positions, dtype=np.float64)
    target = int(np.argmin(np.linalg.norm(ports - gripper, axis=1)))

    return WorldState(
        gripper_pos=gripper.copy(),
        gripper_width=cfg.width_max,
        plug_pos=plug_pos,
        plug_grasped=False,
        port_positions=ports,
        target_port_index=target,
        plug_inserted_port=None,
        contact_force=0.0,
        step_count=0,
    )


def _move_toward(pos: np.ndarray, target: np.ndarray, max_step: float) -> np.ndarray:
    delta = target - pos
    dist = float(np.linalg.norm(delta))
    if dist <= max_step or dist == 0.0:
        return target.copy()
    return pos + delta * (max_step / dist)


def step(state: WorldState, action: ActionCommand, cfg: EnvConfig) -> WorldState:
    """Advance the world one tick. Deterministic given (state, action)."""
    if not (np.all(np.isfinite(action.target_pos)) and np.isfinite(action.gripper_cmd)):
        raise InvalidActionError(f"non-finite action: {action}")

    target = np.clip(action.target_pos, 0.0, 1.0)
    gripper = _move_toward(state.gripper_pos, target, cfg.max_step_per_tick)
    gripper = np.clip(gripper, 0.0, 1.0)

    cmd_width = float(np.clip(action.gripper_cmd, 0.0, 1.0)) * cfg.width_max
    dw = np.clip(cmd_width - state.gripper_width, -cfg.width_rate, cfg.width_rate)
    width = float(np.clip(state.gripper_width + dw, 0.0, cfg.width_max))

    plug = state.plug_pos.copy()
    grasped = state.plug_grasped
    inserted = state.plug_inserted_port
    penetration = 0.0
    line = cfg.port_line_y

    if inserted is not None:
        # Socket holds the plug; the gripper moves freely.
        plug = state.port_positions[inserted].copy()
    elif grasped:
        prev_y = float(state.plug_pos[1])
        attempted = gripper.copy()
        if attempted[1] <= line and prev_y >= line:
            # Resolve where the carried plug meets the plate line.
            if prev_y == attempted[1]:
                x_cross = float(attempted[0])
            else:
                frac = (prev_y - line) / (prev_y - attempted[1])
                x_cross = float(state.plug_pos[0] + frac * (attempted[0] - state.plug_pos[0]))
            dx = np.abs(state.port_positions[:, 0] - x_cross)
            port_idx = int(np.argmin(dx))
            commanded_down = target[1] < line
            if dx[port_idx] <= cfg.insert_tolerance and commanded_down:
                inserted = port_idx
                grasped = False
                plug = state.port_positions[port_idx].copy()
                penetration = max(0.0, line - float(attempted[1]))
                gripper = np.array([plug[0], line], dtype=np.float64)
            else:
                # Blocked by the plate: plug (and the hand holding it) stop at the line.
                penetration = line - float(attempted[1])
                plug = np.array([x_cross, line], dtype=np.float64)
                gripper = plug.copy()
        else:
            plug = attempted
    # Free plug does not move (kinematic world, no gravity).

    if inserted is None:
        near = float(np.linalg.norm(gripper - plug)) <= cfg.grasp_radius
        if grasped and width > cfg.release_threshold:
            grasped = False
        elif not grasped and near and width < cfg.grasp_close_threshold:
            grasped = True
            plug = gripper.copy()

    squeeze = 0.0
    if float(np.linalg.norm(gripper - plug)) <= cfg.grasp_radius:
        squeeze = max(0.0, cfg.plug_width - width)
    force = cfg.contact_stiffness * (squeeze + max(0.0, penetration))

    return WorldState(
        gripper_pos=gripper,
        gripper_width=width,
        plug_pos=plug,
        plug_grasped=grasped,
        port_positions=state.port_positions,
        target_port_index=state.target_port_index,
        plug_inserted_port=inserted,
        contact_force=force,
        step_count=state.step_count + 1,
    )


def check_success(state: WorldState, cfg: EnvConfig) -> bool:
    """Plug seated in the target port and the gripper opened past release width."""
    return (
        state.plug_inserted_port is not None
        and state.plug_inserted_port == state.target_port_index
        and state.gripper_width > cfg.release_threshold
    )


def inject_goal_noise(
    action: ActionCommand, sigma_m: float, rng: np.random.Generator
) -> ActionCommand:
    """Per-coordinate Gaussian perturbation of the position target only."""
    if sigma_m < 0:
        raise ValueError(f"sigma_m must be >= 0, got {sigma_m}")
    if sigma_m == 0.0:
        return action
    noisy = action.target_pos + rng.normal(0.0, sigma_m, size=2)
    return ActionCommand(target_pos=noisy, gripper_cmd=action.gripper_cmd)


# ---------------------------------------------------------------------------
# Scripted expert
# ---------------------------------------------------------------------------

EXPERT_STAGES = (
    "approach_above_plug",
    "descend_to_plug",
    "close",
    "lift",
    "traverse",
    "descend_insert",
    "release",
    "done",
)


def expert_stage(state: WorldState, cfg: EnvConfig) -> str:
    """Infer the waypoint stage from the state alone (the policy is memoryless)."""
    if state.plug_inserted_port is not None:
        if state.gripper_width > cfg.release_threshold:
            return "done"
        return "release"
    if state.plug_grasped:
        port = state.port_positions[state.target_port_index]
        if abs(float(state.gripper_pos[0] - port[0])) <= cfg.expert_align_tol:
            return "descend_insert"
        if float(state.gripper_pos[1]) < cfg.expert_carry_y - 0.01:
            return "lift"
        return "traverse"
    d = float(np.linalg.norm(state.gripper_pos - state.plug_pos))
    if d <= cfg.expert_descend_radius:
        return "close"
    above = state.plug_pos + np.array([0.0, cfg.expert_hover])
    if float(np.linalg.norm(state.gripper_pos - above)) <= cfg.expert_waypoint_tol:
        return "descend_to_plug"
    if (
        abs(float(state.gripper_pos[0] - state.plug_pos[0])) <= cfg.expert_waypoint_tol
        and state.gripper_pos[1] <= above[1] + cfg.expert_waypoint_tol
    ):
        return "descend_to_plug"
    return "approach_above_plug"


def scripted_expert(state: WorldState, cfg: EnvConfig, rng: np.random.Generator) -> ActionCommand:
    """Waypoint policy: approach, grasp, lift, traverse, insert, release.

    Stationary stages (close/release/done) are emitted without jitter so a
    terminal state maps to an exact hold action.
    """
    stage = expert_stage(state, cfg)
    port = state.port_positions[state.target_port_index]

    if stage == "done":
        return ActionCommand(target_pos=state.gripper_pos.copy(), gripper_cmd=1.0)
    if stage == "release":
        return ActionCommand(target_pos=state.gripper_pos.copy(), gripper_cmd=1.0)
    if stage == "close":
        return ActionCommand(target_pos=state.plug_pos.copy(), gripper_cmd=0.0)

    if stage == "approach_above_plug":
        target = state.plug_pos + np.array([0.0, cfg.expert_hover])
        grip = 1.0
    elif stage == "descend_to_plug":
        target = state.plug_pos.copy()
        grip = 1.0
    elif stage == "lift":
        target = np.array([state.gripper_pos[0], cfg.expert_carry_y])
        grip = 0.0
    elif stage == "traverse":
        target = np.array([port[0], cfg.expert_carry_y])
        grip = 0.0
    else:  # descend_insert
        target = np.array([port[0], cfg.port_line_y - cfg.expert_insert_depth])
        grip = 0.0

    target = target + rng.normal(0.0, cfg.expert_jitter_sigma, size=2)
    return ActionCommand(target_pos=target, gripper_cmd=grip)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _camera_affines(num_cameras: int) -> list[np.ndarray]:
    """Per-camera affine world->view maps; each row is (a, b, c): view = a*x + b*y + c.

    View coordinates live in [0,1]^2 with v increasing downward. Camera 0 sees
    the whole workspace, camera 1 zooms on the plate region, camera 2 looks
    from the side (axes swapped).
    """
    cams = []
    # Camera 0: full top view.
    cams.append(np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 1.0]]))
    # Camera 1: zoom window x in [0.05,0.95], y in [0.05,0.65].
    cams.append(np.array([[1.0 / 0.9, 0.0, -0.05 / 0.9], [0.0, -1.0 / 0.6, 0.65 / 0.6]]))
    # Camera 2: side view, world x maps down the image, world y maps across.
    cams.append(np.array([[0.0, -1.0, 1.0], [1.0, 0.0, 0.0]]))
    if num_cameras <= 3:
        return cams[:num_cameras]
    # Extra cameras: shifted zooms of the full view.
    for i in range(num_cameras - 3):
        s = 1.2 + 0.2 * i
        cams.append(np.array([[s, 0.0, -0.05 * (i + 1)], [0.0, -s, s * 0.95]]))
    return cams


def _world_grids(cam: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """World coordinates of every pixel center for an affine camera."""
    u = (np.arange(size) + 0.5) / size
    v = (np.arange(size) + 0.5) / size
    uu, vv = np.meshgrid(u, v)  # vv: rows (down), uu: cols (right)
    a = np.array([[cam[0, 0], cam[0, 1]], [cam[1, 0], cam[1, 1]]])
    inv = np.linalg.inv(a)
    du = uu - cam[0, 2]
    dv = vv - cam[1, 2]
    wx = inv[0, 0] * du + inv[0, 1] * dv
    wy = inv[1, 0] * du + inv[1, 1] * dv
    return wx, wy


def _paint(img: np.ndarray, mask: np.ndarray, color: tuple[float, float, float]) -> None:
    for ch in range(3):
        img[..., ch] = np.where(mask, color[ch], img[..., ch])


def _plug_mask(wx: np.ndarray, wy: np.ndarray, plug_pos: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    return (wx - plug_pos[0]) ** 2 + (wy - plug_pos[1]) ** 2 <= cfg.plug_radius**2


def plug_footprint_mask(state: WorldState, cfg: EnvConfig, camera_index: int) -> np.ndarray:
    """Boolean pixel mask covered by the plug disc in one camera view."""
    cam = _camera_affines(max(cfg.num_cameras, camera_index + 1))[camera_index]
    wx, wy = _world_grids(cam, cfg.image_size)
    return _plug_mask(wx, wy, state.plug_pos, cfg)


def render_views(state: WorldState, cfg: EnvConfig, num_cameras: int | None = None) -> list[np.ndarray]:
    """Deterministic orthographic renders, one HxWx3 float image in [0,1] per camera."""
    n = cfg.num_cameras if num_cameras is None else num_cameras
    if n < 1:
        raise ValueError(f"num_cameras must be >= 1, got {n}")
    size = cfg.image_size
    line = cfg.port_line_y
    images = []
    for cam in _camera_affines(n):
        wx, wy = _world_grids(cam, size)
        img = np.full((size, size, 3), 0.12, dtype=np.float64)

        _paint(img, wy <= line, (0.28, 0.28, 0.34))
        for px, py in state.port_positions:
            slot = (np.abs(wx - px) <= cfg.port_slot_halfwidth) & (wy <= line) & (wy >= line - 0.025)
            _paint(img, slot, (0.04, 0.04, 0.05))

        _paint(img, _plug_mask(wx, wy, state.plug_pos, cfg), (0.92, 0.55, 0.10))

        gx, gy = state.gripper_pos
        half = state.gripper_width / 2.0
        fw, fh = cfg.finger_width, cfg.finger_height
        for sign in (-1.0, 1.0):
            cx = gx + sign * (half + fw / 2.0)
            finger = (np.abs(wx - cx) <= fw / 2.0) & (np.abs(wy - gy) <= fh / 2.0)
            _paint(img, finger, (0.20, 0.42, 0.92))
        bar = (np.abs(wx - gx) <= half + fw) & (wy >= gy + fh / 2.0) & (wy <= gy + fh / 2.0 + 0.008)
        _paint(img, bar, (0.20, 0.42, 0.92))

        images.append(np.clip(img, 0.0, 1.0))
    return images


def bead_displacement(
    centers: np.ndarray, contact_point: np.ndarray, force: float, cfg: EnvConfig
) -> np.ndarray:
    """Radial push of each bead away from the contact point.

    Magnitude is proportional to the contact force and inversely proportional
    to the bead's distance from the contact point (floored to stay bounded).
    """
    rel = centers - contact_point[None, :]
    dist = np.linalg.norm(rel, axis=1, keepdims=True)
    dist = np.maximum(dist, 1e-9)
    unit = rel / dist
    magnitude = cfg.bead_force_gain * force / (dist + cfg.bead_distance_floor)
    return unit * magnitude


def render_tactile(
    state: WorldState, layout: BeadLayout, cfg: EnvConfig, rng: np.random.Generator
) -> np.ndarray:
    """Stochastic bead-sensor frame: Gaussian blobs at displaced bead centers.

    Returns an (Ht, Wt, 3) float image in [0,1]. With zero force and zero
    jitter this is a pure function of the resting layout.
    """
    size = cfg.tactile_size
    contact = np.array([0.5, 0.5])
    centers = layout.bead_centers + bead_displacement(
        layout.bead_centers, contact, state.contact_force, cfg
    )
    if layout.jitter_sigma > 0.0:
        centers = centers + rng.normal(0.0, layout.jitter_sigma, size=centers.shape)
    centers = np.clip(centers, 0.0, 1.0)

    u = (np.arange(size) + 0.5) / size
    xx, yy = np.meshgrid(u, u)
    d2 = (xx[None, :, :] - centers[:, 0, None, None]) ** 2 + (
        yy[None, :, :] - centers[:, 1, None, None]
    ) ** 2
    intensity = np.exp(-d2 / (2.0 * cfg.bead_blob_sigma**2)).sum(axis=0)
    intensity = np.clip(intensity, 0.0, 1.0)

    bg = np.array([0.05, 0.05, 0.08])
    color = np.array([0.20, 0.85, 0.35])
    img = bg[None, None, :] + intensity[:, :, None] * (color - bg)[None, None, :]
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Environment wrapper
# ---------------------------------------------------------------------------

class PlugInsertionEnv:
    """Stateful convenience wrapper bundling config, bead layout, and RNG streams.

    One instance is single-threaded; run several instances with different
    seeds for parallel rollouts.
    """

    def __init__(self, cfg: EnvConfig, layout_seed: int = 0):
        self.cfg = cfg
        self.layout = BeadLayout.create(cfg, layout_seed)
        self.state: WorldState | None = None
        self._tactile_rng = np.random.default_rng(0)
        self.drift_episode_index = 0

    def reset(self, seed: int, drift: bool = False) -> WorldState:
        if drift:
            self.drift_episode_index += 1
        self.state = reset(self.cfg, seed, drift, self.layout)
        self._tactile_rng = np.random.default_rng([seed, 0x7AC7])
        return self.state

    def step(self, action: ActionCommand) -> WorldState:
        assert self.state is not None, "call reset() first"
        self.state = step(self.state, action, self.cfg)
        return self.state

    def render_views(self) -> list[np.ndarray]:
        assert self.state is not None
        return render_views(self.state, self.cfg)

    def render_tactile(self) -> np.ndarray:
        assert self.state is not None
        return render_tactile(self.state, self.layout, self.cfg, self._tactile_rng)

    def success(self) -> bool:
        assert self.state is not None
        return check_success(self.state, self.cfg)


def rollout_expert(
    env: PlugInsertionEnv,
    seed: int,
    drift: bool = False,
    goal_noise_sigma: float = 0.0,
    max_steps: int | None = None,
) -> tuple[list[WorldState], list[ActionCommand], bool]:
    """Run the scripted expert from reset to success or the step cap."""
    cfg = env.cfg
    cap = cfg.max_episode_steps if max_steps is None else max_steps
    expert_rng = np.random.default_rng([seed, 0xE4])
    noise_rng = np.random.default_rng([seed, 0x40])

    state = env.reset(seed, drift)
    states = [state]
    actions: list[ActionCommand] = []
    for _ in range(cap):
        action = scripted_expert(state, cfg, expert_rng)
        actions.append(action)
        executed = inject_goal_noise(action, goal_noise_sigma, noise_rng)
        state = env.step(executed)
        states.append(state)
        if check_success(state, cfg):
            break
    return states, actions, check_success(state, cfg)
