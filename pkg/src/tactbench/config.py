"""Environment and run configuration.

All geometry and sensor knobs live in :class:`EnvConfig`; defaults define the
desk-scale task. Configs round-trip through YAML and reject unknown keys so a
stale file cannot silently misconfigure a run.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml


@dataclass
class EnvConfig:
    # Rendering
    num_cameras: int = 3
    image_size: int = 64
    tactile_size: int = 48

    # Workspace geometry (meters; workspace is the unit square)
    gripper_start_pos: tuple[float, float] = (0.35, 0.75)
    plug_holder_pos: tuple[float, float] = (0.20, 0.40)
    plug_jitter_sigma: float = 0.002
    port_positions: tuple[tuple[float, float], ...] = ((0.55, 0.20), (0.75, 0.20))
    port_line_y: float = 0.20
    port_slot_halfwidth: float = 0.008

    # Gripper and plug
    width_max: float = 0.08
    width_rate: float = 0.02
    grasp_radius: float = 0.015
    grasp_close_threshold: float = 0.03
    release_threshold: float = 0.04
    plug_width: float = 0.02
    plug_radius: float = 0.012
    finger_width: float = 0.006
    finger_height: float = 0.03

    # Motion and contact
    max_step_per_tick: float = 0.02
    insert_tolerance: float = 0.004
    contact_stiffness: float = 50.0
    max_episode_steps: int = 200

    # Bead tactile sensor
    num_beads: int = 12
    bead_jitter_sigma: float = 0.01
    bead_drift_sigma: float = 0.03
    bead_blob_sigma: float = 0.06
    bead_force_gain: float = 0.03
    bead_distance_floor: float = 0.25

    # Scripted expert
    expert_hover: float = 0.05
    expert_carry_y: float = 0.45
    expert_align_tol: float = 0.002
    expert_insert_depth: float = 0.02
    expert_descend_radius: float = 0.003
    expert_waypoint_tol: float = 0.005
    expert_jitter_sigma: float = 0.001

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gripper_start_pos"] = list(self.gripper_start_pos)
        d["plug_holder_pos"] = list(self.plug_holder_pos)
        d["port_positions"] = [list(p) for p in self.port_positions]
        return d

    @staticmethod
    def from_dict(data: dict) -> "EnvConfig":
        known = {f.name for f in dataclasses.fields(EnvConfig)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown EnvConfig keys: {sorted(unknown)}")
        data = dict(data)
        if "gripper_start_pos" in data:
            data["gripper_start_pos"] = tuple(data["gripper_start_pos"])
        if "plug_holder_pos" in data:
            data["plug_holder_pos"] = tuple(data["plug_holder_pos"])
        if "port_positions" in data:
            data["port_positions"] = tuple(tuple(p) for p in data["port_positions"])
        return EnvConfig(**data)

    @staticmethod
    def load(path: str | Path) -> "EnvConfig":
        with open(path) as f:
            data = yaml.safe_load(f)
        return EnvConfig.from_dict(data or {})

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)
