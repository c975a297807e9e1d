"""Contrastive visuo-tactile encoder pretraining.

Batches are timesteps sampled from a single trajectory. Each camera view is
encoded by one shared vision encoder and projected to the shared latent
sphere; the tactile window (plus proprio) is projected by the tactile head.
The symmetric cross-entropy over the per-camera similarity matrices pulls
same-timestep pairs together, and per-camera losses are summed.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .container import read_arrays, write_arrays
from .datastore import Episode, camera_images_at, windows_at
from .encoders import (
    EncoderConfig,
    ProjectionHead,
    TactileEncoder,
    VisionEncoder,
    load_state_arrays,
    set_frozen,
    state_arrays,
)

COMPONENTS = ("vision_encoder", "tactile_encoder", "vision_head", "tactile_head")


class LatentContractError(ValueError):
    """Latents handed to the contrastive loss are not unit-norm."""


@dataclass
class ContrastiveBatch:
    """Unit-norm latents for n timesteps of one episode across C cameras."""

    tactile: torch.Tensor  # (n, L)
    vision: torch.Tensor  # (C, n, L)
    episode_index: int = 0

    @property
    def n(self) -> int:
        return self.tactile.shape[0]

    @property
    def num_cameras(self) -> int:
        return self.vision.shape[0]


def clip_loss(batch: ContrastiveBatch, tau: float) -> torch.Tensor:
    """Per-camera symmetric InfoNCE over the tactile/vision similarity matrix.

    With all similarities equal the value is C*log(n); it is strictly positive
    for any finite inputs.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    n = batch.n
    if n < 2:
        raise ValueError(f"need at least 2 timesteps, got {n}")
    for name, latents in (("tactile", batch.tactile), ("vision", batch.vision)):
        norms = latents.norm(dim=-1)
        if (norms - 1.0).abs().max().item() > 1e-3:
            raise LatentContractError(f"{name} latents are not unit-norm")

    # sims[c, i, j] = tactile_i . vision_{j,c}
    sims = torch.einsum("il,cjl->cij", batch.tactile, batch.vision) / tau
    log_rows = torch.log_softmax(sims, dim=2).diagonal(dim1=1, dim2=2)
    log_cols = torch.log_softmax(sims, dim=1).diagonal(dim1=1, dim2=2)
    return -(log_rows + log_cols).sum() / (2.0 * n)


# ---------------------------------------------------------------------------
# Checkpoint
# ---------------------------------------------------------------------------

@dataclass
class EncoderCheckpoint:
    """Pretrained encoders, projection heads, and per-component freeze flags."""

    config: EncoderConfig
    vision_encoder: VisionEncoder
    tactile_encoder: TactileEncoder
    vision_head: ProjectionHead
    tactile_head: ProjectionHead
    frozen: set[str] = field(default_factory=set)

    def modules(self) -> dict[str, torch.nn.Module]:
        return {
            "vision_encoder": self.vision_encoder,
            "tactile_encoder": self.tactile_encoder,
            "vision_head": self.vision_head,
            "tactile_head": self.tactile_head,
        }

    def save(self, path: str | Path) -> None:
        arrays = {}
        for name, module in self.modules().items():
            arrays.update(state_arrays(module, name))
        write_arrays(
            path,
            arrays,
            meta={
                "kind": "encoders",
                "config": self.config.to_dict(),
                "frozen": sorted(self.frozen),
            },
        )

    @staticmethod
    def load(path: str | Path) -> "EncoderCheckpoint":
        arrays, meta = read_arrays(path)
        if meta.get("kind") != "encoders":
            raise ValueError(f"{path} is not an encoder checkpoint")
        ckpt = init_checkpoint(EncoderConfig.from_dict(meta["config"]), seed=0)
        for name, module in ckpt.modules().items():
            load_state_arrays(module, name, arrays)
        ckpt.frozen = set(meta.get("frozen", []))
        return ckpt


def init_checkpoint(config: EncoderConfig, seed: int) -> EncoderCheckpoint:
    """Freshly initialized encoders and heads (the non-pretrained variant)."""
    torch.manual_seed(seed)
    return EncoderCheckpoint(
        config=config,
        vision_encoder=VisionEncoder(config),
        tactile_encoder=TactileEncoder(config),
        vision_head=ProjectionHead(config, with_proprio=False),
        tactile_head=ProjectionHead(config, with_proprio=True),
    )


def freeze(checkpoint: EncoderCheckpoint, which: set[str] | list[str]) -> EncoderCheckpoint:
    """Flag components whose parameters downstream trainers must not touch."""
    for name in which:
        if name not in COMPONENTS:
            raise KeyError(f"unknown component {name!r}; choose from {COMPONENTS}")
    checkpoint.frozen |= set(which)
    return checkpoint


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class PretrainConfig:
    epochs: int = 10
    batch_timesteps: int = 16  # n timesteps per update, all from one episode
    tau: float = 0.07
    lr: float = 1e-3
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder"] = self.encoder.to_dict()
        return d


def encode_batch(
    ckpt: EncoderCheckpoint, episode: Episode, timesteps: np.ndarray
) -> ContrastiveBatch:
    """Project one episode's sampled timesteps to the shared latent sphere."""
    h = ckpt.config.tactile_horizon
    tactile_in = torch.from_numpy(windows_at(episode, timesteps, h))
    proprio = torch.from_numpy(episode.proprio[timesteps].astype(np.float32))
    cams = torch.from_numpy(camera_images_at(episode, timesteps))  # (n, C, 3, H, W)

    tact_emb, _ = ckpt.tactile_encoder(tactile_in)
    tact_lat = ckpt.tactile_head(tact_emb, proprio)

    n, C = cams.shape[0], cams.shape[1]
    flat = cams.reshape(n * C, *cams.shape[2:])
    vis_emb, _ = ckpt.vision_encoder(flat)
    vis_lat = ckpt.vision_head(vis_emb).reshape(n, C, -1).permute(1, 0, 2)
    return ContrastiveBatch(tactile=tact_lat, vision=vis_lat)


def pretrain(
    episodes: list[Episode], cfg: PretrainConfig, log_every: int = 0
) -> tuple[EncoderCheckpoint, list[float]]:
    """Stochastic gradient optimization of the summed per-camera contrastive loss.

    One epoch visits each episode once in a seeded shuffled order, taking one
    gradient step per visit. Returns the checkpoint and the per-update loss
    history. Deterministic for a fixed seed on a single-threaded run.
    """
    if not episodes:
        raise ValueError("need at least one episode to pretrain")
    ckpt = init_checkpoint(cfg.encoder, cfg.seed)
    params = [p for m in ckpt.modules().values() for p in m.parameters()]
    opt = torch.optim.Adam(params, lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 0xC117])

    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(episodes))
        for ep_idx in order:
            episode = episodes[int(ep_idx)]
            n = min(cfg.batch_timesteps, episode.length)
            if n < 2:
                continue
            timesteps = rng.choice(episode.length, size=n, replace=False)
            batch = encode_batch(ckpt, episode, timesteps)
            loss = clip_loss(batch, cfg.tau)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"contrastive loss diverged at update {len(history)}: {loss.item()}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(float(loss.item()))
            if log_every and len(history) % log_every == 0:
                print(f"update {len(history):5d}  loss {history[-1]:.4f}")
    return ckpt, history
