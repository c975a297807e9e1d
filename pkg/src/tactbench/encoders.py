"""Convolutional vision and tactile encoders plus unit-norm projection heads.

The vision encoder is a small strided CNN; its pooled embedding is the spatial
average of the final feature map, so the embedding dim equals the feature-map
channel count. The tactile encoder prepends a single adapter convolution that
maps the 3h-channel collapsed tactile window to 3 channels, then reuses the
vision trunk architecture. Projection heads are bias-free 2-layer MLPs whose
output is normalized to unit Euclidean norm, so cosine similarity between
latents is a plain dot product.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


class HorizonMismatchError(ValueError):
    """Tactile input channel count does not match the configured horizon."""


class ProjectionContractError(ValueError):
    """Proprio vector supplied to a head that forbids it, or missing from one that requires it."""


@dataclass
class EncoderConfig:
    embed_dim: int = 64
    latent_dim: int = 32
    head_hidden: int = 64
    channels: tuple[int, ...] = (32, 64, 64)
    strides: tuple[int, ...] = (4, 2, 2)
    tactile_horizon: int = 5
    proprio_dim: int = 3

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        d["strides"] = list(self.strides)
        return d

    @staticmethod
    def from_dict(data: dict) -> "EncoderConfig":
        known = {f.name for f in dataclasses.fields(EncoderConfig)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown EncoderConfig keys: {sorted(unknown)}")
        data = dict(data)
        if "channels" in data:
            data["channels"] = tuple(data["channels"])
        if "strides" in data:
            data["strides"] = tuple(data["strides"])
        return EncoderConfig(**data)


def standardize_image(x: torch.Tensor) -> torch.Tensor:
    """Per-image, per-channel spatial standardization.

    Removes the constant background contribution so embeddings are driven by
    scene content rather than shared pixels; constant images map to zero.
    """
    mean = x.mean(dim=(-2, -1), keepdim=True)
    std = x.std(dim=(-2, -1), keepdim=True)
    return (x - mean) / (std + 1e-6)


def _conv_block(cin: int, cout: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size=3, stride=stride, padding=1),
        nn.GroupNorm(min(8, cout), cout),
        nn.ReLU(),
    )


class VisionEncoder(nn.Module):
    """Strided conv stack ending in a stride-1 head conv of ``embed_dim`` channels.

    ``forward`` returns ``(embedding, feature_map)`` where the embedding is the
    spatial average pool of the feature map.
    """

    def __init__(self, cfg: EncoderConfig, in_channels: int = 3):
        super().__init__()
        if len(cfg.channels) != len(cfg.strides):
            raise ValueError("channels and strides must have equal length")
        blocks = []
        prev = in_channels
        for ch, s in zip(cfg.channels, cfg.strides):
            blocks.append(_conv_block(prev, ch, s))
            prev = ch
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Conv2d(prev, cfg.embed_dim, kernel_size=3, stride=1, padding=1)
        self.embed_dim = cfg.embed_dim
        self.in_channels = in_channels

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"expected (B, {self.in_channels}, H, W), got {tuple(x.shape)}")
        if not torch.isfinite(x).all():
            raise ValueError("non-finite encoder input")
        fmap = self.head(self.blocks(standardize_image(x)))
        emb = fmap.mean(dim=(-2, -1))
        return emb, fmap


class TactileEncoder(nn.Module):
    """Adapter conv (3h -> 3 channels) followed by a vision-shaped trunk.

    The adapter is the only horizon-dependent layer; its weights see the
    frames in buffer order, so permuting frames changes the output.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.horizon = cfg.tactile_horizon
        self.in_channels = 3 * cfg.tactile_horizon
        self.adapter = nn.Conv2d(self.in_channels, 3, kernel_size=3, stride=1, padding=1)
        self.trunk = VisionEncoder(cfg, in_channels=3)
        self.embed_dim = cfg.embed_dim

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.ndim != 4:
            raise ValueError(f"expected (B, {self.in_channels}, H, W), got {tuple(x.shape)}")
        if x.shape[1] != self.in_channels:
            raise HorizonMismatchError(
                f"expected {self.in_channels} channels for horizon {self.horizon}, "
                f"got {x.shape[1]}"
            )
        return self.trunk(self.adapter(standardize_image(x)))


class ProjectionHead(nn.Module):
    """Bias-free 2-layer MLP onto the shared latent sphere.

    The tactile-side head concatenates the proprio vector to the embedding
    before projecting, giving the latent space global position information
    alongside local contact information.
    """

    def __init__(self, cfg: EncoderConfig, with_proprio: bool):
        super().__init__()
        self.with_proprio = with_proprio
        in_dim = cfg.embed_dim + (cfg.proprio_dim if with_proprio else 0)
        self.net = nn.Sequential(
            nn.Linear(in_dim, cfg.head_hidden, bias=False),
            nn.ReLU(),
            nn.Linear(cfg.head_hidden, cfg.latent_dim, bias=False),
        )
        self.latent_dim = cfg.latent_dim

    def forward(self, embedding: torch.Tensor, proprio: torch.Tensor | None = None) -> torch.Tensor:
        if self.with_proprio and proprio is None:
            raise ProjectionContractError("this head requires a proprio vector")
        if not self.with_proprio and proprio is not None:
            raise ProjectionContractError("this head does not accept a proprio vector")
        x = embedding if proprio is None else torch.cat([embedding, proprio], dim=-1)
        out = self.net(x)
        return out / out.norm(dim=-1, keepdim=True).clamp_min(1e-12)


# ---------------------------------------------------------------------------
# Parameter utilities
# ---------------------------------------------------------------------------

def params_vector(module: nn.Module) -> np.ndarray:
    """Concatenated copy of all parameters, for bit-identity comparisons."""
    with torch.no_grad():
        parts = [p.detach().cpu().numpy().ravel().copy() for p in module.parameters()]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.float32)


def set_frozen(module: nn.Module, frozen: bool) -> None:
    for p in module.parameters():
        p.requires_grad_(not frozen)


def state_arrays(module: nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.{name}": tensor.detach().cpu().numpy().copy()
        for name, tensor in module.state_dict().items()
    }


def load_state_arrays(module: nn.Module, prefix: str, arrays: dict[str, np.ndarray]) -> None:
    state = {}
    skip = len(prefix) + 1
    for key, value in arrays.items():
        if key.startswith(prefix + "."):
            state[key[skip:]] = torch.from_numpy(np.ascontiguousarray(value))
    module.load_state_dict(state)
