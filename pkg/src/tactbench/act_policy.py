"""Chunked-action CVAE transformer policy with temporal ensembling.

A small encoder-decoder transformer predicts the next action chunk in the
relative frame (position targets as offsets from the current gripper pose,
gripper command absolute). Visual and tactile feature maps enter unpooled as
flattened token sequences. The CVAE style latent is sampled from the learned
posterior during training and set exactly to zero at inference. At rollout
time every live chunk votes for the current step and the votes are averaged
with exponentially decaying weights in the global frame.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .container import read_arrays, write_arrays
from .datastore import (
    Episode,
    NormStats,
    TactileWindow,
    action_chunk_at,
    camera_images_at,
    denormalize_action,
    hwc_to_chw,
    normalize_action,
    normalize_proprio,
    norm_stats_from_arrays,
    to_float,
    to_uint8,
    windows_at,
)
from .encoders import EncoderConfig, TactileEncoder, VisionEncoder, load_state_arrays, state_arrays
from .pretrain import EncoderCheckpoint
from .simworld import ActionCommand, PlugInsertionEnv, check_success, inject_goal_noise


@dataclass
class ACTConfig:
    chunk: int = 20
    action_dim: int = 3
    d_model: int = 64
    nheads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    dim_feedforward: int = 128
    z_dim: int = 8
    beta_kl: float = 10.0
    ensemble_k: float = 0.25
    oldest_first: bool = True  # age 0 (highest weight) = oldest live prediction
    vision_only: bool = False
    num_cameras: int = 3
    image_size: int = 64
    tactile_size: int = 48
    updates: int = 3000
    batch_size: int = 48
    lr: float = 1e-3
    lr_decay: bool = True
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["encoder"] = self.encoder.to_dict()
        return d

    @staticmethod
    def from_dict(data: dict) -> "ACTConfig":
        known = {f.name for f in dataclasses.fields(ACTConfig)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown ACTConfig keys: {sorted(unknown)}")
        data = dict(data)
        if "encoder" in data:
            data["encoder"] = EncoderConfig.from_dict(data["encoder"])
        return ACTConfig(**data)


def _fmap_tokens(encoder, images: torch.Tensor) -> torch.Tensor:
    """Flatten an encoder feature map to (B, Hf*Wf, D) without pooling."""
    _, fmap = encoder(images)
    b, d = fmap.shape[0], fmap.shape[1]
    return fmap.reshape(b, d, -1).transpose(1, 2)


class ACTPolicy(nn.Module):
    """CVAE encoder, observation tokenizer, and transformer decoder head.

    Token sequence layout (fixed): style latent token, proprio token, then
    per-camera flattened feature maps in camera order, then tactile feature
    map tokens when present.
    """

    def __init__(self, cfg: ACTConfig):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder
        dm = cfg.d_model
        self.vision_encoders = nn.ModuleList([VisionEncoder(enc) for _ in range(cfg.num_cameras)])
        self.tactile_encoder = None if cfg.vision_only else TactileEncoder(enc)

        self.vision_proj = nn.Linear(enc.embed_dim, dm)
        self.tactile_proj = None if cfg.vision_only else nn.Linear(enc.embed_dim, dm)
        self.proprio_proj = nn.Linear(enc.proprio_dim, dm)
        self.z_proj = nn.Linear(cfg.z_dim, dm)

        with torch.no_grad():
            dummy = torch.zeros(1, 3, cfg.image_size, cfg.image_size)
            self.vision_tokens = _fmap_tokens(self.vision_encoders[0], dummy).shape[1]
            if self.tactile_encoder is not None:
                dummy_t = torch.zeros(1, 3 * enc.tactile_horizon, cfg.tactile_size, cfg.tactile_size)
                self.tactile_tokens = _fmap_tokens(self.tactile_encoder, dummy_t).shape[1]
            else:
                self.tactile_tokens = 0
        seq_len = 2 + cfg.num_cameras * self.vision_tokens + self.tactile_tokens
        self.pos_emb = nn.Parameter(torch.randn(1, seq_len, dm) * 0.02)

        layer = nn.TransformerEncoderLayer(
            dm, cfg.nheads, cfg.dim_feedforward, dropout=0.0, batch_first=True
        )
        self.encoder = nn.TransformerEncoder(layer, cfg.enc_layers)
        dec_layer = nn.TransformerDecoderLayer(
            dm, cfg.nheads, cfg.dim_feedforward, dropout=0.0, batch_first=True
        )
        self.decoder = nn.TransformerDecoder(dec_layer, cfg.dec_layers)
        self.query_emb = nn.Parameter(torch.randn(1, cfg.chunk, dm) * 0.02)
        self.action_head = nn.Linear(dm, cfg.action_dim)

        # CVAE posterior over the demonstrated chunk.
        self.cls_emb = nn.Parameter(torch.randn(1, 1, dm) * 0.02)
        self.post_action_proj = nn.Linear(cfg.action_dim, dm)
        self.post_pos_emb = nn.Parameter(torch.randn(1, 2 + cfg.chunk, dm) * 0.02)
        post_layer = nn.TransformerEncoderLayer(
            dm, cfg.nheads, cfg.dim_feedforward, dropout=0.0, batch_first=True
        )
        self.post_encoder = nn.TransformerEncoder(post_layer, cfg.enc_layers)
        self.latent_proj = nn.Linear(dm, 2 * cfg.z_dim)

    def encode_posterior(
        self, proprio: torch.Tensor, chunk: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Posterior mean and log-variance from the ground-truth chunk."""
        b = chunk.shape[0]
        tokens = torch.cat(
            [
                self.cls_emb.expand(b, -1, -1),
                self.proprio_proj(proprio).unsqueeze(1),
                self.post_action_proj(chunk),
            ],
            dim=1,
        )
        out = self.post_encoder(tokens + self.post_pos_emb)
        stats = self.latent_proj(out[:, 0])
        return stats[:, : self.cfg.z_dim], stats[:, self.cfg.z_dim :]

    def build_tokens(
        self,
        images: torch.Tensor,  # (B, C, 3, H, W)
        tactile: torch.Tensor | None,  # (B, 3h, Ht, Wt) or None
        proprio: torch.Tensor,  # (B, proprio_dim), standardized
        z: torch.Tensor,  # (B, z_dim)
    ) -> torch.Tensor:
        parts = [self.z_proj(z).unsqueeze(1), self.proprio_proj(proprio).unsqueeze(1)]
        for c, enc in enumerate(self.vision_encoders):
            parts.append(self.vision_proj(_fmap_tokens(enc, images[:, c])))
        if self.tactile_encoder is not None:
            if tactile is None:
                raise ValueError("policy was trained visuo-tactile; tactile input required")
            parts.append(self.tactile_proj(_fmap_tokens(self.tactile_encoder, tactile)))
        elif tactile is not None:
            raise ValueError("vision-only policy does not accept tactile input")
        return torch.cat(parts, dim=1) + self.pos_emb

    def forward(
        self,
        images: torch.Tensor,
        tactile: torch.Tensor | None,
        proprio: torch.Tensor,
        z: torch.Tensor,
    ) -> torch.Tensor:
        """Normalized relative action chunk (B, chunk, action_dim)."""
        tokens = self.build_tokens(images, tactile, proprio, z)
        memory = self.encoder(tokens)
        queries = self.query_emb.expand(tokens.shape[0], -1, -1)
        decoded = self.decoder(queries, memory)
        return self.action_head(decoded)


def gaussian_kl(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over latent dims, mean over batch."""
    kl_per = 0.5 * (mu.pow(2) + logvar.exp() - 1.0 - logvar).sum(dim=-1)
    return kl_per.mean()


def act_loss(
    pred_chunk: torch.Tensor,
    true_chunk: torch.Tensor,
    mu: torch.Tensor,
    logvar: torch.Tensor,
    beta_kl: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """L1 reconstruction plus beta-weighted Gaussian KL; returns (total, l1, kl)."""
    if pred_chunk.shape != true_chunk.shape:
        raise ValueError("prediction and target shapes differ")
    l1 = (pred_chunk - true_chunk).abs().mean()
    kl = gaussian_kl(mu, logvar)
    return l1 + beta_kl * kl, l1, kl


def temporal_ensemble(actions: np.ndarray, k: float, oldest_first: bool = True) -> np.ndarray:
    """Weighted average of all live votes for one step, weights w_i = exp(-k*i).

    ``actions`` is (m, action_dim) in the global frame. With ``oldest_first``
    the first row is the oldest prediction and receives the highest weight;
    flipping the convention indexes ages from the newest row instead.
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 2 or actions.shape[0] == 0:
        raise ValueError("need a non-empty (m, action_dim) buffer")
    ages = np.arange(actions.shape[0], dtype=np.float64)
    if not oldest_first:
        ages = ages[::-1]
    w = np.exp(-k * ages)
    return (w[:, None] * actions).sum(axis=0) / w.sum()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def relative_chunk(episode: Episode, t: int, horizon: int) -> np.ndarray:
    """Future chunk with position targets relative to the pose at time t."""
    chunk = action_chunk_at(episode, t, horizon).copy()
    chunk[:, 0] -= episode.proprio[t, 0]
    chunk[:, 1] -= episode.proprio[t, 1]
    return chunk


def relative_norm_stats(episodes: list[Episode], horizon: int) -> NormStats:
    """Exact min/max of relative chunks over every (episode, t) pair."""
    mins, maxs = [], []
    proprio = np.concatenate([e.proprio for e in episodes], axis=0)
    for ep in episodes:
        for t in range(ep.length):
            chunk = relative_chunk(ep, t, horizon)
            mins.append(chunk.min(axis=0))
            maxs.append(chunk.max(axis=0))
    rel = np.stack(mins + maxs)
    return norm_stats_from_arrays(rel, proprio)


def train_act(
    episodes: list[Episode],
    cfg: ACTConfig,
    pretrained: EncoderCheckpoint | None = None,
    log_every: int = 0,
) -> tuple[ACTPolicy, NormStats, list[float]]:
    """End-to-end CVAE training on normalized relative chunks.

    The posterior is sampled during training; inference (see the rollout
    helpers) always uses a zero latent. Encoder freezing is deliberately not
    supported here: the unpooled feature-map tokens bypass any narrow
    bottleneck that freezing could pin.
    """
    if not episodes:
        raise ValueError("need at least one episode to train")
    torch.manual_seed(cfg.seed)
    policy = ACTPolicy(cfg)
    stats = relative_norm_stats(episodes, cfg.chunk)

    if pretrained is not None:
        for enc in policy.vision_encoders:
            enc.load_state_dict(pretrained.vision_encoder.state_dict())
        if policy.tactile_encoder is not None:
            policy.tactile_encoder.load_state_dict(pretrained.tactile_encoder.state_dict())

    opt = torch.optim.Adam(policy.parameters(), lr=cfg.lr)
    lr_sched = (
        torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.updates, eta_min=cfg.lr * 0.05)
        if cfg.lr_decay
        else None
    )
    rng = np.random.default_rng([cfg.seed, 0xAC7])
    gen = torch.Generator().manual_seed(cfg.seed)
    h = cfg.encoder.tactile_horizon

    history: list[float] = []
    for update in range(cfg.updates):
        images, windows, proprios, chunks = [], [], [], []
        for _ in range(cfg.batch_size):
            e = int(rng.integers(len(episodes)))
            ep = episodes[e]
            t = int(rng.integers(ep.length))
            ts = np.array([t])
            images.append(camera_images_at(ep, ts)[0])
            if not cfg.vision_only:
                windows.append(windows_at(ep, ts, h)[0])
            proprios.append(normalize_proprio(stats, ep.proprio[t]))
            chunks.append(normalize_action(stats, relative_chunk(ep, t, cfg.chunk)))
        images_t = torch.from_numpy(np.stack(images))
        tactile_t = None if cfg.vision_only else torch.from_numpy(np.stack(windows))
        proprio_t = torch.from_numpy(np.stack(proprios).astype(np.float32))
        chunks_t = torch.from_numpy(np.stack(chunks).astype(np.float32))

        mu, logvar = policy.encode_posterior(proprio_t, chunks_t)
        noise = torch.randn(mu.shape, generator=gen)
        z = mu + torch.exp(0.5 * logvar) * noise
        pred = policy(images_t, tactile_t, proprio_t, z)
        loss, l1, kl = act_loss(pred, chunks_t, mu, logvar, cfg.beta_kl)
        if not torch.isfinite(loss):
            raise RuntimeError(f"ACT loss diverged at update {update}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if lr_sched is not None:
            lr_sched.step()
        history.append(float(loss.item()))
        if log_every and (update + 1) % log_every == 0:
            print(
                f"update {update + 1:5d}  loss {history[-1]:.4f}  "
                f"l1 {float(l1):.4f}  kl {float(kl):.4f}"
            )
    return policy, stats, history


# ---------------------------------------------------------------------------
# Rollout with temporal ensembling
# ---------------------------------------------------------------------------

def _quantized_chw(img: np.ndarray) -> np.ndarray:
    return hwc_to_chw(to_float(to_uint8(img)))


def execute_with_ensembling(
    policy: ACTPolicy,
    stats: NormStats,
    env: PlugInsertionEnv,
    seed: int,
    *,
    goal_noise_sigma: float = 0.0,
    drift: bool = False,
    record_tactile: bool = False,
    ensemble_k: float | None = None,
    max_steps: int | None = None,
) -> dict:
    """Predict a chunk every tick; execute the ensembled vote for the current step.

    Relative predictions are converted to the global frame with the gripper
    pose recorded when each chunk was made, then averaged with exponentially
    decaying weights (oldest prediction weighted highest by default).
    """
    cfg = policy.cfg
    env_cfg = env.cfg
    cap = env_cfg.max_episode_steps if max_steps is None else max_steps
    k = cfg.ensemble_k if ensemble_k is None else ensemble_k
    h = cfg.encoder.tactile_horizon

    noise_rng = np.random.default_rng([seed, 0x40])
    state = env.reset(seed, drift)
    window: TactileWindow | None = None
    live: list[tuple[int, np.ndarray, np.ndarray]] = []  # (birth, origin xy, chunk)
    tactile_log: list[np.ndarray] = []

    policy.eval()
    with torch.no_grad():
        for t in range(cap):
            needs_tactile = policy.tactile_encoder is not None or record_tactile
            if needs_tactile:
                frame = _quantized_chw(env.render_tactile())
                window = TactileWindow(frame, h) if window is None else window.push(frame)
                if record_tactile:
                    tactile_log.append(frame)

            views = [_quantized_chw(v) for v in env.render_views()]
            images = torch.from_numpy(np.stack(views)[None])
            tactile = None
            if policy.tactile_encoder is not None:
                tactile = torch.from_numpy(window.collapsed()[None])
            proprio = torch.from_numpy(
                normalize_proprio(stats, state.proprio()).astype(np.float32)[None]
            )
            z = torch.zeros(1, cfg.z_dim)
            pred_n = policy(images, tactile, proprio, z)[0].numpy().astype(np.float64)
            chunk = denormalize_action(stats, pred_n)
            live.append((t, state.gripper_pos.copy(), chunk))
            live = [(b, o, c) for b, o, c in live if t - b < cfg.chunk]

            votes = []
            for b, origin, c in live:  # ascending birth order: oldest first
                row = c[t - b]
                votes.append([origin[0] + row[0], origin[1] + row[1], row[2]])
            blended = temporal_ensemble(np.array(votes), k, cfg.oldest_first)

            action = ActionCommand(
                target_pos=np.clip(blended[:2], 0.0, 1.0),
                gripper_cmd=float(np.clip(blended[2], 0.0, 1.0)),
            )
            executed = inject_goal_noise(action, goal_noise_sigma, noise_rng)
            state = env.step(executed)
            if check_success(state, env_cfg):
                break

    return {
        "success": check_success(state, env_cfg),
        "steps": state.step_count,
        "tactile_frames": tactile_log,
    }


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_act_checkpoint(path: str | Path, policy: ACTPolicy, stats: NormStats) -> None:
    arrays = state_arrays(policy, "act")
    write_arrays(
        path,
        arrays,
        meta={
            "kind": "act",
            "config": policy.cfg.to_dict(),
            "norm_stats": stats.to_dict(),
            "token_layout": {
                "order": "z, proprio, cameras, tactile?",
                "vision_tokens_per_camera": policy.vision_tokens,
                "tactile_tokens": policy.tactile_tokens,
            },
            "frozen": [],
        },
    )


def load_act_checkpoint(path: str | Path) -> tuple[ACTPolicy, NormStats]:
    arrays, meta = read_arrays(path)
    if meta.get("kind") != "act":
        raise ValueError(f"{path} is not a chunked-transformer policy checkpoint")
    cfg = ACTConfig.from_dict(meta["config"])
    policy = ACTPolicy(cfg)
    load_state_arrays(policy, "act", arrays)
    stats = NormStats.from_dict(meta["norm_stats"])
    return policy, stats
