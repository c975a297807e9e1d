"""DDPM action-chunk policy with a FiLM-conditioned 1-D temporal conv denoiser.

Training uses the full step count of the variance-preserving noise schedule;
sampling runs a strided subset of those steps (scheduler decoupling). Each
camera gets its own encoder; conditioning is the concatenation of per-camera
embeddings, the tactile embedding (unless vision-only), and standardized
proprio, all at observation horizon 1. Execution is receding-horizon: the
first few actions of each sampled chunk run before replanning.
"""
from __future__ import annotations

import dataclasses
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import EnvConfig
from .container import read_arrays, write_arrays
from .datastore import (
    Episode,
    NormStats,
    TactileWindow,
    action_chunk_at,
    camera_images_at,
    compute_norm_stats,
    denormalize_action,
    hwc_to_chw,
    normalize_action,
    normalize_proprio,
    to_float,
    to_uint8,
    windows_at,
)
from .encoders import EncoderConfig, TactileEncoder, VisionEncoder, load_state_arrays, set_frozen, state_arrays
from .pretrain import EncoderCheckpoint
from .simworld import ActionCommand, PlugInsertionEnv, check_success, inject_goal_noise


# ---------------------------------------------------------------------------
# Noise schedule
# ---------------------------------------------------------------------------

@dataclass
class NoiseSchedule:
    """Forward-process coefficients for k_train steps plus a strided inference subset.

    ``alpha_bars[k]`` is the cumulative product for step k, with the k=0 entry
    fixed at 1 by convention.
    """

    k_train: int
    inference_steps: int
    betas: np.ndarray  # (K,), betas[i] belongs to step i+1
    alphas: np.ndarray  # (K,)
    alpha_bars: np.ndarray  # (K+1,), alpha_bars[0] == 1
    inference_indices: np.ndarray  # ascending, subset of 1..K, ends at K
    kind: str


def build_schedule(
    k_train: int = 100, inference_steps: int = 10, kind: str = "squaredcos"
) -> NoiseSchedule:
    if not (k_train >= inference_steps >= 1):
        raise ValueError(f"need k_train >= inference_steps >= 1, got {k_train}, {inference_steps}")
    if kind == "squaredcos":
        s = 0.008
        k = np.arange(k_train + 1, dtype=np.float64)
        f = np.cos((k / k_train + s) / (1 + s) * math.pi / 2.0) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 1e-8, 0.999)
    elif kind == "linear":
        betas = np.linspace(1e-4, 0.02, k_train, dtype=np.float64)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alphas = 1.0 - betas
    alpha_bars = np.concatenate([[1.0], np.cumprod(alphas)])
    indices = np.round(np.arange(1, inference_steps + 1) * k_train / inference_steps).astype(int)
    return NoiseSchedule(
        k_train=k_train,
        inference_steps=inference_steps,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        inference_indices=indices,
        kind=kind,
    )


def _abar(schedule: NoiseSchedule, k) -> torch.Tensor:
    k = torch.as_tensor(k, dtype=torch.long)
    bars = torch.from_numpy(schedule.alpha_bars)
    return bars[k]


def add_noise(schedule: NoiseSchedule, a0: torch.Tensor, eps: torch.Tensor, k) -> torch.Tensor:
    """Variance-preserving forward process: sqrt(abar_k) a0 + sqrt(1-abar_k) eps."""
    if eps.shape != a0.shape:
        raise ValueError(f"noise shape {tuple(eps.shape)} != chunk shape {tuple(a0.shape)}")
    abar = _abar(schedule, k).to(a0.dtype)
    if int(torch.as_tensor(k).min()) < 0 or int(torch.as_tensor(k).max()) > schedule.k_train:
        raise ValueError(f"step index out of range 0..{schedule.k_train}")
    while abar.ndim < a0.ndim:
        abar = abar.unsqueeze(-1)
    return torch.sqrt(abar) * a0 + torch.sqrt(1.0 - abar) * eps


def reconstruct_clean(schedule: NoiseSchedule, a_k: torch.Tensor, eps: torch.Tensor, k) -> torch.Tensor:
    """Invert the forward process with the true noise; exact up to rounding."""
    abar = _abar(schedule, k).to(a_k.dtype)
    while abar.ndim < a_k.ndim:
        abar = abar.unsqueeze(-1)
    return (a_k - torch.sqrt(1.0 - abar) * eps) / torch.sqrt(abar)


# ---------------------------------------------------------------------------
# FiLM-conditioned temporal U-Net
# ---------------------------------------------------------------------------

def film_modulate(features: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Per-channel affine modulation of a (B, C, T) feature map."""
    if gamma.shape != beta.shape or gamma.shape[-1] != features.shape[1]:
        raise ValueError("gamma/beta must be (B, C) matching the feature channels")
    return gamma.unsqueeze(-1) * features + beta.unsqueeze(-1)


class FiLM(nn.Module):
    """Conditioning layer producing per-channel scale and shift.

    The affine maps are zero-initialized so gamma = 1 and beta = 0 at init:
    the layer starts as the identity.
    """

    def __init__(self, cond_dim: int, channels: int):
        super().__init__()
        self.to_scale = nn.Linear(cond_dim, channels)
        self.to_shift = nn.Linear(cond_dim, channels)
        nn.init.zeros_(self.to_scale.weight)
        nn.init.zeros_(self.to_scale.bias)
        nn.init.zeros_(self.to_shift.weight)
        nn.init.zeros_(self.to_shift.bias)

    def gamma_beta(self, cond: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return 1.0 + self.to_scale(cond), self.to_shift(cond)

    def forward(self, features: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        gamma, beta = self.gamma_beta(cond)
        return film_modulate(features, gamma, beta)


class SinusoidalPosEmb(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(10000.0) * torch.arange(half, dtype=x.dtype, device=x.device) / max(half - 1, 1)
        )
        args = x[:, None] * freqs[None, :]
        return torch.cat([args.sin(), args.cos()], dim=-1)


class ResidualBlock1d(nn.Module):
    def __init__(self, cin: int, cout: int, cond_dim: int, kernel_size: int):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = nn.Conv1d(cin, cout, kernel_size, padding=pad)
        self.gn1 = nn.GroupNorm(min(8, cout), cout)
        self.film = FiLM(cond_dim, cout)
        self.conv2 = nn.Conv1d(cout, cout, kernel_size, padding=pad)
        self.gn2 = nn.GroupNorm(min(8, cout), cout)
        self.act = nn.Mish()
        self.res = nn.Conv1d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.act(self.gn1(self.conv1(x)))
        h = self.film(h, cond)
        h = self.act(self.gn2(self.conv2(h)))
        return h + self.res(x)


class ConditionalUnet1d(nn.Module):
    """Temporal conv denoiser over action chunks with FiLM at every level.

    ``widths`` sets the per-level channel counts; each extra level halves the
    temporal length on the way down and mirrors back up with skip connections.
    A single-entry ``widths`` gives a flat (no-resampling) network small
    enough for finite-difference checks.
    """

    def __init__(
        self,
        action_dim: int,
        cond_dim: int,
        widths: tuple[int, ...] = (32, 64, 128),
        kernel_size: int = 5,
        temb_dim: int = 64,
    ):
        super().__init__()
        self.action_dim = action_dim
        self.cond_dim = cond_dim
        self.temb = nn.Sequential(
            SinusoidalPosEmb(temb_dim),
            nn.Linear(temb_dim, temb_dim * 2),
            nn.Mish(),
            nn.Linear(temb_dim * 2, temb_dim),
        )
        total_cond = temb_dim + cond_dim

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        prev = action_dim
        for i, w in enumerate(widths):
            self.down_blocks.append(ResidualBlock1d(prev, w, total_cond, kernel_size))
            if i < len(widths) - 1:
                self.downsamples.append(nn.Conv1d(w, w, 3, stride=2, padding=1))
            prev = w

        self.mid = ResidualBlock1d(prev, prev, total_cond, kernel_size)

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for i in reversed(range(len(widths) - 1)):
            self.upsamples.append(nn.ConvTranspose1d(widths[i + 1], widths[i + 1], 4, stride=2, padding=1))
            self.up_blocks.append(
                ResidualBlock1d(widths[i + 1] + widths[i], widths[i], total_cond, kernel_size)
            )

        self.final = nn.Sequential(
            nn.Conv1d(widths[0], widths[0], kernel_size, padding=kernel_size // 2),
            nn.Mish(),
            nn.Conv1d(widths[0], action_dim, 1),
        )

    def forward(self, chunk: torch.Tensor, k, cond: torch.Tensor) -> torch.Tensor:
        """Predict the noise in ``chunk`` (B, T, A) at schedule step(s) ``k``."""
        if chunk.ndim != 3 or chunk.shape[-1] != self.action_dim:
            raise ValueError(f"expected (B, T, {self.action_dim}) chunk, got {tuple(chunk.shape)}")
        k = torch.as_tensor(k, dtype=chunk.dtype, device=chunk.device)
        if k.ndim == 0:
            k = k.expand(chunk.shape[0])
        temb = self.temb(k)
        full_cond = torch.cat([temb, cond], dim=-1)

        x = chunk.transpose(1, 2)  # (B, A, T)
        skips = []
        for i, block in enumerate(self.down_blocks):
            x = block(x, full_cond)
            if i < len(self.down_blocks) - 1:
                skips.append(x)
                x = self.downsamples[i](x)
        x = self.mid(x, full_cond)
        for up, block in zip(self.upsamples, self.up_blocks):
            x = up(x)
            x = block(torch.cat([x, skips.pop()], dim=1), full_cond)
        return self.final(x).transpose(1, 2)


def training_loss(
    denoiser: ConditionalUnet1d,
    schedule: NoiseSchedule,
    cond: torch.Tensor,
    a0: torch.Tensor,
    k,
    eps: torch.Tensor,
) -> torch.Tensor:
    """MSE between the drawn noise and the denoiser's prediction at step k."""
    noised = add_noise(schedule, a0, eps, k)
    pred = denoiser(noised, k, cond)
    loss = torch.mean((pred - eps) ** 2)
    if not torch.isfinite(loss):
        raise RuntimeError("non-finite denoising loss")
    return loss


@torch.no_grad()
def sample_chunk(
    denoiser: ConditionalUnet1d,
    schedule: NoiseSchedule,
    cond: torch.Tensor,
    horizon: int,
    generator: torch.Generator,
) -> torch.Tensor:
    """Reverse diffusion over the strided inference subset; returns (B, T, A).

    Uses standard posterior coefficients between consecutive subset steps,
    clipping the clean-chunk estimate to the normalized action range. The
    terminal step adds no noise. Output is in normalized action space.
    """
    batch = cond.shape[0]
    dtype = cond.dtype
    x = torch.randn(batch, horizon, denoiser.action_dim, generator=generator, dtype=dtype)
    ks = schedule.inference_indices[::-1]
    for i, k in enumerate(ks):
        k_prev = int(ks[i + 1]) if i + 1 < len(ks) else 0
        abar_k = float(schedule.alpha_bars[int(k)])
        abar_prev = float(schedule.alpha_bars[k_prev])
        eps_hat = denoiser(x, torch.full((batch,), float(k), dtype=dtype), cond)
        x0 = (x - math.sqrt(1.0 - abar_k) * eps_hat) / math.sqrt(abar_k)
        x0 = x0.clamp(-1.0, 1.0)
        alpha_eff = abar_k / abar_prev
        beta_eff = 1.0 - alpha_eff
        mean = (
            math.sqrt(abar_prev) * beta_eff / (1.0 - abar_k) * x0
            + math.sqrt(alpha_eff) * (1.0 - abar_prev) / (1.0 - abar_k) * x
        )
        if k_prev > 0:
            var = beta_eff * (1.0 - abar_prev) / (1.0 - abar_k)
            noise = torch.randn(x.shape, generator=generator, dtype=dtype)
            x = mean + math.sqrt(var) * noise
        else:
            x = mean
        if not torch.isfinite(x).all():
            raise RuntimeError(f"non-finite sample at inference step k={k}")
    return x


# ---------------------------------------------------------------------------
# Policy network bundle
# ---------------------------------------------------------------------------

@dataclass
class DiffusionConfig:
    pred_horizon: int = 20
    action_horizon: int = 8
    action_dim: int = 3
    k_train: int = 100
    inference_steps: int = 10
    schedule_kind: str = "squaredcos"
    widths: tuple[int, ...] = (32, 64, 128)
    kernel_size: int = 5
    temb_dim: int = 64
    vision_only: bool = False
    freeze_tactile: bool = False
    num_cameras: int = 3
    updates: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    lr_decay: bool = True  # cosine anneal to 5% of lr over the run
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        d["encoder"] = self.encoder.to_dict()
        return d

    @staticmethod
    def from_dict(data: dict) -> "DiffusionConfig":
        known = {f.name for f in dataclasses.fields(DiffusionConfig)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown DiffusionConfig keys: {sorted(unknown)}")
        data = dict(data)
        if "widths" in data:
            data["widths"] = tuple(data["widths"])
        if "encoder" in data:
            data["encoder"] = EncoderConfig.from_dict(data["encoder"])
        return DiffusionConfig(**data)


class DiffusionPolicy(nn.Module):
    """Per-camera encoders, optional tactile encoder, and the conditioned denoiser.

    Conditioning layout (fixed, recorded in checkpoints): per-camera
    embeddings in camera order, then the tactile embedding when present, then
    the standardized proprio vector.
    """

    def __init__(self, cfg: DiffusionConfig):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder
        self.vision_encoders = nn.ModuleList(
            [VisionEncoder(enc) for _ in range(cfg.num_cameras)]
        )
        self.tactile_encoder = None if cfg.vision_only else TactileEncoder(enc)
        self.cond_dim = cfg.num_cameras * enc.embed_dim + enc.proprio_dim
        if not cfg.vision_only:
            self.cond_dim += enc.embed_dim
        self.denoiser = ConditionalUnet1d(
            action_dim=cfg.action_dim,
            cond_dim=self.cond_dim,
            widths=cfg.widths,
            kernel_size=cfg.kernel_size,
            temb_dim=cfg.temb_dim,
        )

    def cond_layout(self) -> dict:
        return {
            "cameras": self.cfg.num_cameras,
            "embed_dim": self.cfg.encoder.embed_dim,
            "tactile": not self.cfg.vision_only,
            "proprio_dim": self.cfg.encoder.proprio_dim,
            "order": "cameras, tactile?, proprio",
        }

    def forward_cond(
        self,
        images: torch.Tensor,  # (B, C, 3, H, W)
        tactile: torch.Tensor | None,  # (B, 3h, Ht, Wt) or None
        proprio: torch.Tensor,  # (B, proprio_dim), already standardized
    ) -> torch.Tensor:
        parts = []
        for c, enc in enumerate(self.vision_encoders):
            emb, _ = enc(images[:, c])
            parts.append(emb)
        if self.tactile_encoder is not None:
            if tactile is None:
                raise ValueError("policy was trained visuo-tactile; tactile input required")
            emb, _ = self.tactile_encoder(tactile)
            parts.append(emb)
        elif tactile is not None:
            raise ValueError("vision-only policy does not accept tactile input")
        parts.append(proprio)
        return torch.cat(parts, dim=-1)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _batch_tensors(
    episodes: list[Episode],
    picks: list[tuple[int, int]],
    cfg: DiffusionConfig,
    stats: NormStats,
) -> tuple[torch.Tensor, torch.Tensor | None, torch.Tensor, torch.Tensor]:
    h = cfg.encoder.tactile_horizon
    images, windows, proprios, chunks = [], [], [], []
    for ep_idx, t in picks:
        ep = episodes[ep_idx]
        ts = np.array([t])
        images.append(camera_images_at(ep, ts)[0])
        if not cfg.vision_only:
            windows.append(windows_at(ep, ts, h)[0])
        proprios.append(normalize_proprio(stats, ep.proprio[t]))
        chunks.append(normalize_action(stats, action_chunk_at(ep, t, cfg.pred_horizon)))
    images_t = torch.from_numpy(np.stack(images))
    tactile_t = None if cfg.vision_only else torch.from_numpy(np.stack(windows))
    proprio_t = torch.from_numpy(np.stack(proprios).astype(np.float32))
    chunks_t = torch.from_numpy(np.stack(chunks).astype(np.float32))
    return images_t, tactile_t, proprio_t, chunks_t


def train_diffusion(
    episodes: list[Episode],
    cfg: DiffusionConfig,
    pretrained: EncoderCheckpoint | None = None,
    log_every: int = 0,
) -> tuple[DiffusionPolicy, NoiseSchedule, NormStats, list[float]]:
    """Train the noise-prediction objective over (episode, timestep) samples.

    Per-camera encoders start from the shared pretrained vision encoder when a
    checkpoint is given; the tactile encoder likewise. Freeze flags (from the
    config or inherited from the checkpoint) pin the tactile encoder exactly.
    """
    if not episodes:
        raise ValueError("need at least one episode to train")
    torch.manual_seed(cfg.seed)
    policy = DiffusionPolicy(cfg)
    schedule = build_schedule(cfg.k_train, cfg.inference_steps, cfg.schedule_kind)
    stats = compute_norm_stats(episodes)

    freeze_tactile = cfg.freeze_tactile
    if pretrained is not None:
        for enc in policy.vision_encoders:
            enc.load_state_dict(pretrained.vision_encoder.state_dict())
        if policy.tactile_encoder is not None:
            policy.tactile_encoder.load_state_dict(pretrained.tactile_encoder.state_dict())
        freeze_tactile = freeze_tactile or ("tactile_encoder" in pretrained.frozen)
    if freeze_tactile:
        if policy.tactile_encoder is None:
            raise ValueError("freeze_tactile requires a visuo-tactile policy")
        set_frozen(policy.tactile_encoder, True)
    policy.cfg.freeze_tactile = freeze_tactile

    params = [p for p in policy.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr)
    lr_sched = (
        torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.updates, eta_min=cfg.lr * 0.05)
        if cfg.lr_decay
        else None
    )
    rng = np.random.default_rng([cfg.seed, 0xD1FF])
    gen = torch.Generator().manual_seed(cfg.seed)

    history: list[float] = []
    for update in range(cfg.updates):
        picks = []
        for _ in range(cfg.batch_size):
            e = int(rng.integers(len(episodes)))
            picks.append((e, int(rng.integers(episodes[e].length))))
        images, tactile, proprio, chunks = _batch_tensors(episodes, picks, cfg, stats)
        cond = policy.forward_cond(images, tactile, proprio)
        k = torch.randint(1, schedule.k_train + 1, (cfg.batch_size,), generator=gen)
        eps = torch.randn(chunks.shape, generator=gen)
        loss = training_loss(policy.denoiser, schedule, cond, chunks, k, eps)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if lr_sched is not None:
            lr_sched.step()
        history.append(float(loss.item()))
        if log_every and (update + 1) % log_every == 0:
            print(f"update {update + 1:5d}  loss {history[-1]:.4f}")
    return policy, schedule, stats, history


# ---------------------------------------------------------------------------
# Rollout
# ---------------------------------------------------------------------------

def _quantized_chw(img: np.ndarray) -> np.ndarray:
    # Match the training distribution: episodes store uint8 images.
    return hwc_to_chw(to_float(to_uint8(img)))


def execute_receding_horizon(
    policy: DiffusionPolicy,
    schedule: NoiseSchedule,
    stats: NormStats,
    env: PlugInsertionEnv,
    seed: int,
    *,
    action_horizon: int | None = None,
    goal_noise_sigma: float = 0.0,
    drift: bool = False,
    record_tactile: bool = False,
    max_steps: int | None = None,
) -> dict:
    """Run one seeded episode: sample a chunk, execute T_a actions, replan.

    Returns success, step count, and (optionally) every tactile frame seen,
    for distribution-shift diagnostics.
    """
    cfg = policy.cfg
    env_cfg = env.cfg
    t_a = cfg.action_horizon if action_horizon is None else action_horizon
    cap = env_cfg.max_episode_steps if max_steps is None else max_steps
    h = cfg.encoder.tactile_horizon

    gen = torch.Generator().manual_seed(seed)
    noise_rng = np.random.default_rng([seed, 0x40])

    state = env.reset(seed, drift)
    window: TactileWindow | None = None
    queue: deque[np.ndarray] = deque()
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

            if not queue:
                views = [
                    _quantized_chw(v) for v in env.render_views()
                ]
                images = torch.from_numpy(np.stack(views)[None])  # (1, C, 3, H, W)
                tactile = None
                if policy.tactile_encoder is not None:
                    tactile = torch.from_numpy(window.collapsed()[None])
                proprio = torch.from_numpy(
                    normalize_proprio(stats, state.proprio()).astype(np.float32)[None]
                )
                cond = policy.forward_cond(images, tactile, proprio)
                chunk_n = sample_chunk(policy.denoiser, schedule, cond, cfg.pred_horizon, gen)
                chunk = denormalize_action(stats, chunk_n[0].numpy().astype(np.float64))
                for row in chunk[:t_a]:
                    queue.append(row)

            row = queue.popleft()
            action = ActionCommand(
                target_pos=np.clip(row[:2], 0.0, 1.0), gripper_cmd=float(np.clip(row[2], 0.0, 1.0))
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

def save_diffusion_checkpoint(
    path: str | Path,
    policy: DiffusionPolicy,
    stats: NormStats,
) -> None:
    arrays = {}
    for i, enc in enumerate(policy.vision_encoders):
        arrays.update(state_arrays(enc, f"vision_encoders.{i}"))
    if policy.tactile_encoder is not None:
        arrays.update(state_arrays(policy.tactile_encoder, "tactile_encoder"))
    arrays.update(state_arrays(policy.denoiser, "denoiser"))
    frozen = ["tactile_encoder"] if policy.cfg.freeze_tactile else []
    write_arrays(
        path,
        arrays,
        meta={
            "kind": "diffusion",
            "config": policy.cfg.to_dict(),
            "norm_stats": stats.to_dict(),
            "cond_layout": policy.cond_layout(),
            "frozen": frozen,
        },
    )


def load_diffusion_checkpoint(path: str | Path) -> tuple[DiffusionPolicy, NoiseSchedule, NormStats]:
    arrays, meta = read_arrays(path)
    if meta.get("kind") != "diffusion":
        raise ValueError(f"{path} is not a diffusion policy checkpoint")
    cfg = DiffusionConfig.from_dict(meta["config"])
    policy = DiffusionPolicy(cfg)
    for i, enc in enumerate(policy.vision_encoders):
        load_state_arrays(enc, f"vision_encoders.{i}", arrays)
    if policy.tactile_encoder is not None:
        load_state_arrays(policy.tactile_encoder, "tactile_encoder", arrays)
    load_state_arrays(policy.denoiser, "denoiser", arrays)
    schedule = build_schedule(cfg.k_train, cfg.inference_steps, cfg.schedule_kind)
    stats = NormStats.from_dict(meta["norm_stats"])
    return policy, schedule, stats
