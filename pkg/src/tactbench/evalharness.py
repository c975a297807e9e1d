"""Experiment matrix runner and embedding distribution-shift diagnostics.

``run_matrix`` evaluates trained policy checkpoints over seeded, goal-noised
trials and tabulates insert-then-release success rates. The shift diagnostic
embeds tactile windows with the pretrained tactile encoder, quantifies the
train/test divide with a normalized mean-discrepancy score, and lays the
embeddings out with a self-contained tSNE implementation.
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import reporting
from .act_policy import execute_with_ensembling, load_act_checkpoint
from .config import EnvConfig
from .datastore import Episode, windows_at
from .diffusion_policy import execute_receding_horizon, load_diffusion_checkpoint
from .pretrain import EncoderCheckpoint
from .simworld import PlugInsertionEnv


# ---------------------------------------------------------------------------
# Experiment matrix
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """One row of the evaluation matrix, pointing at a trained checkpoint."""

    name: str
    policy: str  # "diffusion" | "act"
    checkpoint: str
    pretrained: bool = False
    vision_only: bool = False
    freeze_tactile: bool = False
    trials: int = 20
    goal_noise_sigma: float = 0.0025
    base_seed: int = 1000
    drift: bool = False

    def validate(self) -> None:
        if self.policy not in ("diffusion", "act"):
            raise ValueError(f"unknown policy kind {self.policy!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.freeze_tactile and self.policy != "diffusion":
            raise ValueError("tactile-encoder freezing is only supported for the diffusion policy")
        if self.freeze_tactile and self.vision_only:
            raise ValueError("freeze_tactile requires a visuo-tactile policy")


@dataclass
class ResultRow:
    name: str
    success_rate: float
    outcomes: list[bool]
    runtime_s: float
    error: str | None = None


@dataclass
class ResultsTable:
    rows: list[ResultRow] = field(default_factory=list)

    def as_records(self) -> list[dict]:
        return [
            {
                "name": r.name,
                "success_rate": r.success_rate,
                "trials": len(r.outcomes),
                "successes": int(sum(r.outcomes)),
                "runtime_s": round(r.runtime_s, 3),
                "error": r.error or "",
            }
            for r in self.rows
        ]


def run_trials(config: ExperimentConfig, env_cfg: EnvConfig) -> ResultRow:
    """Seeded evaluation episodes for one matrix row."""
    config.validate()
    t0 = time.time()
    if config.policy == "diffusion":
        policy, schedule, stats = load_diffusion_checkpoint(config.checkpoint)
    else:
        policy, stats = load_act_checkpoint(config.checkpoint)

    outcomes = []
    for i in range(config.trials):
        seed = config.base_seed + i
        env = PlugInsertionEnv(env_cfg, layout_seed=seed)
        if config.policy == "diffusion":
            result = execute_receding_horizon(
                policy,
                schedule,
                stats,
                env,
                seed,
                goal_noise_sigma=config.goal_noise_sigma,
                drift=config.drift,
            )
        else:
            result = execute_with_ensembling(
                policy,
                stats,
                env,
                seed,
                goal_noise_sigma=config.goal_noise_sigma,
                drift=config.drift,
            )
        outcomes.append(bool(result["success"]))
    rate = sum(outcomes) / len(outcomes)
    return ResultRow(
        name=config.name, success_rate=rate, outcomes=outcomes, runtime_s=time.time() - t0
    )


def run_matrix(
    configs: list[ExperimentConfig],
    env_cfg: EnvConfig,
    out_dir: str | Path | None = None,
) -> ResultsTable:
    """Evaluate every row; a missing checkpoint fails its row, not the run."""
    table = ResultsTable()
    for config in configs:
        config.validate()
        try:
            table.rows.append(run_trials(config, env_cfg))
        except FileNotFoundError as exc:
            table.rows.append(
                ResultRow(
                    name=config.name, success_rate=0.0, outcomes=[], runtime_s=0.0, error=str(exc)
                )
            )
    if out_dir is not None:
        out_dir = Path(out_dir)
        reporting.write_results_csv(out_dir / "results.csv", table.as_records())
        reporting.write_trial_outcomes(out_dir / "trials.csv", table)
        reporting.plot_success_bars(out_dir / "results.png", table.as_records())
    return table


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

def embed_dataset(
    checkpoint: EncoderCheckpoint, episodes: list[Episode], stride: int = 5
) -> np.ndarray:
    """One tactile-encoder embedding per sampled timestep window, N x D."""
    enc = checkpoint.tactile_encoder
    h = checkpoint.config.tactile_horizon
    rows = []
    enc.eval()
    with torch.no_grad():
        for ep in episodes:
            ts = np.arange(0, ep.length, stride)
            wins = torch.from_numpy(windows_at(ep, ts, h))
            emb, _ = enc(wins)
            rows.append(emb.numpy())
    return np.concatenate(rows, axis=0).astype(np.float64)


def embed_windows(checkpoint: EncoderCheckpoint, frames_chw: list[np.ndarray]) -> np.ndarray:
    """Embeddings for a raw frame sequence (list of 3xHtxWt float frames)."""
    h = checkpoint.config.tactile_horizon
    enc = checkpoint.tactile_encoder
    windows = []
    for t in range(len(frames_chw)):
        idx = np.clip(np.arange(t - h + 1, t + 1), 0, len(frames_chw) - 1)
        windows.append(np.concatenate([frames_chw[i] for i in idx], axis=0))
    enc.eval()
    with torch.no_grad():
        emb, _ = enc(torch.from_numpy(np.stack(windows)))
    return emb.numpy().astype(np.float64)


def shift_score(train_emb: np.ndarray, test_emb: np.ndarray) -> float:
    """Squared mean discrepancy normalized by pooled per-dimension variance.

    Zero in expectation when both samples come from the same distribution;
    symmetric in its arguments.
    """
    a = np.asarray(train_emb, dtype=np.float64)
    b = np.asarray(test_emb, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both embedding sets must be non-empty")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    pooled = (a.var(axis=0) + b.var(axis=0)) / 2.0 + 1e-12
    return float(np.mean((mu_a - mu_b) ** 2 / pooled))


# ---------------------------------------------------------------------------
# tSNE (self-contained)
# ---------------------------------------------------------------------------

def pairwise_sq_dists(X: np.ndarray) -> np.ndarray:
    s = (X**2).sum(axis=1)
    d2 = s[:, None] + s[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _row_probs(d2_row: np.ndarray, beta: float, i: int) -> tuple[np.ndarray, float]:
    """Conditional distribution for one point and its entropy in nats."""
    p = np.exp(-d2_row * beta)
    p[i] = 0.0
    total = max(p.sum(), 1e-300)
    p = p / total
    entropy = np.log(total) + beta * float((d2_row * p).sum())
    return p, entropy


def conditional_p_matrix(
    X: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 200
) -> tuple[np.ndarray, np.ndarray]:
    """Per-point Gaussian bandwidths solved by bisection to match the perplexity.

    Returns the row-stochastic conditional matrix and the achieved row
    entropies (nats); each entropy matches log(perplexity) within ``tol``.
    """
    n = X.shape[0]
    d2 = pairwise_sq_dists(X)
    if float(d2.max()) == 0.0:
        raise ValueError("degenerate input: all points identical")
    target = np.log(perplexity)
    P = np.zeros((n, n))
    entropies = np.zeros(n)
    for i in range(n):
        beta, beta_min, beta_max = 1.0, 0.0, np.inf
        p, entropy = _row_probs(d2[i], beta, i)
        for _ in range(max_iter):
            if abs(entropy - target) <= tol:
                break
            if entropy > target:  # too spread out: sharpen
                beta_min = beta
                beta = beta * 2.0 if np.isinf(beta_max) else (beta + beta_max) / 2.0
            else:
                beta_max = beta
                beta = (beta + beta_min) / 2.0
            p, entropy = _row_probs(d2[i], beta, i)
        P[i] = p
        entropies[i] = entropy
    return P, entropies


def tsne_kl_and_grad(P: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(P || Q) under the Student-t kernel and its analytic gradient."""
    d2 = pairwise_sq_dists(Y)
    w = 1.0 / (1.0 + d2)
    np.fill_diagonal(w, 0.0)
    Q = np.maximum(w / w.sum(), 1e-12)
    mask = ~np.eye(len(Y), dtype=bool)
    kl = float((P[mask] * np.log(P[mask] / Q[mask])).sum())
    pq_w = (P - Q) * w
    grad = 4.0 * ((np.diag(pq_w.sum(axis=1)) - pq_w) @ Y)
    return kl, grad


def effective_perplexity(n: int, perplexity: float) -> float:
    """Reduce the requested perplexity when the sample is too small for it."""
    if n < 3 * perplexity:
        return max(2.0, (n - 1) / 3.0)
    return perplexity


def tsne(
    X: np.ndarray,
    perplexity: float = 30.0,
    iterations: int = 500,
    seed: int = 0,
    learning_rate: float = 100.0,
    exaggeration: float = 12.0,
    exaggeration_iters: int = 100,
) -> tuple[np.ndarray, list[float]]:
    """Standard tSNE: bisected bandwidths, symmetrized P, Student-t Q, and
    momentum gradient descent with early exaggeration and adaptive gains.

    After exaggeration ends each step is backtracked (halved) until the KL
    objective does not increase, so the logged objective is non-increasing
    over the tail. Returns the layout and the per-iteration KL history.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 4:
        raise ValueError("need at least 4 points")
    perp = effective_perplexity(n, perplexity)
    cond, _ = conditional_p_matrix(X, perp)
    P = (cond + cond.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)

    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history: list[float] = []

    for it in range(iterations):
        exaggerating = it < exaggeration_iters
        P_run = P * exaggeration if exaggerating else P
        _, grad = tsne_kl_and_grad(P_run, Y)

        momentum = 0.5 if it < 250 else 0.8
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        step = momentum * update - learning_rate * gains * grad

        if exaggerating:
            Y = Y + step
            update = step
        else:
            kl_cur, _ = tsne_kl_and_grad(P, Y)
            candidate = Y + step
            for _ in range(30):
                kl_new, _ = tsne_kl_and_grad(P, candidate)
                if kl_new <= kl_cur:
                    break
                step = step * 0.5
                candidate = Y + step
            else:
                step = np.zeros_like(step)
                candidate = Y
            Y = candidate
            update = step
        Y = Y - Y.mean(axis=0)
        kl, _ = tsne_kl_and_grad(P, Y)
        history.append(kl)
    return Y, history


# ---------------------------------------------------------------------------
# Shift diagnostic report
# ---------------------------------------------------------------------------

def shift_report(
    checkpoint: EncoderCheckpoint,
    train_episodes: list[Episode],
    test_episodes: list[Episode],
    out_dir: str | Path | None = None,
    *,
    perplexity: float = 30.0,
    iterations: int = 500,
    seed: int = 0,
    stride: int = 5,
) -> dict:
    """Quantified train/test embedding divide plus a 2-D layout of it.

    The within-train baseline splits training rows by parity, so an overall
    drift trend inside the training set does not inflate the baseline.
    """
    train_emb = embed_dataset(checkpoint, train_episodes, stride=stride)
    test_emb = embed_dataset(checkpoint, test_episodes, stride=stride)

    half_a, half_b = train_emb[0::2], train_emb[1::2]
    score_within = shift_score(half_a, half_b)
    score_shift = shift_score(train_emb, test_emb)

    combined = np.concatenate([train_emb, test_emb], axis=0)
    labels = np.array([0] * len(train_emb) + [1] * len(test_emb))
    layout, kl_history = tsne(
        combined, perplexity=perplexity, iterations=iterations, seed=seed
    )

    report = {
        "score_train_test": score_shift,
        "score_within_train": score_within,
        "ratio": score_shift / max(score_within, 1e-12),
        "train_rows": int(len(train_emb)),
        "test_rows": int(len(test_emb)),
        "final_kl": kl_history[-1],
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        reporting.write_points_csv(out_dir / "tsne_points.csv", layout, labels, ("train", "test"))
        reporting.plot_embedding_map(
            out_dir / "tsne.png", layout, labels, ("train", "test")
        )
        reporting.write_json(out_dir / "shift_scores.json", report)
    return report
