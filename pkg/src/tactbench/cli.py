"""Command-line entry point orchestrating the full pipeline.

Subcommands: gen-demos, pretrain, train-diffusion, train-act, eval,
tsne-report. Every run writes its resolved configuration next to its outputs
so any result can be reproduced exactly from the files on disk. All commands
are seeded and run single-threaded by default; rerunning a command with an
identical config and seed reproduces its outputs bit for bit.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from . import __version__, reporting
from .act_policy import ACTConfig, save_act_checkpoint, train_act
from .config import EnvConfig
from .datastore import load_dataset, record_episode
from .diffusion_policy import DiffusionConfig, save_diffusion_checkpoint, train_diffusion
from .encoders import EncoderConfig
from .evalharness import ExperimentConfig, run_matrix, shift_report
from .pretrain import EncoderCheckpoint, PretrainConfig, freeze, pretrain
from .simworld import PlugInsertionEnv, scripted_expert


def output_root() -> Path:
    return Path(os.environ.get("TACTBENCH_OUT", "runs"))


def _load_env_config(path: str | None) -> EnvConfig:
    return EnvConfig.load(path) if path else EnvConfig()


def _write_resolved_config(target: Path, payload: dict) -> None:
    """Drop the resolved config next to the command's outputs."""
    if target.suffix:
        config_path = target.with_suffix(target.suffix + ".config.json")
    else:
        config_path = target / "config.json"
    reporting.write_json(config_path, {"version": __version__, **payload})


def _require(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_demos(args) -> int:
    if args.n < 1:
        raise ValueError(f"--n must be >= 1, got {args.n}")
    env_cfg = _load_env_config(args.env_config)
    out = Path(args.out) if args.out else output_root() / "demos"
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.jsonl"
    if manifest.exists():
        manifest.unlink()

    env = PlugInsertionEnv(env_cfg, layout_seed=args.seed)
    successes = 0
    for i in range(args.n):
        seed = args.seed + i
        expert_rng = np.random.default_rng([seed, 0xE4])
        episode, _ = record_episode(
            env,
            seed,
            lambda t, state, obs: scripted_expert(state, env_cfg, expert_rng),
            out,
            drift=args.drift,
            goal_noise_sigma=args.goal_noise,
        )
        successes += episode.success
    _write_resolved_config(
        out,
        {
            "command": "gen-demos",
            "n": args.n,
            "seed": args.seed,
            "drift": args.drift,
            "goal_noise": args.goal_noise,
            "env": env_cfg.to_dict(),
        },
    )
    print(f"recorded {args.n} episodes ({successes} successful) in {out}")
    return 0


def cmd_pretrain(args) -> int:
    dataset_dir = _require(args.dataset, "dataset directory")
    episodes = load_dataset(dataset_dir)
    cfg = PretrainConfig(
        epochs=args.epochs,
        batch_timesteps=args.batch_n,
        tau=args.tau,
        lr=args.lr,
        seed=args.seed,
        encoder=EncoderConfig(tactile_horizon=args.horizon),
    )
    ckpt, history = pretrain(episodes, cfg, log_every=args.log_every)
    if args.freeze_tactile:
        freeze(ckpt, {"tactile_encoder"})
    out = Path(args.out) if args.out else output_root() / "encoders.tbar"
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt.save(out)
    reporting.write_results_csv(
        out.parent / (out.stem + "_loss.csv"),
        [{"update": i, "loss": v} for i, v in enumerate(history)],
    )
    reporting.plot_training_curve(out.parent / (out.stem + "_loss.png"), history)
    _write_resolved_config(out, {"command": "pretrain", **cfg.to_dict()})
    print(f"pretrained encoders -> {out} (final loss {history[-1]:.4f})")
    return 0


def _load_pretrained(path: str | None) -> EncoderCheckpoint | None:
    if not path:
        return None
    return EncoderCheckpoint.load(_require(path, "pretrained encoder checkpoint"))


def cmd_train_diffusion(args) -> int:
    dataset_dir = _require(args.dataset, "dataset directory")
    episodes = load_dataset(dataset_dir)
    pretrained = _load_pretrained(args.pretrained)
    env_cfg = _load_env_config(args.env_config)
    cfg = DiffusionConfig(
        pred_horizon=args.pred_horizon,
        action_horizon=args.action_horizon,
        k_train=args.k_train,
        inference_steps=args.inference_steps,
        vision_only=args.vision_only,
        freeze_tactile=args.freeze_tactile,
        num_cameras=env_cfg.num_cameras,
        updates=args.updates,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        encoder=EncoderConfig(tactile_horizon=args.horizon),
    )
    policy, _, stats, history = train_diffusion(
        episodes, cfg, pretrained, log_every=args.log_every
    )
    out = Path(args.out) if args.out else output_root() / "diffusion.tbar"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_diffusion_checkpoint(out, policy, stats)
    reporting.write_results_csv(
        out.parent / (out.stem + "_loss.csv"),
        [{"update": i, "loss": v} for i, v in enumerate(history)],
    )
    reporting.plot_training_curve(out.parent / (out.stem + "_loss.png"), history)
    _write_resolved_config(
        out,
        {"command": "train-diffusion", "pretrained": args.pretrained or "", **cfg.to_dict()},
    )
    print(f"trained diffusion policy -> {out} (final loss {history[-1]:.4f})")
    return 0


def cmd_train_act(args) -> int:
    dataset_dir = _require(args.dataset, "dataset directory")
    episodes = load_dataset(dataset_dir)
    pretrained = _load_pretrained(args.pretrained)
    env_cfg = _load_env_config(args.env_config)
    cfg = ACTConfig(
        chunk=args.chunk,
        ensemble_k=args.ensemble_k,
        vision_only=args.vision_only,
        num_cameras=env_cfg.num_cameras,
        image_size=env_cfg.image_size,
        tactile_size=env_cfg.tactile_size,
        updates=args.updates,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        encoder=EncoderConfig(tactile_horizon=args.horizon),
    )
    policy, stats, history = train_act(episodes, cfg, pretrained, log_every=args.log_every)
    out = Path(args.out) if args.out else output_root() / "act.tbar"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_act_checkpoint(out, policy, stats)
    reporting.write_results_csv(
        out.parent / (out.stem + "_loss.csv"),
        [{"update": i, "loss": v} for i, v in enumerate(history)],
    )
    reporting.plot_training_curve(out.parent / (out.stem + "_loss.png"), history)
    _write_resolved_config(
        out, {"command": "train-act", "pretrained": args.pretrained or "", **cfg.to_dict()}
    )
    print(f"trained chunked-transformer policy -> {out} (final loss {history[-1]:.4f})")
    return 0


def _matrix_rows(args) -> list[ExperimentConfig]:
    from .container import read_arrays

    rows = []
    if args.matrix:
        with open(_require(args.matrix, "matrix config")) as f:
            data = yaml.safe_load(f)
        for entry in data["rows"]:
            known = {f.name for f in dataclasses.fields(ExperimentConfig)}
            unknown = set(entry) - known
            if unknown:
                raise KeyError(f"unknown matrix row keys: {sorted(unknown)}")
            rows.append(ExperimentConfig(**entry))
        return rows
    if not args.checkpoint:
        raise FileNotFoundError("no checkpoint given: pass --checkpoint or --matrix")
    for path in args.checkpoint:
        _, meta = read_arrays(_require(path, "policy checkpoint"))
        kind = meta.get("kind", "")
        cfg = meta.get("config", {})
        flags = []
        if cfg.get("vision_only"):
            flags.append("vision-only")
        if meta.get("frozen"):
            flags.append("frozen")
        name = "-".join([kind] + flags) if flags else kind
        rows.append(
            ExperimentConfig(
                name=name,
                policy=kind,
                checkpoint=str(path),
                vision_only=bool(cfg.get("vision_only", False)),
                freeze_tactile="tactile_encoder" in meta.get("frozen", []),
                trials=args.trials,
                goal_noise_sigma=args.goal_noise,
                base_seed=args.seed,
                drift=args.drift,
            )
        )
    return rows


def cmd_eval(args) -> int:
    env_cfg = _load_env_config(args.env_config)
    rows = _matrix_rows(args)
    out = Path(args.out) if args.out else output_root() / "eval"
    table = run_matrix(rows, env_cfg, out_dir=out)
    _write_resolved_config(
        out,
        {
            "command": "eval",
            "rows": [dataclasses.asdict(r) for r in rows],
            "env": env_cfg.to_dict(),
        },
    )
    for record in table.as_records():
        status = f"{record['success_rate']:.2f}" if not record["error"] else record["error"]
        print(f"{record['name']:32s} {status}")
    return 0


def cmd_tsne_report(args) -> int:
    ckpt = EncoderCheckpoint.load(_require(args.encoders, "encoder checkpoint"))
    train_eps = load_dataset(_require(args.train_dataset, "train dataset"))
    test_eps = load_dataset(_require(args.test_dataset, "test dataset"))
    out = Path(args.out) if args.out else output_root() / "tsne"
    report = shift_report(
        ckpt,
        train_eps,
        test_eps,
        out,
        perplexity=args.perplexity,
        iterations=args.iterations,
        seed=args.seed,
        stride=args.stride,
    )
    _write_resolved_config(
        out,
        {
            "command": "tsne-report",
            "encoders": args.encoders,
            "train_dataset": args.train_dataset,
            "test_dataset": args.test_dataset,
            "perplexity": args.perplexity,
            "iterations": args.iterations,
            "stride": args.stride,
            "seed": args.seed,
        },
    )
    print(
        f"shift score train/test {report['score_train_test']:.4f}, "
        f"within-train {report['score_within_train']:.4f}, ratio {report['ratio']:.2f}"
    )
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tactbench",
        description="Desk-scale visuo-tactile imitation learning testbench",
    )
    parser.add_argument("--threads", type=int, default=1, help="torch CPU threads (1 = reproducible)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="record scripted-expert demonstrations")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--env-config", default=None)
    p.add_argument("--drift", action="store_true", help="advance bead drift each episode")
    p.add_argument("--goal-noise", type=float, default=0.0)
    p.set_defaults(fn=cmd_gen_demos)

    p = sub.add_parser("pretrain", help="contrastive visuo-tactile pretraining")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-n", type=int, default=16)
    p.add_argument("--tau", type=float, default=0.07)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--freeze-tactile", action="store_true", help="flag tactile encoder frozen")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train-diffusion", help="train the diffusion policy head")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--pretrained", default=None)
    p.add_argument("--vision-only", action="store_true")
    p.add_argument("--freeze-tactile", action="store_true")
    p.add_argument("--updates", type=int, default=3000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--pred-horizon", type=int, default=20)
    p.add_argument("--action-horizon", type=int, default=8)
    p.add_argument("--k-train", type=int, default=100)
    p.add_argument("--inference-steps", type=int, default=10)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--env-config", default=None)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(fn=cmd_train_diffusion)

    p = sub.add_parser("train-act", help="train the chunked-transformer policy head")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--pretrained", default=None)
    p.add_argument("--vision-only", action="store_true")
    p.add_argument("--updates", type=int, default=3000)
    p.add_argument("--batch-size", type=int, default=48)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--chunk", type=int, default=20)
    p.add_argument("--ensemble-k", type=float, default=0.25)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--env-config", default=None)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(fn=cmd_train_act)

    p = sub.add_parser("eval", help="run seeded evaluation trials for checkpoints")
    p.add_argument("--checkpoint", action="append", default=[])
    p.add_argument("--matrix", default=None, help="YAML file with explicit matrix rows")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--goal-noise", type=float, default=0.0025)
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--drift", action="store_true")
    p.add_argument("--out", default=None)
    p.add_argument("--env-config", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("tsne-report", help="embedding shift diagnostic and layout")
    p.add_argument("--encoders", required=True)
    p.add_argument("--train-dataset", required=True)
    p.add_argument("--test-dataset", required=True)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_tsne_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(args.threads)
    try:
        return args.fn(args)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
