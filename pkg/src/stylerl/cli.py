"""Command-line interface: training, evaluation, clip tooling, metric export.

Exit codes: 0 success, 1 usage or validation error, 2 training divergence,
3 I/O failure. The ``STYLERL_OUT_DIR`` environment variable supplies the
default output directory when neither ``--out`` nor the config names one.
All relative paths resolve against the current working directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from stylerl import checkpoint as ckpt_io
from stylerl import motion
from stylerl.errors import (
    CheckpointError,
    ClipError,
    ConfigError,
    DescriptorSchemaError,
    RecordingError,
    StyleRlError,
    TrainingDivergenceError,
)
from stylerl.nets import Mlp
from stylerl.ppo import GaussianPolicy
from stylerl.trainer import (
    evaluate,
    load_config,
    single_env_from_checkpoint,
    train,
)

OUT_DIR_ENV = "STYLERL_OUT_DIR"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",")]
    except ValueError:
        raise _UsageError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> _Parser:
    parser = _Parser(prog="stylerl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training job from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--out", default=None, help="output directory (fallback: config, then $STYLERL_OUT_DIR)")

    p = sub.add_parser("eval", help="evaluate a checkpoint with one active style")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--style", type=int, required=True)
    p.add_argument("--episodes", type=int, default=8)
    p.add_argument("--stochastic", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--switch-style", type=int, default=None)
    p.add_argument("--switch-at", type=int, default=None)
    p.add_argument("--export-clips", default=None)
    p.add_argument("--out", default=None, help="write the report JSON here as well")

    p = sub.add_parser("record", help="record a motion clip from a policy or generator")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--style", type=int, default=0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--generator", choices=["sinusoid", "sweep"], default=None)
    p.add_argument("--dt", type=float, default=0.02)
    p.add_argument("--name", default=None)
    p.add_argument("--amplitude", type=_floats, default=[0.5])
    p.add_argument("--frequency", type=_floats, default=[1.0])
    p.add_argument("--phase", type=_floats, default=[0.0])
    p.add_argument("--center", type=_floats, default=[0.0])
    p.add_argument("--rate", type=float, default=-0.75, help="sweep: signed shoulder rad/s")
    p.add_argument("--start-angle", type=float, default=0.0)
    p.add_argument("--elbow-angle", type=float, default=float(np.pi / 2))
    p.add_argument("--elbow-amplitude", type=float, default=0.0)
    p.add_argument("--elbow-frequency", type=float, default=0.25)
    p.add_argument("--raw-fields", action="store_true",
                   help="sweep: emit raw joint angles instead of sin/cos pairs")
    p.add_argument("--sincos-fields", action="store_true",
                   help="sinusoid: emit sin/cos pairs instead of raw joint angles")

    p = sub.add_parser("reverse", help="time-reverse a motion clip")
    p.add_argument("--in", dest="src", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inspect", help="summarize a clip, checkpoint, or config")
    p.add_argument("--in", dest="src", required=True)

    p = sub.add_parser("export-plot-data", help="split a metrics CSV into per-style curves")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    return parser


# --------------------------------------------------------------------------
# subcommand implementations
# --------------------------------------------------------------------------


def _cmd_train(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    out_dir = args.out or config.out_dir or os.environ.get(OUT_DIR_ENV)
    if not out_dir:
        raise ConfigError("no output directory: pass --out, set out_dir in the config, "
                          f"or export {OUT_DIR_ENV}")
    summary = train(config, out_dir=out_dir, resume_from=args.resume)
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_eval(args) -> int:
    report = evaluate(
        args.checkpoint, args.style, episodes=args.episodes,
        deterministic=not args.stochastic, seed=args.seed, horizon=args.horizon,
        warmup_steps=args.warmup, switch_style=args.switch_style, switch_at=args.switch_at,
        export_dir=args.export_clips,
    )
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


def _cmd_record(args) -> int:
    if args.generator is None and args.checkpoint is None:
        raise _UsageError("record: pass --checkpoint or --generator")
    if args.generator == "sinusoid":
        steps = args.steps if args.steps is not None else 100
        clip = motion.make_sinusoid_clip(
            steps=steps, dt=args.dt, amplitude=args.amplitude, frequency=args.frequency,
            phase=args.phase, center=args.center, sincos=args.sincos_fields,
            name=args.name or "sinusoid")
    elif args.generator == "sweep":
        if args.steps is not None:
            steps = args.steps
        else:
            steps = int(np.ceil(2.0 * np.pi / (abs(args.rate) * args.dt))) + 1
        clip = motion.make_sweep_clip(
            steps=steps, dt=args.dt, rate=args.rate, start_angle=args.start_angle,
            elbow_angle=args.elbow_angle, elbow_amplitude=args.elbow_amplitude,
            elbow_frequency=args.elbow_frequency, sincos=not args.raw_fields,
            name=args.name or "sweep")
    else:
        if args.steps is None:
            raise _UsageError("record: --steps is required with --checkpoint")
        env, policy_fn = single_env_from_checkpoint(args.checkpoint, seed=args.seed)
        clip = motion.record_clip(env, policy_fn, args.style, args.steps,
                                  name=args.name or f"recorded-style{args.style}")
    motion.save_clip(clip, args.out)
    print(f"wrote {clip.n_frames} frames ({clip.d_d} dims at dt={clip.dt}) to {args.out}")
    return 0


def _cmd_reverse(args) -> int:
    clip = motion.load_clip(args.src)
    motion.save_clip(motion.reverse_clip(clip), args.out)
    print(f"wrote {args.out}")
    return 0


def _detect_kind(path: Path) -> str:
    if not path.exists():
        raise ConfigError(f"no such file: {path}")
    head = path.open("rb").read(8)
    if head == ckpt_io.MAGIC:
        return "checkpoint"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise ConfigError(f"{path}: not a clip, checkpoint, or config") from None
    if isinstance(doc, dict) and "frames" in doc:
        return "clip"
    if isinstance(doc, dict) and "styles" in doc:
        return "config"
    raise ConfigError(f"{path}: not a clip, checkpoint, or config")


def _cmd_inspect(args) -> int:
    path = Path(args.src)
    kind = _detect_kind(path)
    if kind == "clip":
        clip = motion.load_clip(path)
        doc = {
            "type": "clip",
            "name": clip.name,
            "frames": clip.n_frames,
            "dt": clip.dt,
            "descriptor_dim": clip.d_d,
            "duration_s": round(clip.dt * (clip.n_frames - 1), 9),
            "fields": [
                {
                    "name": f.name,
                    "kind": f.kind,
                    "dim": f.dim,
                    "min": float(clip.frames[:, clip.column_slice(f.name)].min()),
                    "max": float(clip.frames[:, clip.column_slice(f.name)].max()),
                }
                for f in clip.fields
            ],
        }
    elif kind == "checkpoint":
        meta, sections = ckpt_io.read_checkpoint(path)
        policy = GaussianPolicy.from_bytes(sections["policy"])
        value = Mlp.from_bytes(sections["value"])
        doc = {
            "type": "checkpoint",
            "epoch": meta["epoch"],
            "config_hash": meta["config_hash"],
            "seed": meta["seed"],
            "n_styles": meta["n_styles"],
            "policy_widths": list(policy.mean_net.widths),
            "value_widths": list(value.widths),
            "discriminator_widths": [
                list(Mlp.from_bytes(sections[f"disc{i}"]).widths)
                for i in range(meta["n_styles"])
            ],
        }
    else:
        config = load_config(path)
        doc = {"type": "config", "config_hash": config.config_hash(),
               "resolved": config.to_dict()}
    print(json.dumps(doc, indent=2))
    return 0


def _cmd_export_plot_data(args) -> int:
    metrics = Path(args.metrics)
    if not metrics.exists():
        raise ConfigError(f"no such metrics file: {metrics}")
    lines = metrics.read_text(encoding="utf-8").splitlines()
    if len(lines) < 2:
        raise ConfigError(f"{metrics}: no data rows to export")
    header = lines[0].split(",")
    if header[0] != "epoch":
        raise ConfigError(f"{metrics}: not a metrics CSV (header starts with {header[0]!r})")
    style_cols: dict[int, dict[str, int]] = {}
    for idx, name in enumerate(header):
        if name.startswith("style") and "_" in name:
            prefix, metric = name.split("_", 1)
            style_cols.setdefault(int(prefix[5:]), {})[metric] = idx
    if not style_cols:
        raise ConfigError(f"{metrics}: no per-style columns found")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [line.split(",") for line in lines[1:] if line]
    per_style_metrics = ["task_reward_mean", "style_reward_mean", "disc_loss", "disc_accuracy"]
    written = []
    for style, cols in sorted(style_cols.items()):
        path = out_dir / f"style{style}_curves.csv"
        with path.open("w", encoding="utf-8") as fh:
            fh.write("epoch," + ",".join(per_style_metrics) + "\n")
            for row in rows:
                fh.write(row[0] + "," + ",".join(row[cols[m]] for m in per_style_metrics) + "\n")
        written.append(str(path))
    combined = out_dir / "combined_rewards.csv"
    with combined.open("w", encoding="utf-8") as fh:
        names = [f"style{s}_{m}" for s in sorted(style_cols) for m in
                 ("task_reward_mean", "style_reward_mean")]
        fh.write("epoch," + ",".join(names) + "\n")
        for row in rows:
            cells = [row[0]]
            for s in sorted(style_cols):
                cells.append(row[style_cols[s]["task_reward_mean"]])
                cells.append(row[style_cols[s]["style_reward_mean"]])
            fh.write(",".join(cells) + "\n")
    written.append(str(combined))
    print(json.dumps({"written": written}, indent=2))
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "record": _cmd_record,
    "reverse": _cmd_reverse,
    "inspect": _cmd_inspect,
    "export-plot-data": _cmd_export_plot_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ClipError, DescriptorSchemaError, RecordingError,
            CheckpointError, StyleRlError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
