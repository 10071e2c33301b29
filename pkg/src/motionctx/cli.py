"""Command-line entry point: ``motionctx {train,predict,eval,transfer,export}``.

Exit codes: 0 success, 2 usage, 3 data/input error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import FORMAT_VERSION, CheckpointError, checkpoint_bytes, load_checkpoint
from .losses import format_error_table, mean_angle_error
from .model import ModelParams, predict
from .skeleton import (
    DataFormatError,
    MotionSequence,
    denormalize,
    downsample,
    format_sequence,
    load_sequences,
    normalize,
    read_sequence,
)
from .trainer import (
    ConfigError,
    NumericFailure,
    TrainingConfig,
    collect_windows,
    evaluate,
    format_history,
    parse_config_text,
    prepare_training_data,
    split_by_subject,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("motionctx")


class InputError(Exception):
    pass


class UsageError(Exception):
    pass


def _atomic_write(path: Path, data: bytes | str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        data = data.encode()
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _digest(path: Path) -> dict[str, str]:
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    return {str(f): hashlib.sha256(f.read_bytes()).hexdigest() for f in files}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise InputError(f"missing --{what}")
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} not found: {path}")
    return p


def resolve_config(args) -> TrainingConfig:
    """defaults < config file < command-line flags."""
    values: dict = {}
    if args.config:
        values.update(parse_config_text(_require_file(args.config, "config").read_text()))
    for f in fields(TrainingConfig):
        flag = getattr(args, f"cfg_{f.name}", None)
        if flag is not None:
            values[f.name] = flag
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    return TrainingConfig.from_mapping(values)


# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    data_path = _require_file(args.data, "data")
    config = resolve_config(args)
    seqs = load_sequences(data_path)
    train_seqs, _ = split_by_subject(seqs, config.test_subjects)
    if not train_seqs:
        raise InputError(f"no training sequences found in {data_path}")
    data, stats, vocab = prepare_training_data(train_seqs, config)
    if config.conditioned and not vocab:
        raise InputError("conditioned=true but no sequence carries a label")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "package_version": __version__,
        "config": config.as_dict(),
        "seed": config.seed,
        "inputs": _digest(data_path),
        "labels": list(vocab),
        "windows": len(data),
        "started": _now(),
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))

    def on_checkpoint(step, params):
        _atomic_write(out / f"checkpoint-{step:07d}.ckpt", checkpoint_bytes(params))

    result = train(data, config, stats, vocab, on_checkpoint=on_checkpoint)
    _atomic_write(out / "model.ckpt", checkpoint_bytes(result.params))
    _atomic_write(out / "loss.csv", format_history(result.history))
    manifest["finished"] = _now()
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
    print(f"trained {config.max_steps} steps; final loss {result.history[-1][1]:.6g}" if result.history else "trained 0 steps")
    return EXIT_OK


def _load_observed(path: Path, params: ModelParams, factor: int) -> MotionSequence:
    seq = read_sequence(path)
    if seq is None:
        raise InputError(f"{path} contains no frames")
    if seq.dim != params.dims.frame_dim:
        raise InputError(f"observed frames have D={seq.dim} but the checkpoint expects D={params.dims.frame_dim}")
    seq = downsample(seq, factor)
    keep = params.extra.get("config", {}).get("observed_len")
    if keep:
        seq.frames = seq.frames[-int(keep):]
    return seq


def _rollout(params: ModelParams, seq: MotionSequence, horizon: int, labels) -> np.ndarray:
    obs = seq.frames
    if params.stats is not None:
        obs = normalize(obs, params.stats)
    pred = predict(params, obs, horizon, labels)
    if params.stats is not None:
        pred = denormalize(pred, params.stats)
    return pred


def _write_prediction(path: Path, frames: np.ndarray, fps: float, label: str | None) -> None:
    seq = MotionSequence(frames.reshape(-1, frames.shape[-1]) if frames.size else np.zeros((0, frames.shape[-1])), fps=fps, label=label)
    _atomic_write(path, format_sequence(seq))


def cmd_predict(args) -> int:
    params = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    seq = _load_observed(_require_file(args.data, "data"), params, args.downsample)
    labels = None
    if args.label is not None:
        if not params.dims.conditioned:
            raise InputError("--label given but the checkpoint has no label conditioner")
        labels = params.label_id(_label_arg(args.label))
    pred = _rollout(params, seq, args.horizon, labels)
    _write_prediction(Path(args.out), pred, seq.fps, args.label)
    return EXIT_OK


def _label_arg(text: str) -> int | str:
    return int(text) if text.lstrip("-").isdigit() else text


def parse_schedule(text: str) -> list[tuple[int, int | str]]:
    """``"0:walking,5:sitting"`` -> [(0, "walking"), (5, "sitting")]."""
    entries = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        start, sep, label = part.partition(":")
        if not sep or not label:
            raise InputError(f"bad schedule entry {part!r}; expected start:label")
        try:
            entries.append((int(start), _label_arg(label)))
        except ValueError:
            raise InputError(f"bad schedule start in {part!r}") from None
    return entries


def schedule_to_steps(schedule, horizon: int, params: ModelParams) -> np.ndarray:
    """Expand a label schedule into one label id per decoding step."""
    if not schedule:
        raise InputError("label schedule is empty")
    starts = [s for s, _ in schedule]
    if starts[0] != 0:
        raise InputError("label schedule must start at step 0")
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise InputError(f"schedule starts must be strictly increasing, got {starts}")
    if starts[-1] >= horizon:
        raise InputError(f"schedule start {starts[-1]} is beyond the horizon {horizon}")
    ids = [params.label_id(lab) for _, lab in schedule]
    steps = np.empty(horizon, dtype=np.int64)
    for (start, _), lab, nxt in zip(schedule, ids, starts[1:] + [horizon]):
        steps[start:nxt] = lab
    return steps


def cmd_transfer(args) -> int:
    params = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    if not params.dims.conditioned:
        raise InputError("transfer needs a checkpoint trained with conditioned=true")
    schedule = parse_schedule(args.schedule or "")
    steps = schedule_to_steps(schedule, args.horizon, params)
    seq = _load_observed(_require_file(args.data, "data"), params, args.downsample)
    pred = _rollout(params, seq, args.horizon, steps[:, None])
    _write_prediction(Path(args.out), pred, seq.fps, None)
    return EXIT_OK


def cmd_eval(args) -> int:
    if bool(args.checkpoint) == bool(args.baseline):
        raise UsageError("give exactly one of --checkpoint or --baseline")
    params = load_checkpoint(_require_file(args.checkpoint, "checkpoint")) if args.checkpoint else None
    cfg = params.extra.get("config", {}) if params else {}
    factor = args.downsample if args.downsample is not None else int(cfg.get("downsample", 2))
    observed_len = args.observed_len or int(cfg.get("observed_len", 30))
    stride = args.stride or int(cfg.get("stride", 1))
    seqs = load_sequences(_require_file(args.data, "data"))
    if args.test_subjects:
        _, seqs = split_by_subject(seqs, args.test_subjects)
    seqs = [downsample(s, factor) for s in seqs]
    windows = collect_windows(seqs, observed_len, args.horizon, stride)
    if not windows:
        raise InputError("no test windows: sequences are shorter than observed length + horizon")

    if args.truth_as_prediction:
        truth = np.stack([w.target[: args.horizon] for w in windows])
        table = mean_angle_error(truth, truth, args.metric_mode)
    else:
        table = evaluate(params if params else args.baseline, windows, args.metric_mode)
    _atomic_write(Path(args.out), format_error_table(table))
    return EXIT_OK


def export_json_frames(seq: MotionSequence | None) -> dict:
    if seq is None:
        return {"fps": None, "joints": 0, "frames": []}
    return {
        "fps": seq.fps,
        "joints": seq.joints,
        "label": seq.label,
        "frames": [
            {"index": i, "joints": row.reshape(-1, 3).tolist()} for i, row in enumerate(seq.frames)
        ],
    }


def cmd_export(args) -> int:
    if args.format != "json-frames":
        raise InputError(f"unsupported export format {args.format!r}")
    seq = read_sequence(_require_file(args.data, "data"))
    _atomic_write(Path(args.out), json.dumps(export_json_frames(seq)))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motionctx", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint, loss.csv and manifest.json")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    for f in fields(TrainingConfig):
        if f.name == "seed":
            continue
        p.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}", metavar="VALUE")
    p.set_defaults(func=cmd_train)

    for name, func in (("predict", cmd_predict), ("transfer", cmd_transfer)):
        p = sub.add_parser(name, help=f"{name} future frames from an observed sequence")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True, help="observed sequence CSV")
        p.add_argument("--out", required=True)
        p.add_argument("--horizon", type=int, default=10)
        p.add_argument("--downsample", type=int, default=1)
        if name == "predict":
            p.add_argument("--label")
        else:
            p.add_argument("--schedule", required=True, help='e.g. "0:walking,5:sitting"')
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="per-horizon mean angle error table")
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=["zero-velocity"])
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metric-mode", choices=["euler", "raw-expmap"], default="euler")
    p.add_argument("--horizon", type=int, default=25)
    p.add_argument("--observed-len", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--downsample", type=int)
    p.add_argument("--test-subjects")
    p.add_argument("--truth-as-prediction", action="store_true", help="self-test: score the truth against itself")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="export a sequence CSV as JSON frames")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="json-frames")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NumericFailure as exc:
        print(f"motionctx: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"motionctx: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"motionctx: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, DataFormatError, CheckpointError, OSError, ValueError) as exc:
        print(f"motionctx: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
