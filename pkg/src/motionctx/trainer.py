"""SGD-with-momentum training loop and window-level evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Mapping, Sequence

import numpy as np

from . import losses
from .autodiff import Graph
from .baselines import zero_velocity_predict
from .model import ModelDims, ModelParams, decode_sequence, init_params, predict
from .skeleton import (
    MotionSequence,
    NormalizationStats,
    WindowSample,
    denormalize,
    downsample,
    fit_normalizer,
    make_windows,
    normalize,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class NumericFailure(ArithmeticError):
    """Raised when the loss or a gradient stops being finite.

    ``last_good`` holds the parameters from before the failing step.
    """

    def __init__(self, message: str, step: int, last_good: ModelParams | None = None):
        super().__init__(message)
        self.step = step
        self.last_good = last_good


_MAY_BE_ZERO = {"w_gram", "w_mse", "momentum", "seed", "checkpoint_every"}


@dataclass
class TrainingConfig:
    learning_rate: float = 0.05
    decay_factor: float = 0.95
    decay_steps: int = 10_000
    momentum: float = 0.9
    clip_norm: float = 5.0
    batch_size: int = 80
    max_steps: int = 20_000
    seed: int = 0
    w_gram: float = 1.0
    w_mse: float = 0.0
    observed_len: int = 30
    horizon: int = 10
    stride: int = 1
    downsample: int = 2
    embed: int = 512
    embed_hidden: int = 512
    attention: int = 256
    mhu: int = 1024
    gate: int = 1024
    label_embed: int = 64
    conditioned: bool = False
    checkpoint_every: int = 0
    test_subjects: str = ""
    metric_mode: str = "euler"

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                continue
            if f.name in _MAY_BE_ZERO:
                if val < 0:
                    raise ConfigError(f"{f.name} must be non-negative, got {val}")
            elif val <= 0:
                raise ConfigError(f"{f.name} must be positive, got {val}")
        if self.metric_mode not in ("euler", "raw-expmap"):
            raise ConfigError(f"metric_mode must be euler or raw-expmap, got {self.metric_mode!r}")

    def model_dims(self, frame_dim: int, num_labels: int = 0) -> ModelDims:
        return ModelDims(
            frame_dim=frame_dim,
            embed=self.embed,
            embed_hidden=self.embed_hidden,
            attention=self.attention,
            mhu=self.mhu,
            gate=self.gate,
            label_embed=self.label_embed,
            num_labels=num_labels if self.conditioned else 0,
        )

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: Mapping[str, str | object]) -> "TrainingConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        parsed = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            parsed[key] = _coerce(key, kinds[key], raw)
        return cls(**parsed)


def _coerce(key: str, kind, raw):
    kind = kind if isinstance(kind, str) else kind.__name__
    if not isinstance(raw, str):
        return raw
    try:
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


# ---------------------------------------------------------------------------
# optimizer pieces

def lr_at(step: int, base: float = 0.05, factor: float = 0.95, interval: int = 10_000) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    return base * factor ** (step // interval)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float = 5.0) -> dict[str, np.ndarray]:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericFailure(f"non-finite gradient for parameter {name!r}", step=-1)
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays: Mapping[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in arrays.items()})


def sgd_momentum_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    momentum: float = 0.9,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """Classical momentum, in place: v <- mu v + g; theta <- theta - lr v."""
    for name in sorted(params):
        v = state.velocity[name]
        v *= momentum
        v += grads[name]
        params[name] -= lr * v
    state.step += 1
    return params, state


# ---------------------------------------------------------------------------
# data

@dataclass
class WindowSet:
    """Stacked, normalized training windows."""

    observed: np.ndarray  # (N, T', D)
    target: np.ndarray  # (N, T, D)
    labels: np.ndarray | None  # (N,) label ids

    def __len__(self) -> int:
        return self.observed.shape[0]


def split_by_subject(seqs: Sequence[MotionSequence], test_subjects: str) -> tuple[list, list]:
    chosen = {s.strip() for s in test_subjects.split(",") if s.strip()}
    train = [s for s in seqs if s.subject not in chosen]
    test = [s for s in seqs if s.subject in chosen]
    return train, test


def collect_windows(seqs: Sequence[MotionSequence], observed_len: int, horizon: int, stride: int = 1) -> list[WindowSample]:
    out = []
    for s in seqs:
        out.extend(make_windows(s, observed_len, horizon, stride))
    return out


def label_vocabulary(seqs: Sequence[MotionSequence]) -> tuple[str, ...]:
    return tuple(sorted({s.label for s in seqs if s.label is not None}))


def stack_windows(
    windows: Sequence[WindowSample],
    stats: NormalizationStats | None,
    vocab: Sequence[str] = (),
) -> WindowSet:
    obs = np.stack([w.observed for w in windows])
    tgt = np.stack([w.target for w in windows])
    if stats is not None:
        obs, tgt = normalize(obs, stats), normalize(tgt, stats)
    labels = None
    if vocab:
        missing = sorted({w.label for w in windows if w.label not in vocab}, key=str)
        if missing:
            raise ValueError(f"windows carry labels outside the vocabulary: {missing}")
        labels = np.array([vocab.index(w.label) for w in windows], dtype=np.int64)
    return WindowSet(obs, tgt, labels)


def prepare_training_data(
    seqs: Sequence[MotionSequence], config: TrainingConfig
) -> tuple[WindowSet, NormalizationStats, tuple[str, ...]]:
    """Downsample, fit normalization on these sequences, and cut windows."""
    seqs = [downsample(s, config.downsample) for s in seqs]
    stats = fit_normalizer(seqs)
    vocab = label_vocabulary(seqs) if config.conditioned else ()
    windows = collect_windows(seqs, config.observed_len, config.horizon, config.stride)
    if not windows:
        raise ValueError("no training windows: sequences are shorter than observed_len + horizon")
    return stack_windows(windows, stats, vocab), stats, vocab


# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    history: list[tuple[int, float, float]]


def batch_loss(params: ModelParams, data: WindowSet, idx: np.ndarray, config: TrainingConfig, graph: Graph | None = None):
    p = params.bind(graph)
    obs = data.observed[idx]
    labels = data.labels[idx] if data.labels is not None and params.dims.conditioned else None
    preds = decode_sequence(p, obs, data.target.shape[1], labels)
    truth = [data.target[idx, t] for t in range(data.target.shape[1])]
    loss = losses.combined_loss(preds, truth, obs[:, -1], config.w_gram, config.w_mse)
    return loss, p


def train(
    data: WindowSet,
    config: TrainingConfig,
    stats: NormalizationStats | None = None,
    vocab: Sequence[str] = (),
    params: ModelParams | None = None,
    on_checkpoint: Callable[[int, ModelParams], None] | None = None,
) -> TrainResult:
    if len(data) == 0:
        raise ValueError("training needs at least one window")
    if params is None:
        dims = config.model_dims(data.observed.shape[2], len(vocab))
        params = init_params(dims, seed=config.seed, labels=vocab, stats=stats)
    params.extra["config"] = config.as_dict()
    rng = np.random.default_rng(config.seed)
    state = OptimizerState.zeros_like(params.arrays)
    history = []
    for step in range(config.max_steps):
        idx = rng.integers(0, len(data), size=config.batch_size)
        graph = Graph()
        # overflow shows up as a non-finite loss or gradient and is reported below
        with np.errstate(over="ignore", invalid="ignore"):
            loss, p = batch_loss(params, data, idx, config, graph)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericFailure(f"loss became {value} at step {step}", step, params.copy())
            g = graph.backward(loss, p.values())
        grads = {k: g[t] for k, t in p.items()}
        try:
            grads = clip_gradients(grads, config.clip_norm)
        except NumericFailure as exc:
            raise NumericFailure(f"{exc} at step {step}", step, params.copy()) from None
        lr = lr_at(step, config.learning_rate, config.decay_factor, config.decay_steps)
        sgd_momentum_step(params.arrays, grads, state, lr, config.momentum)
        history.append((step, value, lr))
        if step % 100 == 0:
            log.info("step %d loss %.6g lr %.4g", step, value, lr)
        if on_checkpoint and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            on_checkpoint(step + 1, params)
    return TrainResult(params, history)


def format_history(history) -> str:
    lines = ["step,loss,lr"]
    lines += [f"{s},{loss!r},{lr!r}" for s, loss, lr in history]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------

Predictor = Callable[[np.ndarray, int], np.ndarray]


def evaluate(
    model: ModelParams | Predictor | str,
    windows: Sequence[WindowSample],
    mode: str = "euler",
    stats: NormalizationStats | None = None,
    horizon: int | None = None,
    chunk: int = 256,
) -> dict[int, float]:
    """Roll out every window and average the angle error per horizon.

    ``model`` is a ModelParams, a callable ``(observed_batch, horizon) ->
    predictions``, or ``"zero-velocity"``. Predictors run in the normalized
    space of ``stats`` (taken from the checkpoint for ModelParams) and are
    denormalized before scoring against the raw targets.
    """
    if not windows:
        raise ValueError("evaluation needs at least one test window")
    horizon = horizon or windows[0].target.shape[0]
    labels = None
    if isinstance(model, str):
        if model != "zero-velocity":
            raise ValueError(f"unknown baseline {model!r}")
        fn: Predictor = zero_velocity_predict
    elif isinstance(model, ModelParams):
        params = model
        D = windows[0].observed.shape[1]
        if params.dims.frame_dim != D:
            raise ValueError(f"test windows have D={D} but the model expects D={params.dims.frame_dim}")
        stats = params.stats
        if params.dims.conditioned and params.labels and all(w.label in params.labels for w in windows):
            labels = np.array([params.labels.index(w.label) for w in windows])

        def fn(obs, h, lab=None):
            return predict(params, obs, h, lab)
    else:
        fn = model

    preds = []
    for lo in range(0, len(windows), chunk):
        obs = np.stack([w.observed for w in windows[lo : lo + chunk]])
        if stats is not None:
            obs = normalize(obs, stats)
        if labels is not None:
            out = fn(obs, horizon, labels[lo : lo + chunk])
        else:
            out = fn(obs, horizon)
        preds.append(denormalize(out, stats) if stats is not None else out)
    pred = np.concatenate(preds)
    truth = np.stack([w.target[:horizon] for w in windows])
    if truth.shape[1] < horizon:
        raise ValueError(f"test windows only have {truth.shape[1]} target frames, need {horizon}")
    return losses.mean_angle_error(pred, truth, mode)
