"""Attention-based motion-context predictor with a modified highway unit cell.

All functions work on batches: a frame batch is a (B, D) tensor and the
observed embeddings are (B, T', d_e). Weight matrices follow the usual
column-vector convention (``W @ x``), which on row batches becomes
``x @ W.T``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .skeleton import NormalizationStats


@dataclass(frozen=True)
class ModelDims:
    frame_dim: int  # D = 3 * joints
    embed: int = 512  # d_e
    embed_hidden: int = 512  # d_h
    attention: int = 256  # d_a
    mhu: int = 1024  # d_m
    gate: int = 1024  # d_z
    label_embed: int = 64  # d_l
    num_labels: int = 0  # L; 0 disables the label conditioner

    @property
    def conditioned(self) -> bool:
        return self.num_labels > 0

    def shapes(self) -> dict[str, tuple[int, ...]]:
        D = self.frame_dim
        shapes = {
            "W_e1": (self.embed_hidden, D),
            "b_e1": (self.embed_hidden,),
            "W_e2": (self.embed, 2 * self.embed_hidden),
            "b_e2": (self.embed,),
            "W_beta": (1, self.attention),
            "U_beta_v": (self.attention, D),
            "U_beta_e": (self.attention, self.embed),
            "b_beta": (self.attention,),
            "W_v": (D, self.mhu),
            "U_vh": (self.mhu, self.embed),
            "b_v": (self.mhu,),
            "U_vx": (D, D),
            "b_vh": (D,),
            "W_z": (D, self.gate),
            "U_zx": (self.gate, D),
            "b_z": (self.gate,),
            "b_zx": (D,),
        }
        if self.conditioned:
            shapes["label_table"] = (self.num_labels, self.label_embed)
            shapes["W_mix"] = (self.embed, self.embed + self.label_embed)
            shapes["b_mix"] = (self.embed,)
        return shapes


PARAM_GROUPS = {
    "embedding": ("W_e1", "b_e1", "W_e2", "b_e2"),
    "attention": ("W_beta", "U_beta_v", "U_beta_e", "b_beta"),
    "mhu": ("W_v", "U_vh", "b_v", "U_vx", "b_vh", "W_z", "U_zx", "b_z", "b_zx"),
    "conditioner": ("label_table", "W_mix", "b_mix"),
}


@dataclass
class ModelParams:
    dims: ModelDims
    arrays: dict[str, np.ndarray]
    labels: tuple[str, ...] = ()
    stats: NormalizationStats | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = self.dims.shapes()
        if set(expected) != set(self.arrays):
            missing = sorted(set(expected) - set(self.arrays))
            unknown = sorted(set(self.arrays) - set(expected))
            raise ad.ShapeError(f"parameter set mismatch: missing {missing}, unknown {unknown}")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ad.ShapeError(f"{name}: expected {shape}, got {self.arrays[name].shape}")
        if self.dims.conditioned and len(self.labels) not in (0, self.dims.num_labels):
            raise ValueError("label vocabulary size does not match num_labels")

    def bind(self, graph: Graph | None = None) -> dict[str, Tensor]:
        """Wrap every array as a tensor; graph leaves when ``graph`` is given."""
        if graph is None:
            return {k: Tensor(v) for k, v in self.arrays.items()}
        return {k: graph.variable(v) for k, v in self.arrays.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.dims, {k: v.copy() for k, v in self.arrays.items()}, self.labels, self.stats, dict(self.extra)
        )

    def label_id(self, label: int | str) -> int:
        if not self.dims.conditioned:
            raise ValueError("model has no label conditioner")
        if isinstance(label, str):
            if label not in self.labels:
                raise ValueError(f"unknown label {label!r}; valid labels: {list(self.labels)}")
            return self.labels.index(label)
        return check_label(label, self.dims.num_labels, self.labels)

    def config(self) -> dict:
        return asdict(self.dims)


def init_params(
    dims: ModelDims,
    seed: int = 0,
    labels: Sequence[str] = (),
    stats: NormalizationStats | None = None,
) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, gate bias +1."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in dims.shapes().items():
        if name.startswith("b_"):
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[-1])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    arrays["b_zx"] = np.ones(dims.frame_dim)
    return ModelParams(dims, arrays, tuple(labels), stats)


def pin_gates(params: ModelParams) -> ModelParams:
    """Copy of ``params`` whose update gate is exactly 1 in float64, so every
    step returns its input frame unchanged."""
    out = params.copy()
    out.arrays["W_z"] = np.zeros_like(out.arrays["W_z"])
    # sigmoid(50) rounds to exactly 1.0
    out.arrays["b_zx"] = np.full_like(out.arrays["b_zx"], 50.0)
    return out


def check_label(label: int, num_labels: int, names: Sequence[str] = ()) -> int:
    if not 0 <= int(label) < num_labels:
        valid = list(names) if names else list(range(num_labels))
        raise ValueError(f"unknown label id {label}; valid labels: {valid}")
    return int(label)


# ---------------------------------------------------------------------------

def _linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    if x.shape[-1] != W.shape[1]:
        raise ad.ShapeError(f"input width {x.shape[-1]} does not match weight {W.shape}")
    lead = x.shape[:-1]
    y = ad.matmul(ad.reshape(x, (-1, x.shape[-1])), ad.transpose(W))
    if b is not None:
        y = ad.add_bias(y, b)
    return ad.reshape(y, lead + (W.shape[0],))


def embed_skeleton(p: Mapping[str, Tensor], x) -> Tensor:
    """Frames (..., D) -> embeddings (..., d_e)."""
    x = ad.as_tensor(x)
    h1 = _linear(x, p["W_e1"], p["b_e1"])
    h2 = ad.relu(h1)
    return _linear(ad.concat(h1, h2), p["W_e2"], p["b_e2"])


def attention_scores(p: Mapping[str, Tensor], v_prev, embeddings) -> Tensor:
    """beta[b, t'] = W_beta . tanh(U_beta_v v_prev + U_beta_e e_t' + b_beta)."""
    v_prev, embeddings = ad.as_tensor(v_prev), ad.as_tensor(embeddings)
    keys = _linear(embeddings, p["U_beta_e"])
    return _score_keys(p, v_prev, keys)


def _score_keys(p, v_prev: Tensor, keys: Tensor) -> Tensor:
    query = _linear(v_prev, p["U_beta_v"], p["b_beta"])
    steps = keys.shape[-2]
    hidden = ad.tanh(ad.add(keys, ad.repeat(query, -2, steps)))
    beta = _linear(hidden, p["W_beta"])
    return ad.reshape(beta, beta.shape[:-1])


def attention_weights(p: Mapping[str, Tensor], v_prev, embeddings) -> Tensor:
    return ad.softmax(attention_scores(p, v_prev, embeddings))


def motion_context(alpha, embeddings) -> Tensor:
    return ad.weighted_sum(alpha, embeddings)


def condition_context(p: Mapping[str, Tensor], h_mc, labels=None) -> Tensor:
    """Mix an activity label embedding into the motion context.

    Without a conditioner (no ``label_table`` in ``p``) or without labels the
    context is returned unchanged.
    """
    h_mc = ad.as_tensor(h_mc)
    if "label_table" not in p or labels is None:
        return h_mc
    n = p["label_table"].shape[0]
    idx = np.asarray(labels, dtype=np.int64)
    for lab in idx.reshape(-1):
        check_label(lab, n)
    if idx.ndim == 0 and h_mc.ndim == 2:
        idx = np.full(h_mc.shape[0], int(idx))
    emb = ad.gather_rows(p["label_table"], idx)
    return ad.relu(_linear(ad.concat(h_mc, emb), p["W_mix"], p["b_mix"]))


def mhu_step(p: Mapping[str, Tensor], x, h_mc, gate=None, parts: dict | None = None) -> Tensor:
    """One highway update: blend the candidate pose with the current pose.

    ``gate`` overrides the learned gate (any array broadcastable to x's shape).
    When ``parts`` is a dict it receives the candidate ``v`` and gate ``z``.
    """
    x, h_mc = ad.as_tensor(x), ad.as_tensor(h_mc)
    v = ad.add(
        _linear(ad.relu(_linear(h_mc, p["U_vh"], p["b_v"])), p["W_v"]),
        _linear(x, p["U_vx"], p["b_vh"]),
    )
    if gate is None:
        z = ad.sigmoid(_linear(ad.relu(_linear(x, p["U_zx"], p["b_z"])), p["W_z"], p["b_zx"]))
    else:
        z = Tensor(np.broadcast_to(np.asarray(gate, dtype=np.float64), x.shape))
    if parts is not None:
        parts["v"], parts["z"] = v, z
    return ad.add(ad.mul(ad.sub(np.ones(z.shape), z), v), ad.mul(z, x))


ContextHook = Callable[[int, object, Tensor], None]


def _label_plan(labels, horizon: int, batch: int):
    """Normalize labels into one entry per step (None, or an int array of length B)."""
    if labels is None:
        return [None] * horizon
    arr = np.asarray(labels, dtype=np.int64)
    if arr.ndim == 0:
        arr = np.full(batch, int(arr))
    if arr.ndim == 1:
        if arr.shape[0] != batch:
            raise ad.ShapeError(f"got {arr.shape[0]} labels for a batch of {batch}")
        return [arr] * horizon
    if arr.shape != (horizon, batch):
        raise ad.ShapeError(f"per-step labels must be ({horizon}, {batch}), got {arr.shape}")
    return list(arr)


def decode_sequence(
    p: Mapping[str, Tensor],
    observed,
    horizon: int,
    labels=None,
    hook: ContextHook | None = None,
) -> list[Tensor]:
    """Autoregressive rollout from observed frames (B, T', D).

    Returns ``horizon`` tensors of shape (B, D). ``labels`` may be None, one
    id, one id per sample (B,), or one row per step (horizon, B). ``hook`` is
    called as ``hook(step, labels_at_step, context)`` after conditioning.
    """
    observed = ad.as_tensor(observed)
    if observed.ndim != 3 or observed.shape[1] < 1:
        raise ValueError(f"observed must be (batch, T' >= 1, D), got {observed.shape}")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if horizon == 0:
        return []
    batch, steps, D = observed.shape
    plan = _label_plan(labels, horizon, batch)
    if p["W_e1"].shape[1] != D:
        raise ad.ShapeError(f"frames have D={D} but the model expects D={p['W_e1'].shape[1]}")

    emb = embed_skeleton(p, observed)
    keys = _linear(emb, p["U_beta_e"])
    # observed frames are data, not parameters: no gradient flows into them
    x = Tensor(observed.data[:, -1, :])
    out = []
    for t in range(horizon):
        alpha = ad.softmax(_score_keys(p, x, keys))
        h_mc = condition_context(p, motion_context(alpha, emb), plan[t])
        if hook is not None:
            hook(t, plan[t], h_mc)
        x = mhu_step(p, x, h_mc)
        out.append(x)
    return out


def predict(params: ModelParams, observed: np.ndarray, horizon: int, labels=None, hook=None) -> np.ndarray:
    """Numpy convenience wrapper: (T', D) -> (T, D) or (B, T', D) -> (B, T, D)."""
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim == 2:
        if observed.shape[0] == 0:
            raise ValueError("observed sequence is empty")
        return predict(params, observed[None], horizon, labels, hook)[0]
    if observed.shape[1] == 0:
        raise ValueError("observed sequence is empty")
    if labels is not None and not params.dims.conditioned:
        raise ValueError("labels given but the model has no label conditioner")
    frames = decode_sequence(params.bind(), observed, horizon, labels, hook)
    if not frames:
        return np.zeros((observed.shape[0], 0, observed.shape[2]))
    return np.stack([f.data for f in frames], axis=1)
