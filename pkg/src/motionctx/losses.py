"""Training objectives and the wrapped mean-angle-error metric.

Loss functions take sequences of frames indexed by time (``pred[t]`` is one
frame, shape (D,) or (B, D)) and build autodiff tensors, so they serve both
for training and for plain evaluation via ``.item()``.
"""

from __future__ import annotations

import csv
import io
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .skeleton import expmap_to_euler

FRAME_MS = 40  # 25 fps
TWO_PI = 2.0 * np.pi


def gram_matrix(x_t, x_prev) -> Tensor:
    x_t, x_prev = ad.as_tensor(x_t), ad.as_tensor(x_prev)
    if x_t.shape != x_prev.shape:
        raise ad.ShapeError(f"gram_matrix: frame shapes {x_t.shape} and {x_prev.shape} differ")
    return ad.outer(ad.concat(x_t, x_prev))


def gram_loss(pred: Sequence, truth: Sequence, pred_prev0, truth_prev0) -> Tensor:
    """Squared Frobenius distance between consecutive-pair gram matrices.

    Sums over t = 1 .. T-1 and divides by T. Frame t=0 is the supplied
    previous frame (normally the last observed pose). For batched frames the
    result is also averaged over the batch.
    """
    T = len(pred)
    if len(truth) != T:
        raise ad.ShapeError(f"gram_loss: {T} predicted frames vs {len(truth)} true frames")
    if T < 1:
        raise ValueError("gram_loss needs at least one frame")
    pred = [ad.as_tensor(f) for f in pred]
    truth = [ad.as_tensor(f) for f in truth]
    prev_p, prev_t = ad.as_tensor(pred_prev0), ad.as_tensor(truth_prev0)
    batch = pred[0].shape[0] if pred[0].ndim == 2 else 1
    acc = Tensor(0.0)
    for t in range(T - 1):
        diff = ad.sub(gram_matrix(pred[t], prev_p), gram_matrix(truth[t], prev_t))
        acc = ad.add(acc, ad.total(ad.mul(diff, diff)))
        prev_p, prev_t = pred[t], truth[t]
    return ad.scale(acc, 1.0 / (T * batch))


def mse_loss(pred: Sequence, truth: Sequence) -> Tensor:
    """Mean squared error over every entry of every frame."""
    if len(pred) != len(truth):
        raise ad.ShapeError(f"mse_loss: {len(pred)} vs {len(truth)} frames")
    acc = Tensor(0.0)
    count = 0
    for p, q in zip(pred, truth):
        p, q = ad.as_tensor(p), ad.as_tensor(q)
        if p.shape != q.shape:
            raise ad.ShapeError(f"mse_loss: frame shapes {p.shape} and {q.shape} differ")
        d = ad.sub(p, q)
        acc = ad.add(acc, ad.total(ad.mul(d, d)))
        count += p.data.size
    if count == 0:
        raise ValueError("mse_loss needs at least one entry")
    return ad.scale(acc, 1.0 / count)


def combined_loss(pred, truth, prev0, w_gram: float = 1.0, w_mse: float = 0.0) -> Tensor:
    """w_gram * gram + w_mse * mse; prediction and truth share the previous frame."""
    loss = Tensor(0.0)
    if w_gram:
        loss = ad.add(loss, ad.scale(gram_loss(pred, truth, prev0, prev0), w_gram))
    if w_mse:
        loss = ad.add(loss, ad.scale(mse_loss(pred, truth), w_mse))
    return loss


# ---------------------------------------------------------------------------
# metric

def angle_distance(a, b):
    """min(|a-b|, 2pi - |a-b|) after reducing |a-b| modulo 2pi."""
    d = np.mod(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)), TWO_PI)
    return np.minimum(d, TWO_PI - d)


def per_frame_angle_error(pred, truth, mode: str = "euler") -> np.ndarray:
    """Sum over joints of the wrapped per-joint angle distance.

    ``pred`` and ``truth`` are denormalized exponential maps of shape
    (..., D); the result has shape ``pred.shape[:-1]``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ad.ShapeError(f"prediction {pred.shape} and truth {truth.shape} differ")
    if mode == "euler":
        pred, truth = expmap_to_euler(pred), expmap_to_euler(truth)
    elif mode != "raw-expmap":
        raise ValueError(f"unknown metric mode {mode!r}")
    d = angle_distance(pred, truth)
    d = d.reshape(d.shape[:-1] + (-1, 3))
    return np.sqrt((d * d).sum(axis=-1)).sum(axis=-1)


def mean_angle_error(pred, truth, mode: str = "euler") -> dict[int, float]:
    """Per-horizon error table keyed by lead time in milliseconds.

    Inputs are (T, D) for one sample or (S, T, D) for S samples; samples are
    averaged with an arithmetic mean per horizon.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ad.ShapeError(f"prediction {pred.shape} and truth {truth.shape} differ")
    if pred.ndim == 2:
        pred, truth = pred[None], truth[None]
    if pred.ndim != 3:
        raise ad.ShapeError(f"expected (T, D) or (S, T, D), got {pred.shape}")
    errors = np.empty(pred.shape[:2])
    for s in range(pred.shape[0]):
        try:
            errors[s] = per_frame_angle_error(pred[s], truth[s], mode)
        except ValueError as exc:
            raise ValueError(f"sample {s}: {exc}") from exc
    per_horizon = errors.mean(axis=0)
    return {(t + 1) * FRAME_MS: float(e) for t, e in enumerate(per_horizon)}


def format_error_table(table: dict[int, float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["horizon_ms", "error"])
    for ms in sorted(table):
        w.writerow([ms, repr(table[ms])])
    return buf.getvalue()


def parse_error_table(text: str) -> dict[int, float]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["horizon_ms", "error"]:
        raise ValueError("missing horizon_ms,error header")
    return {int(ms): float(err) for ms, err in rows[1:]}
