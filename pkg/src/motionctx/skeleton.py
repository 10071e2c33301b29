"""Skeleton sequences in exponential-map form: I/O, preprocessing and rotations."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    pass


@dataclass
class MotionSequence:
    """Frames of shape (length, 3 * joints), one exponential-map triple per joint."""

    frames: np.ndarray
    fps: float = 50.0
    label: str | None = None
    subject: str | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] % 3:
            raise DataFormatError(f"frames must be (length, 3N), got {self.frames.shape}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def joints(self) -> int:
        return self.frames.shape[1] // 3


@dataclass(frozen=True)
class NormalizationStats:
    minimum: np.ndarray
    maximum: np.ndarray

    @property
    def dim(self) -> int:
        return self.minimum.shape[0]


@dataclass
class WindowSample:
    observed: np.ndarray  # (T', D)
    target: np.ndarray  # (T, D)
    label: str | None = None
    start: int = 0
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# CSV format: optional "# fps=50 label=walking subject=S1 joints=33" header,
# then one frame per row of D comma-separated floats.

def _parse_header(line: str, path, lineno: int) -> dict:
    meta = {}
    for tok in line.lstrip("#").split():
        if "=" not in tok:
            raise DataFormatError(f"{path}:{lineno}: bad header token {tok!r}")
        key, val = tok.split("=", 1)
        meta[key] = val
    return meta


def read_sequence(path: str | os.PathLike) -> MotionSequence | None:
    """Parse one CSV file; returns None for a file with no frame rows."""
    meta: dict = {}
    rows = []
    width = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                meta.update(_parse_header(line, path, lineno))
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: malformed row") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} values, found {len(row)}"
                )
            if not all(np.isfinite(row)):
                raise DataFormatError(f"{path}:{lineno}: non-finite value")
            rows.append(row)
    if not rows:
        return None
    if width % 3:
        raise DataFormatError(f"{path}: row width {width} is not a multiple of 3")
    if "joints" in meta and int(meta["joints"]) * 3 != width:
        raise DataFormatError(f"{path}: header says joints={meta['joints']} but rows have {width} values")
    return MotionSequence(
        np.array(rows),
        fps=float(meta.get("fps", 50)),
        label=meta.get("label"),
        subject=meta.get("subject"),
    )


def load_sequences(path: str | os.PathLike, format: str = "csv") -> list[MotionSequence]:
    """Load a CSV file, or every ``*.csv`` in a directory (sorted by name)."""
    if format != "csv":
        raise ValueError(f"unsupported sequence format {format!r}")
    path = Path(path)
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    seqs = [s for s in (read_sequence(f) for f in files) if s is not None]
    dims = {s.dim for s in seqs}
    if len(dims) > 1:
        raise DataFormatError(f"inconsistent frame widths across files: {sorted(dims)}")
    return seqs


def format_sequence(seq: MotionSequence) -> str:
    head = [f"fps={seq.fps:g}"]
    if seq.label is not None:
        head.append(f"label={seq.label}")
    if seq.subject is not None:
        head.append(f"subject={seq.subject}")
    head.append(f"joints={seq.joints}")
    lines = ["# " + " ".join(head)]
    # repr() of a float round-trips exactly
    lines += [",".join(repr(float(v)) for v in row) for row in seq.frames]
    return "\n".join(lines) + "\n"


def write_sequence(seq: MotionSequence, path: str | os.PathLike) -> None:
    Path(path).write_text(format_sequence(seq))


# ---------------------------------------------------------------------------

def downsample(seq: MotionSequence, factor: int) -> MotionSequence:
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    return replace(seq, frames=seq.frames[::factor].copy(), fps=seq.fps / factor)


def fit_normalizer(train: list[MotionSequence]) -> NormalizationStats:
    stacked = np.concatenate([s.frames for s in train], axis=0)
    if stacked.shape[0] == 0:
        raise ValueError("cannot fit normalization on zero frames")
    return NormalizationStats(stacked.min(axis=0), stacked.max(axis=0))


def normalize(x: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Map [min, max] to [-1, 1] per dimension; constant dimensions map to 0."""
    lo, hi = stats.minimum, stats.maximum
    span = hi - lo
    live = span > 0
    out = np.zeros(np.shape(x))
    out[..., live] = 2.0 * (np.asarray(x)[..., live] - lo[live]) / span[live] - 1.0
    return out


def denormalize(y: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    lo, hi = stats.minimum, stats.maximum
    span = hi - lo
    live = span > 0
    out = np.broadcast_to((hi + lo) / 2, np.shape(y)).copy()
    out[..., live] = (np.asarray(y)[..., live] + 1.0) * span[live] / 2.0 + lo[live]
    return out


def make_windows(seq: MotionSequence, observed_len: int, horizon: int, stride: int = 1) -> list[WindowSample]:
    if observed_len < 1 or horizon < 1 or stride < 1:
        raise ValueError("observed_len, horizon and stride must all be >= 1")
    span = observed_len + horizon
    out = []
    for s in range(0, len(seq) - span + 1, stride):
        out.append(
            WindowSample(
                observed=seq.frames[s : s + observed_len],
                target=seq.frames[s + observed_len : s + span],
                label=seq.label,
                start=s,
                meta={"subject": seq.subject},
            )
        )
    return out


# ---------------------------------------------------------------------------
# rotations

_SMALL_ANGLE = 1e-8


def _skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def expmap_to_rotmat(v) -> np.ndarray:
    """Rodrigues' formula for a rotation vector (axis * angle)."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v)
    K = _skew(v)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    K = K / theta
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def euler_to_rotmat(angles) -> np.ndarray:
    """R = Rz(alpha) @ Ry(beta) @ Rx(gamma) (intrinsic Z-Y-X)."""
    a, b, g = angles
    ca, sa, cb, sb, cg, sg = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(g), np.sin(g)
    Rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cg, -sg], [0.0, sg, cg]])
    return Rz @ Ry @ Rx


def is_rotation(R: np.ndarray, tol: float = 1e-6) -> bool:
    R = np.asarray(R)
    return (
        R.shape == (3, 3)
        and bool(np.all(np.isfinite(R)))
        and np.abs(R.T @ R - np.eye(3)).max() <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def rotmat_to_euler(R) -> np.ndarray:
    """Inverse of :func:`euler_to_rotmat`, returning (alpha, beta, gamma).

    Within 1e-7 of gimbal lock gamma is fixed to 0 and alpha absorbs the
    remaining rotation about the shared axis.
    """
    R = np.asarray(R, dtype=np.float64)
    if not is_rotation(R):
        raise ValueError("input is not a proper rotation matrix")
    s = np.clip(-R[2, 0], -1.0, 1.0)
    beta = np.arcsin(s)
    if abs(R[2, 0]) > 1.0 - 1e-7:
        alpha = np.arctan2(-R[0, 1], R[1, 1])
        gamma = 0.0
    else:
        alpha = np.arctan2(R[1, 0], R[0, 0])
        gamma = np.arctan2(R[2, 1], R[2, 2])
    return np.array([alpha, beta, gamma])


def expmap_to_euler(frames: np.ndarray) -> np.ndarray:
    """Convert (..., 3N) exponential maps to (..., 3N) Euler triples joint by joint.

    Vectorized form of ``rotmat_to_euler(expmap_to_rotmat(v))`` for every joint.
    """
    frames = np.asarray(frames, dtype=np.float64)
    v = frames.reshape(-1, 3)
    theta = np.linalg.norm(v, axis=1)
    small = theta < _SMALL_ANGLE
    K = np.zeros((v.shape[0], 3, 3))
    K[:, 0, 1], K[:, 0, 2], K[:, 1, 2] = -v[:, 2], v[:, 1], -v[:, 0]
    K[:, 1, 0], K[:, 2, 0], K[:, 2, 1] = v[:, 2], -v[:, 1], v[:, 0]
    KK = K @ K
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(theta) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(theta)) / safe**2)
    R = np.eye(3) + a[:, None, None] * K + b[:, None, None] * KK
    if not np.all(np.isfinite(R)):
        bad = int(np.flatnonzero(~np.isfinite(R).all(axis=(1, 2)))[0])
        raise ValueError(f"non-finite rotation for joint entry {bad}")
    beta = np.arcsin(np.clip(-R[:, 2, 0], -1.0, 1.0))
    gimbal = np.abs(R[:, 2, 0]) > 1.0 - 1e-7
    alpha = np.where(gimbal, np.arctan2(-R[:, 0, 1], R[:, 1, 1]), np.arctan2(R[:, 1, 0], R[:, 0, 0]))
    gamma = np.where(gimbal, 0.0, np.arctan2(R[:, 2, 1], R[:, 2, 2]))
    return np.stack([alpha, beta, gamma], axis=1).reshape(frames.shape)
