"""Checkpoint container.

A checkpoint is a zip archive (stored, not compressed) holding one ``.npy``
member per parameter under ``params/``, the normalization stats under
``stats/`` and a ``meta.json`` echoing dimensions, label vocabulary and the
training config. Member timestamps are pinned so identical parameters give
byte-identical files.
"""

from __future__ import annotations

import io
import json
import os
import zipfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import ModelDims, ModelParams
from .skeleton import NormalizationStats

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr, dtype=np.float64), allow_pickle=False)
    return buf.getvalue()


def _put(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.external_attr = 0o644 << 16
    zf.writestr(info, data, compress_type=zipfile.ZIP_STORED)


def checkpoint_bytes(params: ModelParams, config: dict | None = None) -> bytes:
    meta = {
        "format_version": FORMAT_VERSION,
        "dims": asdict(params.dims),
        "joints": params.dims.frame_dim // 3,
        "labels": list(params.labels),
        "config": config if config is not None else params.extra.get("config", {}),
        "params": {k: list(v.shape) for k, v in sorted(params.arrays.items())},
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _put(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for name in sorted(params.arrays):
            _put(zf, f"params/{name}.npy", _npy_bytes(params.arrays[name]))
        if params.stats is not None:
            _put(zf, "stats/minimum.npy", _npy_bytes(params.stats.minimum))
            _put(zf, "stats/maximum.npy", _npy_bytes(params.stats.maximum))
    return buf.getvalue()


def save_checkpoint(params: ModelParams, path: str | os.PathLike, config: dict | None = None) -> None:
    """Write atomically: a crash never leaves a truncated checkpoint behind."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(params, config))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> ModelParams:
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with zf:
        names = set(zf.namelist())
        if "meta.json" not in names:
            raise CheckpointError(f"{path}: missing meta.json")
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {meta.get('format_version')}")

        def read(name):
            return np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)

        arrays = {k: read(f"params/{k}.npy") for k in meta["params"]}
        stats = None
        if "stats/minimum.npy" in names:
            stats = NormalizationStats(read("stats/minimum.npy"), read("stats/maximum.npy"))
    dims = ModelDims(**meta["dims"])
    return ModelParams(dims, arrays, tuple(meta["labels"]), stats, {"config": meta["config"]})
