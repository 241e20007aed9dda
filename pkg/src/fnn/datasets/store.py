"""Self-describing dataset files: a manifest, stacked arrays and per-sample metadata.

Stored as an ``.npz`` archive with three kinds of members: ``__manifest__``
(JSON), ``__records__`` (JSON list, one object per sample) and named arrays
whose first axis indexes samples.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT = "fnn-dataset/1"


@dataclass
class Dataset:
    manifest: dict
    arrays: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r["label"] for r in self.records], dtype=int)


def _json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True, default=_default).encode(), dtype=np.uint8)


def _default(x):
    if isinstance(x, (np.integer, np.floating)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def atomic_write_bytes(path, data: bytes) -> Path:
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def save_dataset(path, dataset: Dataset) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = dict(dataset.manifest, format=FORMAT, count=len(dataset.records))
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez_compressed(fh, __manifest__=_json(manifest), __records__=_json(dataset.records),
                                **dataset.arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_dataset(path) -> Dataset:
    with np.load(Path(path), allow_pickle=False) as data:
        manifest = json.loads(data["__manifest__"].tobytes().decode())
        if manifest.get("format") != FORMAT:
            raise ValueError(f"{path}: unsupported dataset format {manifest.get('format')!r}")
        records = json.loads(data["__records__"].tobytes().decode())
        arrays = {k: data[k] for k in data.files if not k.startswith("__")}
    return Dataset(manifest, arrays, records)
