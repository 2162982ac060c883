"""
OPMT binary tensor format
=========================

Layout (all little-endian)::

    b"OPMT" | u32 rank | rank x u32 extents | prod(extents) x f64 values

Values are stored row-major. A *named archive* is a directory holding one
``<name>.opmt`` file per tensor and an ``index.json`` that maps names to
files and carries an optional free-form descriptor.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from ..core.errors import TensorFormatError
from .tensor import Tensor

MAGIC = b"OPMT"
ARCHIVE_INDEX = "index.json"
ARCHIVE_FORMAT = "opmt-archive"
ARCHIVE_VERSION = 1

PathLike = Union[str, Path]


def _as_array(value: Union[Tensor, np.ndarray, float]) -> np.ndarray:
    if isinstance(value, Tensor):
        value = value.data
    return np.asarray(value)


def encode_tensor(value: Union[Tensor, np.ndarray]) -> bytes:
    arr = _as_array(value)
    header = MAGIC + struct.pack("<I", arr.ndim)
    if arr.ndim:
        header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise TensorFormatError("not an OPMT tensor (bad magic)")
    (rank,) = struct.unpack_from("<I", buf, 4)
    offset = 8 + 4 * rank
    if len(buf) < offset:
        raise TensorFormatError(f"truncated OPMT header (rank {rank})")
    shape: Tuple[int, ...] = struct.unpack_from(f"<{rank}I", buf, 8) if rank else ()
    count = int(np.prod(shape)) if rank else 1
    if len(buf) != offset + 8 * count:
        raise TensorFormatError(
            f"OPMT payload has {len(buf) - offset} bytes, expected {8 * count} for shape {shape}"
        )
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)


def save_tensor(path: PathLike, value: Union[Tensor, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(value))
    return path


def load_tensor(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return decode_tensor(path.read_bytes())


def save_archive(
    directory: PathLike,
    tensors: Mapping[str, Union[Tensor, np.ndarray]],
    descriptor: Optional[Dict[str, Any]] = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in sorted(tensors):
        filename = f"{name}.opmt"
        save_tensor(directory / filename, tensors[name])
        files[name] = filename
    index = {
        "format": ARCHIVE_FORMAT,
        "version": ARCHIVE_VERSION,
        "tensors": files,
        "descriptor": descriptor or {},
    }
    (directory / ARCHIVE_INDEX).write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return directory


def load_archive(directory: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    directory = Path(directory)
    index_path = directory / ARCHIVE_INDEX
    if not index_path.exists():
        raise FileNotFoundError(index_path)
    index = json.loads(index_path.read_text())
    if index.get("format") != ARCHIVE_FORMAT:
        raise TensorFormatError(f"{index_path} is not an OPMT archive index")
    tensors = {name: load_tensor(directory / fname) for name, fname in index["tensors"].items()}
    return tensors, index.get("descriptor", {})
