"""Binary tensor container shared by label, prediction and feature files.

Layout::

    b"SGTC"                      4-byte magic
    uint32 little-endian         header length in bytes
    header                       UTF-8 JSON object
    payload                      row-major float32 little-endian

The header always carries ``kind``, ``dims``, ``dtype`` and ``endianness``;
grid tensors add ``grid_deg`` and ``class_names``, feature tensors add
``channels`` and ``bands``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContainerFormatError
from .label_codec import BACKGROUND, ClassMap, LabelTensor, PredictionGrid
from .sphere_grid import build_grid

MAGIC = b"SGTC"
_DTYPE = np.dtype("<f4")


def write_tensor(path, data: np.ndarray, header: dict) -> None:
    arr = np.ascontiguousarray(np.asarray(data, dtype=_DTYPE))
    head = dict(header)
    head.update(dims=list(arr.shape), dtype="float32", endianness="little")
    raw = json.dumps(head, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(arr.tobytes(order="C"))


def read_tensor(path) -> tuple[np.ndarray, dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ContainerFormatError(f"{path}: bad magic {blob[:4]!r}")
    (n,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerFormatError(f"{path}: unreadable header ({exc})") from None
    if header.get("dtype") != "float32" or header.get("endianness") != "little":
        raise ContainerFormatError(f"{path}: unsupported dtype/endianness")
    dims = tuple(int(d) for d in header["dims"])
    payload = blob[8 + n :]
    expected = int(np.prod(dims)) * _DTYPE.itemsize
    if len(payload) != expected:
        raise ContainerFormatError(f"{path}: payload {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype=_DTYPE).reshape(dims).astype(np.float64)
    return data, header


def _grid_header(kind: str, tensor) -> dict:
    return {
        "kind": kind,
        "grid_deg": tensor.spec.delta_deg,
        "class_names": list(tensor.classes.all_names),
    }


def save_grid_tensor(path, tensor: LabelTensor | PredictionGrid, extra: dict | None = None) -> None:
    kind = "label" if isinstance(tensor, LabelTensor) else "prediction"
    header = _grid_header(kind, tensor)
    header.update(extra or {})
    write_tensor(path, tensor.data, header)


def load_grid_tensor(path) -> LabelTensor | PredictionGrid:
    data, header = read_tensor(path)
    names = header.get("class_names")
    if not names or names[-1] != BACKGROUND:
        raise ContainerFormatError(f"{path}: class_names must end with {BACKGROUND!r}")
    spec = build_grid(header["grid_deg"])
    classes = ClassMap(tuple(names[:-1]))
    if header.get("kind") == "label":
        return LabelTensor(data, spec, classes)
    if header.get("kind") == "prediction":
        # float32 storage loses ~1e-7 of normalization
        data = data / data.sum(axis=-1, keepdims=True)
        return PredictionGrid(data, spec, classes)
    raise ContainerFormatError(f"{path}: kind {header.get('kind')!r} is not a grid tensor")
