"""Versioned binary container for trained models.

Layout: magic, format version, model kind, params JSON blob, a named
array section, and a trailing CRC32 over everything before it.  Arrays
are written raw (dtype + shape + C-order bytes), so a given model
serializes byte-identically across runs.
"""

from __future__ import annotations

import io
import json
import os
import struct
import zlib
from dataclasses import asdict

import numpy as np

from .gbdt import GbdtModel, GbdtParams, Tree
from .mlp import MlpModel, MlpParams

MAGIC = b"STPM"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Corrupt, truncated, or incompatible model file."""


def _write_bytes(fh, data: bytes) -> None:
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def _read_bytes(fh) -> bytes:
    raw = fh.read(4)
    if len(raw) != 4:
        raise ModelFormatError("truncated model file")
    (n,) = struct.unpack("<I", raw)
    data = fh.read(n)
    if len(data) != n:
        raise ModelFormatError("truncated model file")
    return data


def _write_arrays(fh, arrays: dict[str, np.ndarray]) -> None:
    fh.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        _write_bytes(fh, name.encode("utf-8"))
        _write_bytes(fh, arr.dtype.str.encode("ascii"))
        fh.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<Q", dim))
        _write_bytes(fh, arr.tobytes())


def _read_arrays(fh) -> dict[str, np.ndarray]:
    raw = fh.read(4)
    if len(raw) != 4:
        raise ModelFormatError("truncated model file")
    (count,) = struct.unpack("<I", raw)
    arrays = {}
    for _ in range(count):
        name = _read_bytes(fh).decode("utf-8")
        dtype = np.dtype(_read_bytes(fh).decode("ascii"))
        raw = fh.read(1)
        if len(raw) != 1:
            raise ModelFormatError("truncated model file")
        (ndim,) = struct.unpack("<B", raw)
        shape = []
        for _ in range(ndim):
            raw = fh.read(8)
            if len(raw) != 8:
                raise ModelFormatError("truncated model file")
            shape.append(struct.unpack("<Q", raw)[0])
        data = _read_bytes(fh)
        arrays[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    return arrays


def _model_payload(model) -> tuple[str, dict, dict[str, np.ndarray]]:
    if isinstance(model, GbdtModel):
        trees = model.trees
        offsets = np.zeros(len(trees) + 1, dtype=np.int64)
        for i, t in enumerate(trees):
            offsets[i + 1] = offsets[i] + len(t.feature)
        cat = {
            key: np.concatenate([t.arrays()[key] for t in trees]) if trees
            else np.zeros(0)
            for key in ("feature", "threshold", "left", "right", "value")
        }
        arrays = dict(cat)
        arrays["offsets"] = offsets
        arrays["meta"] = np.array([model.base_prediction, model.n_features], dtype=np.float64)
        arrays["train_mse"] = np.asarray(model.train_mse, dtype=np.float64)
        return "gbdt", asdict(model.params), arrays
    if isinstance(model, MlpModel):
        arrays = {}
        for i, (W, b) in enumerate(model.weights):
            arrays[f"W{i}"] = W
            arrays[f"b{i}"] = b
        arrays["input_mean"] = model.input_mean
        arrays["input_std"] = model.input_std
        arrays["loss_curve"] = np.asarray(model.loss_curve, dtype=np.float64)
        params = asdict(model.params)
        params["layers"] = list(params["layers"])
        return "mlp", params, arrays
    raise TypeError(f"cannot serialize model of type {type(model).__name__}")


def _restore(kind: str, params: dict, arrays: dict[str, np.ndarray]):
    if kind == "gbdt":
        p = GbdtParams(**params)
        offsets = arrays["offsets"]
        trees = []
        for i in range(len(offsets) - 1):
            lo, hi = int(offsets[i]), int(offsets[i + 1])
            trees.append(Tree(
                arrays["feature"][lo:hi], arrays["threshold"][lo:hi],
                arrays["left"][lo:hi], arrays["right"][lo:hi],
                arrays["value"][lo:hi], p.max_depth))
        base, n_features = arrays["meta"]
        return GbdtModel(float(base), trees, p, int(n_features),
                         list(arrays["train_mse"]))
    if kind == "mlp":
        params = dict(params)
        params["layers"] = tuple(params["layers"])
        p = MlpParams(**params)
        weights = []
        i = 0
        while f"W{i}" in arrays:
            weights.append((arrays[f"W{i}"], arrays[f"b{i}"]))
            i += 1
        return MlpModel(weights, arrays["input_mean"], arrays["input_std"], p,
                        list(arrays["loss_curve"]))
    raise ModelFormatError(f"unknown model kind {kind!r}")


def dump_model(model) -> bytes:
    kind, params, arrays = _model_payload(model)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    _write_bytes(buf, kind.encode("ascii"))
    _write_bytes(buf, json.dumps(params, sort_keys=True).encode("utf-8"))
    _write_arrays(buf, arrays)
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def load_model_bytes(data: bytes):
    if len(data) < 12 or data[:4] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    body, crc_raw = data[:-4], data[-4:]
    if len(crc_raw) != 4 or zlib.crc32(body) != struct.unpack("<I", crc_raw)[0]:
        raise ModelFormatError("checksum mismatch (truncated or corrupt file)")
    fh = io.BytesIO(body[4:])
    (version,) = struct.unpack("<I", fh.read(4))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    kind = _read_bytes(fh).decode("ascii")
    params = json.loads(_read_bytes(fh).decode("utf-8"))
    arrays = _read_arrays(fh)
    return _restore(kind, params, arrays)


def save_model(model, path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(dump_model(model))


def load_model(path: str):
    with open(path, "rb") as fh:
        return load_model_bytes(fh.read())
