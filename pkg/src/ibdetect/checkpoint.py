"""Checkpoint persistence: JSON manifest plus a float32 little-endian blob.

``save_checkpoint(params, manifest, "run/model")`` writes ``run/model.json``
and ``run/model.bin``. The JSON carries ``format_version``, the config, the
seed and a tensor index ``name -> {shape, offset, length}`` (offset and length
in float32 elements).
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, ModelParams, param_shapes

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    return path.with_name(path.name + ".json"), path.with_name(path.name + ".bin")


def save_checkpoint(params: ModelParams, manifest: dict, path, extra: dict[str, np.ndarray] | None = None) -> None:
    """``extra`` holds non-model tensors (e.g. loss balance variables)."""
    json_path, bin_path = _paths(path)
    arrays = {n: t.values for n, t in params.tensors.items()}
    for name, arr in (extra or {}).items():
        if name in arrays:
            raise CheckpointError(f"extra tensor {name!r} collides with a model parameter")
        arrays[name] = np.asarray(arr)
    index, chunks, offset = {}, [], 0
    for name, arr in arrays.items():
        flat = np.ascontiguousarray(arr, dtype="<f4").ravel()
        index[name] = {"shape": list(arr.shape), "offset": offset, "length": int(flat.size)}
        chunks.append(flat.tobytes())
        offset += flat.size
    doc = dict(manifest)
    doc["format_version"] = CHECKPOINT_FORMAT_VERSION
    doc.setdefault("config", {})
    doc["config"] = dict(doc["config"], model=params.config.to_dict())
    doc["tensors"] = index
    doc["blob"] = bin_path.name
    doc["blob_bytes"] = 4 * offset
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    bin_path.write_bytes(b"".join(chunks))


def load_checkpoint(path, dtype=np.float64) -> tuple[ModelParams, dict]:
    """Returns ``(params, manifest)``; non-model tensors land in ``manifest["extra_tensors"]``."""
    json_path, bin_path = _paths(path)
    doc = json.loads(json_path.read_text())
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format_version {version!r}, expected {CHECKPOINT_FORMAT_VERSION}")
    blob = bin_path.read_bytes()
    expected = 4 * sum(entry["length"] for entry in doc["tensors"].values())
    if len(blob) != expected:
        raise CheckpointTruncatedError(f"checkpoint blob has {len(blob)} bytes, expected {expected}")
    flat = np.frombuffer(blob, dtype="<f4")
    config = ModelConfig.from_dict(doc["config"]["model"])
    model_shapes = dict(param_shapes(config))
    tensors, extra = {}, {}
    # the JSON index is key-sorted; blob order is what a re-save must reproduce
    for name, entry in sorted(doc["tensors"].items(), key=lambda kv: kv[1]["offset"]):
        shape = tuple(entry["shape"])
        if math.prod(shape) != entry["length"]:
            raise CheckpointShapeError(f"tensor {name!r}: shape {shape} does not hold {entry['length']} values")
        values = flat[entry["offset"]: entry["offset"] + entry["length"]].reshape(shape).astype(dtype)
        if name in model_shapes:
            if model_shapes[name] != shape:
                raise CheckpointShapeError(f"tensor {name!r} has shape {shape}, config expects {model_shapes[name]}")
            tensors[name] = Tensor(values, requires_grad=True, name=name)
        else:
            extra[name] = values
    missing = [n for n in model_shapes if n not in tensors]
    if missing:
        raise CheckpointShapeError(f"checkpoint lacks parameters {missing}")
    ordered = {n: tensors[n] for n in model_shapes}
    doc["extra_tensors"] = extra
    return ModelParams(config, ordered), doc
