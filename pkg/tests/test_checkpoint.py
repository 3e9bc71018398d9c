import json

import numpy as np
import pytest

from ibdetect.checkpoint import (
    CheckpointShapeError, CheckpointTruncatedError, CheckpointVersionError, load_checkpoint, save_checkpoint,
)
from ibdetect.model import ModelConfig, init_model, predict_proba
from ibdetect.train import build_data, evaluate, run_experiment

from conftest import small_run


@pytest.fixture(scope="module")
def trained():
    return run_experiment(small_run(seed=1))


def save(outcome, path):
    res = outcome.result
    save_checkpoint(res.params, {"seed": 1, "config": outcome.run.to_dict()}, path, extra=res.extra_tensors())


def test_round_trip_is_exact(trained, tmp_path):
    save(trained, tmp_path / "m")
    params, manifest = load_checkpoint(tmp_path / "m")
    for name in trained.result.params.names():
        np.testing.assert_array_equal(params[name].values, trained.result.params[name].values)
    assert list(manifest["extra_tensors"]) == list(trained.result.extra_tensors())
    assert manifest["seed"] == 1 and manifest["format_version"] == 1


def test_resave_is_byte_identical(trained, tmp_path):
    save(trained, tmp_path / "a")
    params, manifest = load_checkpoint(tmp_path / "a.json")
    extra = manifest.pop("extra_tensors")
    for key in ("tensors", "blob", "blob_bytes", "format_version"):
        manifest.pop(key)
    save_checkpoint(params, manifest, tmp_path / "b", extra=extra)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    a = json.loads((tmp_path / "a.json").read_text())
    b = json.loads((tmp_path / "b.json").read_text())
    a.pop("blob"), b.pop("blob")
    assert a == b


def test_loaded_model_scores_identically(trained, tmp_path):
    save(trained, tmp_path / "m")
    params, _ = load_checkpoint(tmp_path / "m")
    data, test = build_data(trained.run)
    again = evaluate(params, test)
    assert again.to_dict() == trained.test.to_dict()
    np.testing.assert_array_equal(predict_proba(params, test.inputs), predict_proba(trained.result.params, test.inputs))


def test_truncated_blob_names_byte_counts(trained, tmp_path):
    save(trained, tmp_path / "m")
    blob = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "m.bin").write_bytes(blob[:-8])
    with pytest.raises(CheckpointTruncatedError, match=f"{len(blob) - 8} bytes, expected {len(blob)}"):
        load_checkpoint(tmp_path / "m")


def test_version_mismatch(trained, tmp_path):
    save(trained, tmp_path / "m")
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["format_version"] = 99
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(CheckpointVersionError, match="99"):
        load_checkpoint(tmp_path / "m")


def test_shape_mismatch_against_config(tmp_path):
    cfg = ModelConfig(input_dim=5, n_blocks=2, block_hidden_dims=(3,), local_dim=2, fusion_hidden_dims=(3,), global_dim=2)
    save_checkpoint(init_model(cfg, 0), {}, tmp_path / "m")
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["config"]["model"]["input_dim"] = 6
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(CheckpointShapeError, match="block0.w0"):
        load_checkpoint(tmp_path / "m")


def test_blob_is_little_endian_float32(tmp_path):
    cfg = ModelConfig(input_dim=3, n_blocks=2, block_hidden_dims=(), local_dim=1, fusion_hidden_dims=(), global_dim=2)
    params = init_model(cfg, 0)
    save_checkpoint(params, {}, tmp_path / "m")
    doc = json.loads((tmp_path / "m.json").read_text())
    entry = doc["tensors"]["block0.w0"]
    raw = np.frombuffer((tmp_path / "m.bin").read_bytes(), dtype="<f4")
    chunk = raw[entry["offset"]: entry["offset"] + entry["length"]].reshape(entry["shape"])
    np.testing.assert_array_equal(chunk, params["block0.w0"].values.astype(np.float32))
    assert doc["blob_bytes"] == 4 * raw.size
