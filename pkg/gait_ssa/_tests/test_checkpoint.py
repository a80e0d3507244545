import json

import numpy as np
import pytest
import torch

from .._checkpoint import (
    MANIFEST_FILE,
    TENSORS_FILE,
    load_encoder,
    load_tensors,
    save_encoder,
    save_tensors,
)
from .._encoder import EncoderConfig, GraphBranchConfig, ImageBranchConfig, build_encoder
from .._errors import CheckpointFormatError

SMALL = EncoderConfig(
    variant="cffn",
    graph=GraphBranchConfig(channels=(4, 4, 4, 6, 6, 6, 8, 8, 8)),
    image=ImageBranchConfig(dim=8, blocks=1, filter_hidden=4),
    projector_hidden=16,
    projection_dim=8,
)


def test_tensor_round_trip(tmp_path):
    tensors = {
        "a": torch.arange(6, dtype=torch.float32).reshape(2, 3),
        "b": torch.tensor([1.5, -2.25], dtype=torch.float64),
        "c": torch.tensor(7, dtype=torch.int64),
    }
    save_tensors(tmp_path, tensors, {"note": "x"})
    loaded, meta = load_tensors(tmp_path)
    assert list(loaded) == ["a", "b", "c"]
    for name, tensor in tensors.items():
        assert loaded[name].dtype == tensor.dtype
        assert torch.equal(loaded[name], tensor)
    assert meta == {"note": "x"}
    with pytest.raises(TypeError):
        save_tensors(tmp_path / "bad", {"x": torch.zeros(1, dtype=torch.bool)})


def test_encoder_round_trip_is_bitwise(tmp_path):
    encoder = build_encoder(SMALL, seed=3)
    # populate batch norm statistics
    encoder.train()
    with torch.no_grad():
        encoder(torch.randn(4, 16, 16, 3))
    save_encoder(encoder, tmp_path, {"epochs_completed": 2})
    loaded = load_encoder(tmp_path)
    assert loaded.config == encoder.config
    original = encoder.state_dict()
    for name, tensor in loaded.state_dict().items():
        assert torch.equal(tensor, original[name]), name

    x = torch.as_tensor(np.random.default_rng(0).normal(size=(3, 16, 16, 3)), dtype=torch.float32)
    encoder.eval()
    loaded.eval()
    with torch.no_grad():
        assert torch.equal(encoder(x), loaded(x))
    _, meta = load_tensors(tmp_path)
    assert meta["epochs_completed"] == 2


def test_double_precision_encoder_reloads_as_double(tmp_path):
    encoder = build_encoder(SMALL, seed=0).double()
    save_encoder(encoder, tmp_path)
    assert next(load_encoder(tmp_path).parameters()).dtype == torch.float64


def test_corrupt_checkpoints(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_tensors(tmp_path / "missing")

    save_tensors(tmp_path, {"a": torch.zeros(4)})
    payload = (tmp_path / TENSORS_FILE).read_bytes()
    (tmp_path / TENSORS_FILE).write_bytes(payload[:-1])
    with pytest.raises(CheckpointFormatError):
        load_tensors(tmp_path)

    (tmp_path / TENSORS_FILE).write_bytes(payload)
    manifest = json.loads((tmp_path / MANIFEST_FILE).read_text())
    manifest["schema_version"] = 0
    (tmp_path / MANIFEST_FILE).write_text(json.dumps(manifest))
    with pytest.raises(CheckpointFormatError):
        load_tensors(tmp_path)

    (tmp_path / MANIFEST_FILE).write_text("{truncated")
    with pytest.raises(CheckpointFormatError, match="JSON"):
        load_tensors(tmp_path)


def test_checkpoint_with_foreign_skeleton(tmp_path):
    save_encoder(build_encoder(SMALL, seed=0), tmp_path)
    manifest = json.loads((tmp_path / MANIFEST_FILE).read_text())
    topology = manifest["meta"]["topology"]
    topology["joint_names"] = topology["joint_names"][:15]
    (tmp_path / MANIFEST_FILE).write_text(json.dumps(manifest))
    with pytest.raises(CheckpointFormatError, match="16 joints"):
        load_encoder(tmp_path)
