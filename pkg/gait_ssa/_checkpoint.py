"""Named-tensor checkpoint container.

A checkpoint is a directory holding ``manifest.json`` (name -> shape, dtype,
byte offset and size, plus free-form metadata) and ``tensors.bin`` (the raw
little-endian payload, tensors back to back in manifest order)."""

import json
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Mapping, Tuple

import numpy as np
import torch

from ._encoder import EncoderConfig, GaitEncoder
from ._errors import CheckpointFormatError
from ._topology import JointTopology

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
MANIFEST_FILE = "manifest.json"
TENSORS_FILE = "tensors.bin"

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


def save_tensors(path, tensors: Mapping[str, torch.Tensor], meta: dict = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = OrderedDict()
    offset = 0
    with open(path / TENSORS_FILE, "wb") as f:
        for name, tensor in tensors.items():
            try:
                dtype = _DTYPES[tensor.dtype]
            except KeyError:
                raise TypeError(f"cannot store {name} of dtype {tensor.dtype}") from None
            payload = tensor.detach().cpu().contiguous().numpy().astype(dtype).tobytes()
            f.write(payload)
            entries[name] = {
                "shape": list(tensor.shape),
                "dtype": dtype,
                "offset": offset,
                "nbytes": len(payload),
            }
            offset += len(payload)
    manifest = {
        "schema_version": CHECKPOINT_VERSION,
        "tensors": entries,
        "meta": meta or {},
    }
    (path / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    logger.debug("wrote %d tensors (%d bytes) to %s", len(entries), offset, path)


def load_tensors(path) -> Tuple["OrderedDict[str, torch.Tensor]", dict]:
    path = Path(path)
    for name in (MANIFEST_FILE, TENSORS_FILE):
        if not (path / name).is_file():
            raise FileNotFoundError(f"{path / name} does not exist")
    try:
        manifest = json.loads((path / MANIFEST_FILE).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path / MANIFEST_FILE} is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict):
        raise CheckpointFormatError(f"{path / MANIFEST_FILE} must hold a JSON object")
    if manifest.get("schema_version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"checkpoint schema_version {manifest.get('schema_version')!r} is not supported"
        )
    payload = (path / TENSORS_FILE).read_bytes()
    tensors = OrderedDict()
    for name, entry in manifest["tensors"].items():
        dtype = np.dtype(entry["dtype"])
        end = entry["offset"] + entry["nbytes"]
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if end > len(payload) or count * dtype.itemsize != entry["nbytes"]:
            raise CheckpointFormatError(f"tensor {name!r} does not fit {TENSORS_FILE}")
        array = np.frombuffer(payload, dtype, count, entry["offset"]).reshape(entry["shape"])
        tensors[name] = torch.from_numpy(array.astype(dtype.newbyteorder("="), copy=True))
    return tensors, manifest.get("meta", {})


def save_encoder(encoder: GaitEncoder, path, extra_meta: dict = None) -> None:
    """Store parameters, buffers and the architecture of ``encoder``."""
    meta = {
        "encoder": encoder.config.as_dict(),
        "topology": encoder.topology.as_dict(),
    }
    meta.update(extra_meta or {})
    save_tensors(path, encoder.state_dict(), meta)


def load_encoder(path) -> GaitEncoder:
    """Rebuild the encoder saved at ``path``; outputs match the saved one bitwise."""
    tensors, meta = load_tensors(path)
    try:
        config = EncoderConfig(**meta["encoder"])
        topology = JointTopology(**meta["topology"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{path} does not describe a valid encoder: {exc}") from exc
    encoder = GaitEncoder(config, topology)
    dtypes = {t.dtype for t in tensors.values() if t.is_floating_point()}
    if dtypes == {torch.float64}:
        encoder.double()
    encoder.load_state_dict(tensors)
    return encoder
