"""Single-file checkpoints with a JSON preamble and raw little-endian tensors.

Layout::

    b"CSCK"                 magic
    u16 LE                  format version
    u32 LE                  preamble length L
    L bytes                 UTF-8 JSON (keys sorted): stage, model_config, step,
                            train_config, rng_state (hex), tensors
    tensor data             concatenated in the order of ``tensors``

``tensors`` lists ``{"name", "dtype", "shape"}`` records in ``state_dict``
order; each tensor is stored C-contiguous, little-endian. The file must end
exactly after the last tensor.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .atsp import ATSPConfig, ATSPModule
from .btd import BTDConfig, BTDModel
from .codec import CodecConfig, CodecModel
from .errors import CheckpointError
from .pipeline import MaskSeparator

MAGIC = b"CSCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")

_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}
_TORCH = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    stage: str
    model_config: dict
    state: dict[str, torch.Tensor]
    step: int = 0
    train_config: dict = field(default_factory=dict)
    rng_state: bytes = b""

    def build(self) -> torch.nn.Module:
        """Instantiate the model this checkpoint describes and load its parameters."""
        model = _constructors()[self.stage](self.model_config)
        model.load_state_dict(self.state, strict=True)
        model.eval()
        return model


def _constructors():
    return {
        "codec": lambda c: CodecModel(CodecConfig(**c)),
        "btd": lambda c: BTDModel(BTDConfig(**c)),
        "atsp": lambda c: ATSPModule(ATSPConfig(**c)),
        "separator": lambda c: MaskSeparator(**c),
    }


def model_config_of(model: torch.nn.Module) -> dict:
    if isinstance(model, MaskSeparator):
        return model.config_dict()
    return model.config.to_dict()


def checkpoint_of(model: torch.nn.Module, stage: str, step: int = 0, train_config: dict | None = None,
                  rng_state: bytes = b"") -> Checkpoint:
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return Checkpoint(stage, model_config_of(model), state, step, train_config or {}, rng_state)


def to_bytes(ckpt: Checkpoint) -> bytes:
    records, blobs = [], []
    for name, tensor in ckpt.state.items():
        if tensor.dtype not in _DTYPES:
            raise TypeError(f"cannot store {name} of dtype {tensor.dtype}")
        arr = tensor.detach().cpu().contiguous().numpy().astype(_DTYPES[tensor.dtype], copy=False)
        records.append({"name": name, "dtype": _DTYPES[tensor.dtype], "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    preamble = json.dumps({
        "stage": ckpt.stage, "model_config": ckpt.model_config, "step": ckpt.step,
        "train_config": ckpt.train_config, "rng_state": ckpt.rng_state.hex(), "tensors": records,
    }, sort_keys=True).encode()
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(preamble)) + preamble + b"".join(blobs)


def from_bytes(data: bytes, expect_stage: str | None = None) -> Checkpoint:
    """Parse a checkpoint; nothing is constructed unless the whole file validates."""
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"truncated checkpoint: {len(data)} bytes")
    magic, version, length = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    end = _PREFIX.size + length
    if len(data) < end:
        raise CheckpointError("truncated checkpoint preamble")
    try:
        meta = json.loads(data[_PREFIX.size:end])
        stage, records = meta["stage"], meta["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as err:
        raise CheckpointError(f"corrupt checkpoint preamble: {err}") from err
    if expect_stage is not None and stage != expect_stage:
        raise CheckpointError(f"checkpoint holds a {stage} model, expected {expect_stage}")
    state, offset = {}, end
    for rec in records:
        dtype = np.dtype(rec["dtype"])
        size = int(np.prod(rec["shape"], dtype=np.int64)) * dtype.itemsize
        if offset + size > len(data):
            raise CheckpointError(f"truncated checkpoint: tensor {rec['name']} is incomplete")
        arr = np.frombuffer(data, dtype=dtype, count=size // dtype.itemsize, offset=offset)
        state[rec["name"]] = torch.from_numpy(arr.reshape(rec["shape"]).astype(dtype.newbyteorder("="))).to(
            _TORCH[rec["dtype"]])
        offset += size
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} unexpected trailing bytes in checkpoint")
    return Checkpoint(stage, meta["model_config"], state, int(meta["step"]), meta["train_config"],
                      bytes.fromhex(meta["rng_state"]))


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path: str | Path, expect_stage: str | None = None) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    return from_bytes(data, expect_stage)


def load_model(path: str | Path, stage: str) -> torch.nn.Module:
    return load_checkpoint(path, stage).build()
