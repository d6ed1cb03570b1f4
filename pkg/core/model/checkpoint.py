# Binary checkpoint format
#
# Layout: 8-byte magic, uint64 little-endian header length, UTF-8 JSON header,
# then every tensor as contiguous float64 little-endian values. The header
# indexes tensors by name, shape, offset and byte count and carries a sha256 of
# the payload.

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import torch

from core.config import FEATURE_ORDER, ModelConfig
from core.errors import CheckpointError
from core.model.layers import DTYPE
from core.model.network import CityChargeNet, assert_shapes
from core.storage.bundles import BundleStore

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAGIC = b"CHGCAST\x00"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<Q")
_VALUE_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    """A loaded checkpoint: the model plus everything needed to resume training"""

    model: CityChargeNet
    header: Dict[str, Any]
    optimizer_state: Optional[Dict[str, Any]] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def epoch(self) -> Optional[int]:
        return self.header.get("epoch")


def _tensor_bytes(tensor: torch.Tensor) -> bytes:
    return tensor.detach().cpu().to(DTYPE).contiguous().numpy().astype(_VALUE_DTYPE, copy=False).tobytes()


def _optimizer_blobs(state: Dict[str, Any]) -> Tuple[Dict[str, Any], List[Tuple[str, torch.Tensor]]]:
    """Split an optimizer state_dict into a JSON part and named tensors"""
    blobs = []
    slots: Dict[str, Dict[str, str]] = {}
    for index, slot in state["state"].items():
        dtypes = {}
        for key, value in slot.items():
            name = f"optimizer/{index}/{key}"
            blobs.append((name, torch.as_tensor(value)))
            dtypes[key] = str(torch.as_tensor(value).dtype).replace("torch.", "")
        slots[str(index)] = dtypes
    return {"slots": slots, "param_groups": state["param_groups"]}, blobs


def _restore_optimizer(meta: Dict[str, Any], tensors: Dict[str, torch.Tensor]) -> Dict[str, Any]:
    state = {}
    for index, dtypes in meta["slots"].items():
        state[int(index)] = {
            key: tensors[f"optimizer/{index}/{key}"].to(getattr(torch, dtype_name))
            for key, dtype_name in dtypes.items()
        }
    groups = []
    for group in meta["param_groups"]:
        group = dict(group)
        if "betas" in group:
            group["betas"] = tuple(group["betas"])
        groups.append(group)
    return {"state": state, "param_groups": groups}


def save_checkpoint(state: CityChargeNet, path: PathLike, optimizer_state: Optional[Dict[str, Any]] = None,
                    **extra: Any) -> Path:
    """Serialize model parameters (and optionally optimizer state) atomically

    Args:
        state: Model to save
        path: Target file
        optimizer_state: torch optimizer state_dict for resuming
        **extra: JSON-serializable header entries (seed lineage, train config, epoch, history)

    Returns:
        Path written
    """
    named = [(name, p) for name, p in state.state_dict().items()]
    opt_meta = None
    if optimizer_state is not None:
        opt_meta, opt_blobs = _optimizer_blobs(optimizer_state)
        named.extend(opt_blobs)

    index, chunks, offset = [], [], 0
    for name, tensor in named:
        blob = _tensor_bytes(tensor)
        index.append({"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    payload = b"".join(chunks)

    header = {
        "format_version": FORMAT_VERSION,
        "model_config": state.config.model_dump(mode="json"),
        "feature_order": list(FEATURE_ORDER),
        "features": list(state.config.features),
        "tensors": index,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "optimizer": opt_meta,
    }
    header.update(extra)
    header_bytes = json.dumps(header, sort_keys=True, allow_nan=False).encode("utf-8")
    data = MAGIC + _LENGTH.pack(len(header_bytes)) + header_bytes + payload
    path = BundleStore.atomic_write_bytes(path, data)
    logger.info(f"Checkpoint written to {path} ({len(data)} bytes)")
    return path


def _parse(path: Path) -> Tuple[Dict[str, Any], Dict[str, torch.Tensor]]:
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    prefix = len(MAGIC) + _LENGTH.size
    if len(data) < prefix or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (header_len,) = _LENGTH.unpack_from(data, len(MAGIC))
    if len(data) < prefix + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[prefix:prefix + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from e
    if not isinstance(header, dict):
        raise CheckpointError(f"{path}: header is not a JSON object")

    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})")

    payload = data[prefix + header_len:]
    try:
        entries = [
            (entry["name"], int(entry["offset"]), int(entry["nbytes"]), tuple(entry["shape"]))
            for entry in header["tensors"]
        ]
        digest = header["payload_sha256"]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: header lacks a valid tensor table ({e!r})") from e

    expected = sum(nbytes for _, _, nbytes, _ in entries)
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload has {len(payload)} bytes, header declares {expected}")
    if hashlib.sha256(payload).hexdigest() != digest:
        raise CheckpointError(f"{path}: payload checksum mismatch")

    tensors = {}
    for name, offset, nbytes, shape in entries:
        values = np.frombuffer(payload, dtype=_VALUE_DTYPE, count=nbytes // 8, offset=offset)
        tensors[name] = torch.from_numpy(values.astype(np.float64).reshape(shape))
    return header, tensors


def read_checkpoint(path: PathLike, config: Optional[ModelConfig] = None) -> Checkpoint:
    """Load a checkpoint in full

    Args:
        path: Checkpoint file
        config: Architecture to load into; defaults to the config in the header

    Returns:
        Checkpoint with the model in eval mode
    """
    path = Path(path)
    header, tensors = _parse(path)
    if config is None:
        try:
            config = ModelConfig(**header["model_config"])
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"{path}: invalid model config in header ({e})") from e
    if list(header.get("feature_order", [])) != list(FEATURE_ORDER):
        raise CheckpointError(f"{path}: feature order {header.get('feature_order')} is not {list(FEATURE_ORDER)}")

    params = {name: t for name, t in tensors.items() if not name.startswith("optimizer/")}
    assert_shapes(config, {name: tuple(t.shape) for name, t in params.items()})

    model = CityChargeNet(config)
    model.load_state_dict(params, strict=True)
    model.eval()

    optimizer_state = None
    if header.get("optimizer"):
        optimizer_state = _restore_optimizer(header["optimizer"], tensors)
    known = {"format_version", "model_config", "feature_order", "features", "tensors", "payload_sha256", "optimizer"}
    extra = {k: v for k, v in header.items() if k not in known}
    return Checkpoint(model, header, optimizer_state, extra)


def load_checkpoint(path: PathLike, config: Optional[ModelConfig] = None) -> CityChargeNet:
    return read_checkpoint(path, config).model
