"""Named-array checkpoints with a JSON header.

File layout: one line of JSON (format tag, network kind, hyperparameters,
training metadata and a tensor table) terminated by a newline, followed by
the raw little-endian bytes of every tensor in table order. Nothing in the
file depends on wall-clock time, so identical weights give identical bytes.
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import torch


logger = logging.getLogger(__name__)

FORMAT_TAG = "autocycle-vc-checkpoint/1"

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
}


def save_checkpoint(
    path: str | Path,
    kind: str,
    hparams: dict[str, Any],
    state_dict: Mapping[str, torch.Tensor],
    meta: Optional[dict[str, Any]] = None,
) -> str:
    """Write a checkpoint atomically.

    Args:
        path: Destination file
        kind: Network kind, e.g. "speaker_encoder" or "vc_model"
        hparams: Architecture hyperparameters needed to rebuild the network
        state_dict: Named parameter and buffer tensors
        meta: Training metadata (seed, epoch, iteration, ...)

    Returns:
        sha256 hex digest of the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    table = []
    payloads = []
    offset = 0
    for name, tensor in state_dict.items():
        tensor = tensor.detach().cpu().contiguous()
        if tensor.dtype not in _DTYPES:
            raise ValueError(f'Tensor "{name}" has unsupported dtype {tensor.dtype}')
        raw = tensor.numpy().astype(_DTYPES[tensor.dtype], copy=False).tobytes(order="C")
        table.append({
            "name": name,
            "dtype": _DTYPES[tensor.dtype],
            "shape": list(tensor.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        payloads.append(raw)
        offset += len(raw)

    header = {
        "format": FORMAT_TAG,
        "kind": kind,
        "hparams": hparams,
        "meta": meta or {},
        "tensors": table,
    }
    header_line = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"

    tmp_path = path.with_name(path.name + ".tmp")
    with open(tmp_path, "wb") as f:
        f.write(header_line.encode("utf-8"))
        for raw in payloads:
            f.write(raw)
    os.replace(tmp_path, path)

    digest = file_sha256(path)
    logger.debug(f"Saved {kind} checkpoint to {path} ({offset} bytes of tensors, sha256 {digest[:12]})")
    return digest


def load_checkpoint(path: str | Path, kind: Optional[str] = None) -> tuple[dict[str, Any], dict[str, torch.Tensor]]:
    """Read a checkpoint.

    Args:
        path: Checkpoint file
        kind: Expected network kind; checked when given

    Returns:
        Tuple of (header, state_dict)

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: If the file is not a checkpoint of the expected kind
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")

    data = path.read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise ValueError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(data[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"{path}: invalid checkpoint header: {e}")

    if not isinstance(header, dict) or header.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: not an {FORMAT_TAG} file")
    if kind is not None and header.get("kind") != kind:
        raise ValueError(f'{path}: expected a "{kind}" checkpoint, found "{header.get("kind")}"')

    body = data[newline + 1:]
    state_dict: dict[str, torch.Tensor] = {}
    for entry in header["tensors"]:
        end = entry["offset"] + entry["nbytes"]
        if end > len(body):
            raise ValueError(f'{path}: tensor "{entry["name"]}" extends past end of file')
        dtype = np.dtype(entry["dtype"])
        count = entry["nbytes"] // dtype.itemsize
        array = np.frombuffer(body, dtype=dtype, count=count, offset=entry["offset"])
        array = array.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
        state_dict[entry["name"]] = torch.from_numpy(array)

    return header, state_dict


def file_sha256(path: str | Path) -> str:
    """sha256 hex digest of a file's contents."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def state_dict_sha256(state_dict: Mapping[str, torch.Tensor]) -> str:
    """sha256 over names and raw bytes of a state dict, for in-memory comparisons."""
    digest = hashlib.sha256()
    for name, tensor in state_dict.items():
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
