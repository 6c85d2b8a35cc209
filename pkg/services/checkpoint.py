"""
Checkpoint container.

Layout (all integers ASCII, newline terminated):

    SCONES-CHECKPOINT <version>
    <header length in bytes>
    <header: UTF-8 JSON with config, step, loss spec, metadata and a tensor index>
    <tensor blocks: little-endian float64, C order, in index order>

Each index entry holds the tensor name, its group ("params" or "optimizer"),
its shape and its byte offset from the start of the first block. Parameters
are always stored as 64-bit floats so save/load round-trips bit-exactly.
"""

import json
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from services.model import Checkpoint, ModelConfig
from utils.errors import DataError
from utils.logger import logger

MAGIC = "SCONES-CHECKPOINT"
VERSION = 1
BLOCK_DTYPE = np.dtype("<f8")


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    blocks: List[bytes] = []
    index = []
    offset = 0
    groups = [("params", ckpt.params), ("optimizer", ckpt.optimizer or {})]
    for group, tensors in groups:
        for name in sorted(tensors):
            values = tensors[name]
            if not np.all(np.isfinite(values)):
                raise DataError(f"refusing to save non-finite tensor '{name}'")
            data = np.ascontiguousarray(values, dtype=BLOCK_DTYPE).tobytes()
            index.append({"name": name, "group": group, "shape": list(values.shape), "offset": offset})
            blocks.append(data)
            offset += len(data)

    header = {
        "config": ckpt.config.model_dump(),
        "step": ckpt.step,
        "loss_spec": ckpt.loss_spec,
        "metadata": ckpt.metadata,
        "tensors": index,
    }
    header_bytes = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")

    with open(path, "wb") as f:
        f.write(f"{MAGIC} {VERSION}\n".encode("ascii"))
        f.write(f"{len(header_bytes)}\n".encode("ascii"))
        f.write(header_bytes)
        for data in blocks:
            f.write(data)
    logger.info(f"Saved checkpoint at step {ckpt.step} to {path}")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")

    with open(path, "rb") as f:
        first = f.readline().decode("ascii", errors="replace").split()
        if len(first) != 2 or first[0] != MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        if int(first[1]) != VERSION:
            raise DataError(f"unsupported checkpoint version {first[1]} (expected {VERSION})")
        try:
            header_length = int(f.readline())
            header = json.loads(f.read(header_length).decode("utf-8"))
        except ValueError as error:
            raise DataError(f"corrupt checkpoint header in {path}: {error}")
        payload = f.read()

    config = ModelConfig.model_validate(header["config"])
    groups: Dict[str, Dict[str, np.ndarray]] = {"params": {}, "optimizer": {}}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        end = start + count * BLOCK_DTYPE.itemsize
        if end > len(payload):
            raise DataError(f"checkpoint {path} is truncated at tensor '{entry['name']}'")
        values = np.frombuffer(payload[start:end], dtype=BLOCK_DTYPE).reshape(entry["shape"])
        dtype = config.dtype if entry["group"] == "params" else np.float64
        groups[entry["group"]][entry["name"]] = values.astype(dtype)

    return Checkpoint(
        config=config,
        params=groups["params"],
        step=int(header["step"]),
        optimizer=groups["optimizer"] or None,
        loss_spec=header.get("loss_spec"),
        metadata=header.get("metadata", {}),
    )
