"""Checkpoint archive: named tensors + manifest + training state, one file.

Layout: 8-byte magic, u64 little-endian manifest length, canonical-JSON
manifest (tensor shapes/dtypes/offsets/checksums, training state, config
hash), then the raw little-endian payload in sorted tensor-name order.
Save -> load -> save is byte-identical; checksums validate on load.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointMismatchError

MAGIC = b"NATEXCK1"
FORMAT_VERSION = 1


@dataclass
class CheckpointArchive:
    tensors: dict            # name -> np.ndarray (little-endian dtypes)
    train_state: dict        # JSON-able record (step, schedules, ...)
    config_hash: str

    def save(self, path) -> None:
        path = Path(path)
        names = sorted(self.tensors)
        entries = {}
        offset = 0
        blobs = []
        for name in names:
            arr = np.ascontiguousarray(self.tensors[name])
            dt = arr.dtype.newbyteorder("<")
            arr = arr.astype(dt, copy=False)
            blob = arr.tobytes()
            entries[name] = {"dtype": dt.str, "shape": list(arr.shape),
                             "offset": offset, "nbytes": len(blob),
                             "crc32": zlib.crc32(blob)}
            offset += len(blob)
            blobs.append(blob)
        manifest = {"format": FORMAT_VERSION, "config_hash": self.config_hash,
                    "tensors": entries, "train_state": self.train_state}
        mbytes = json.dumps(manifest, sort_keys=True,
                            separators=(",", ":")).encode("utf-8")
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(len(mbytes).to_bytes(8, "little"))
            fh.write(mbytes)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)

    @staticmethod
    def load(path, expected_config_hash: str | None = None) -> "CheckpointArchive":
        path = Path(path)
        if not path.exists():
            raise CheckpointMismatchError(f"checkpoint not found: {path}")
        data = path.read_bytes()
        if data[:8] != MAGIC:
            raise CheckpointMismatchError(f"{path}: bad magic, not a checkpoint")
        mlen = int.from_bytes(data[8:16], "little")
        manifest = json.loads(data[16:16 + mlen].decode("utf-8"))
        if manifest.get("format") != FORMAT_VERSION:
            raise CheckpointMismatchError(f"{path}: unsupported checkpoint format")
        payload = data[16 + mlen:]
        tensors = {}
        for name, e in manifest["tensors"].items():
            blob = payload[e["offset"]:e["offset"] + e["nbytes"]]
            if zlib.crc32(blob) != e["crc32"]:
                raise CheckpointMismatchError(f"{path}: checksum failure for '{name}'")
            tensors[name] = np.frombuffer(blob, dtype=np.dtype(e["dtype"])) \
                .reshape(e["shape"]).copy()
        config_hash = manifest["config_hash"]
        if expected_config_hash is not None and config_hash != expected_config_hash:
            raise CheckpointMismatchError(
                f"{path}: config hash {config_hash} does not match expected "
                f"{expected_config_hash}")
        return CheckpointArchive(tensors=tensors,
                                 train_state=manifest["train_state"],
                                 config_hash=config_hash)


def module_to_tensors(module: torch.nn.Module, prefix: str) -> dict:
    """Flatten a module state dict into archive tensors under `prefix.`"""
    out = {}
    for name, tensor in module.state_dict().items():
        out[f"{prefix}.{name}"] = tensor.detach().cpu().numpy()
    return out


def tensors_to_module(module: torch.nn.Module, tensors: dict, prefix: str) -> None:
    state = {}
    plen = len(prefix) + 1
    for name, arr in tensors.items():
        if name.startswith(prefix + "."):
            state[name[plen:]] = torch.from_numpy(np.ascontiguousarray(arr))
    missing = set(module.state_dict()) - set(state)
    if missing:
        raise CheckpointMismatchError(
            f"checkpoint lacks parameters for '{prefix}': {sorted(missing)[:4]} ...")
    module.load_state_dict(state)


def optimizer_to_tensors(opt: torch.optim.Optimizer, prefix: str) -> tuple[dict, dict]:
    """Split an optimizer state dict into tensors and a JSON-able skeleton."""
    sd = opt.state_dict()
    tensors = {}
    state_meta = {}
    for pid, pstate in sd["state"].items():
        meta = {}
        for key, value in pstate.items():
            if isinstance(value, torch.Tensor):
                tensors[f"{prefix}.state.{pid}.{key}"] = value.detach().cpu().numpy()
                meta[key] = "__tensor__"
            else:
                meta[key] = value
        state_meta[str(pid)] = meta
    skeleton = {"param_groups": sd["param_groups"], "state_meta": state_meta}
    return tensors, skeleton


def tensors_to_optimizer(opt: torch.optim.Optimizer, tensors: dict,
                         skeleton: dict, prefix: str) -> None:
    state = {}
    for pid_str, meta in skeleton["state_meta"].items():
        pid = int(pid_str)
        pstate = {}
        for key, value in meta.items():
            if value == "__tensor__":
                arr = tensors[f"{prefix}.state.{pid}.{key}"]
                pstate[key] = torch.from_numpy(np.ascontiguousarray(arr))
            else:
                pstate[key] = value
        state[pid] = pstate
    opt.load_state_dict({"state": state, "param_groups": skeleton["param_groups"]})
