"""Versioned, self-describing checkpoint files.

Layout (all integers little-endian)::

    8 bytes   magic  b"SLFDCKPT"
    u32       format version
    u64       header length H
    H bytes   UTF-8 JSON header
    ...       payload: float64 little-endian arrays, concatenated

The header records the method config, learner and hypernetwork spec hashes,
and for every array its name, shape and element offset into the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from stablelfd.dynamics import ContractError

MAGIC = b"SLFDCKPT"
VERSION = 1


class CheckpointError(ContractError):
    pass


def spec_hash(obj) -> str:
    """Stable hash of a JSON-able spec description."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def model_description(model) -> dict:
    if model.kind == "NODE":
        return {"kind": "NODE", "widths": list(model.spec.layer_widths), "activation": model.spec.activation,
                "time_input": model.time_input, "cond_dim": model.cond_dim}
    return {"kind": "sNODE", "f_widths": list(model.f_spec.layer_widths), "v_widths": list(model.v_spec.layer_widths),
            "alpha": model.alpha, "grad_floor": model.grad_floor, "lyap_eps": model.lyap_eps,
            "relu_smooth": model.relu_smooth, "time_input": model.time_input, "cond_dim": model.cond_dim}


def write_checkpoint(path, header: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        blobs.append(a.tobytes())
    header = dict(header, arrays=entries, payload_count=offset)
    raw = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"{path}: checkpoint not found")
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", data, 12)
    start = 20 + hlen
    try:
        header = json.loads(data[20:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    payload = np.frombuffer(data, dtype="<f8", offset=start)
    if payload.size != header["payload_count"]:
        raise CheckpointError(f"{path}: payload has {payload.size} values, header says {header['payload_count']}")
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = payload[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    return header, arrays


def save_learner(path, learner, cfg, dim: int, seed: int, task_index: int, extra: dict | None = None) -> Path:
    from stablelfd import hypernet as hn

    header = {
        "format": "stablelfd-checkpoint",
        "method_config": cfg.to_dict(),
        "dim": dim,
        "seed": seed,
        "task_index": task_index,
        "model": model_description(learner.model),
        "model_hash": spec_hash(model_description(learner.model)),
        "n_params": learner.model.n_params,
    }
    if hasattr(learner, "spec"):
        header["hypernet"] = hn.spec_dict(learner.spec)
        header["hypernet_hash"] = spec_hash(hn.spec_dict(learner.spec))
    if extra:
        header["extra"] = extra
    return write_checkpoint(path, header, learner.arrays())


def load_learner(path):
    """Rebuild the learner saved by :func:`save_learner`; returns ``(learner, header)``."""
    from stablelfd import hypernet as hn
    from stablelfd.continual import MethodConfig, make_learner

    header, arrays = read_checkpoint(path)
    try:
        cfg = MethodConfig(**header["method_config"])
        learner = make_learner(cfg, header["dim"], header["seed"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: incomplete header: {exc}") from None
    if spec_hash(model_description(learner.model)) != header["model_hash"]:
        raise CheckpointError(f"{path}: learner spec hash mismatch")
    if "hypernet_hash" in header and spec_hash(hn.spec_dict(learner.spec)) != header["hypernet_hash"]:
        raise CheckpointError(f"{path}: hypernetwork spec hash mismatch")
    learner.load_arrays(arrays)
    return learner, header
