"""Binary checkpoint container for model parameters.

Layout: magic ``BARC``, one version byte, a config block (u32 line count,
then length-prefixed UTF-8 ``key=value`` lines), then named tensors
(length-prefixed UTF-8 name, u32 rank, u32 dims, raw 32-bit LE floats).
Round-trips must be bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np
import torch

from .errors import DomainError, ShapeError
from .model import Generator, ModelConfig

CKPT_MAGIC = b"BARC"
CKPT_VERSION = 1


def _write_str(f, s: str):
    raw = s.encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)


def _read_str(buf, off):
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    return buf[off : off + n].decode("utf-8"), off + n


def save_checkpoint(path, config: dict, tensors: dict) -> None:
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(bytes([CKPT_VERSION]))
        f.write(struct.pack("<I", len(config)))
        for key, value in config.items():
            _write_str(f, f"{key}={value}")
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f4", order="C")  # rank-preserving
            _write_str(f, name)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != CKPT_MAGIC:
        raise DomainError(f"bad magic {buf[:4]!r}, expected {CKPT_MAGIC!r}")
    if buf[4] != CKPT_VERSION:
        raise DomainError(f"unsupported checkpoint version {buf[4]}")
    off = 5
    (n_lines,) = struct.unpack_from("<I", buf, off)
    off += 4
    config = {}
    for _ in range(n_lines):
        line, off = _read_str(buf, off)
        key, _, value = line.partition("=")
        config[key] = value
    (n_tensors,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors = {}
    for _ in range(n_tensors):
        name, off = _read_str(buf, off)
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
        off += 4 * count
        tensors[name] = arr.reshape(dims).copy()
    if off != len(buf):
        raise ShapeError(f"{len(buf) - off} trailing bytes in checkpoint")
    return config, tensors


def save_model(model: Generator, path) -> None:
    config = {k: str(v) for k, v in model.cfg.to_dict().items()}
    tensors = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in model.state_dict().items()
    }
    save_checkpoint(path, config, tensors)


def load_model(path) -> Generator:
    config, tensors = load_checkpoint(path)
    model = Generator(ModelConfig.from_dict(config))
    state = {name: torch.from_numpy(arr) for name, arr in tensors.items()}
    model.load_state_dict(state)
    return model
