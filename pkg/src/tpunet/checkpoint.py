"""Binary tensor checkpoint format.

Little-endian layout: magic ``TPUT``, u32 format version, u32 tensor
count, then per tensor a u32 name length, the UTF-8 name, u32 rank,
one u64 per dimension and the raw float64 payload in row-major order.
"""

import struct
from typing import Dict, Union

import numpy as np

from .tensor import Tensor

MAGIC = b"TPUT"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_tensors(path, tensors: Dict[str, Union[Tensor, np.ndarray]]):
    """Write named tensors in insertion order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name, t in tensors.items():
            arr = np.ascontiguousarray(t.data if isinstance(t, Tensor) else t, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def write_pgm(path, image: np.ndarray):
    """8-bit binary PGM (P5) from a [0, 1] grayscale array."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise CheckpointError(f"PGM export needs a 2D array, got shape {image.shape}")
    quantized = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = quantized.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantized.tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of write_pgm, returning float64 in [0, 1]."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"P5":
            raise CheckpointError(f"{path}: not a binary PGM")
        w, h = map(int, fh.readline().split())
        maxval = int(fh.readline())
        raw = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    return raw.reshape(h, w).astype(np.float64) / maxval


def load_tensors(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a tensor checkpoint")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            n = int(np.prod(dims)) if rank else 1
            payload = fh.read(8 * n)
            if len(payload) != 8 * n:
                raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
        return out
