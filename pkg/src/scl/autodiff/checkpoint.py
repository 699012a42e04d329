"""Binary checkpoint format for named parameter collections.

Layout: magic b"SCL1", a u32 length-prefixed UTF-8 header of key=value lines
(model configuration; may be empty), then one record per parameter until EOF:
u32 name length, UTF-8 name, u32 rank, u32 dims, raw little-endian float32
payload. All integers are little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .tensor import Parameter

MAGIC = b"SCL1"


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


def _encode_header(header: Mapping[str, str]) -> bytes:
    lines = [f"{k}={header[k]}" for k in sorted(header)]
    return "\n".join(lines).encode("utf-8")


def _decode_header(blob: bytes) -> dict[str, str]:
    if not blob:
        return {}
    out = {}
    for line in blob.decode("utf-8").split("\n"):
        key, _, value = line.partition("=")
        out[key] = value
    return out


def save_checkpoint(path: Union[str, Path],
                    params: Union[Sequence[Parameter], Mapping[str, np.ndarray]],
                    header: Mapping[str, str] | None = None) -> None:
    if isinstance(params, Mapping):
        items = list(params.items())
    else:
        items = [(p.name, p.tensor.data) for p in params]
    head = _encode_header(header or {})
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for name, arr in items:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path: Union[str, Path]) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Returns (header, {name: float32 array}) preserving on-disk order."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    pos = 4

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"{path}: truncated {what} at offset {pos}")
        piece = blob[pos:pos + n]
        pos += n
        return piece

    def take_u32(what: str) -> int:
        return struct.unpack("<I", take(4, what))[0]

    header = _decode_header(take(take_u32("header length"), "header"))
    arrays: dict[str, np.ndarray] = {}
    while pos < len(blob):
        name = take(take_u32("name length"), "name").decode("utf-8")
        rank = take_u32("rank")
        shape = tuple(take_u32("dim") for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = take(4 * count, f"payload of {name}")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return header, arrays
