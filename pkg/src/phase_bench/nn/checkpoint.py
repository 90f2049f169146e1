"""Binary checkpoint container.

Layout (little-endian)::

    magic    8 bytes  b"PHBNCKPT"
    version  u32
    cfg_len  u32, then cfg_len bytes of JSON (network config + init record)
    count    u32, then per array:
             name_len u16, name (utf-8), ndim u8, shape (ndim x u32), float64 data
    sha256   32 bytes over everything above
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointVersionError,
    ConfigMismatchError,
)
from .model import NetworkConfig, PhENN

MAGIC = b"PHBNCKPT"
VERSION = 1


def save_checkpoint(net: PhENN, path) -> None:
    cfg = net.config.as_dict()
    meta = {"config": cfg, "init": {"scheme": "he-normal/lecun-head", "seed": cfg["seed"]}}
    body = bytearray(MAGIC)
    body += struct.pack("<I", VERSION)
    blob = json.dumps(meta, sort_keys=True).encode()
    body += struct.pack("<I", len(blob)) + blob
    params = net.parameters()
    body += struct.pack("<I", len(params))
    for name, arr in params:
        enc = name.encode()
        body += struct.pack("<H", len(enc)) + enc
        body += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_checkpoint(path, expected: NetworkConfig | None = None) -> PhENN:
    """Rebuild the network stored at ``path``.

    With ``expected``, a stored input size or architecture that differs raises
    :class:`ConfigMismatchError`.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(data) < 8 + 4 + 32:
        raise CheckpointChecksumError(f"{path}: file truncated")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: version {version}, expected {VERSION}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointChecksumError(f"{path}: checksum mismatch (corrupt or truncated)")
    pos = 12
    (cfg_len,) = struct.unpack_from("<I", body, pos)
    pos += 4
    meta = json.loads(body[pos : pos + cfg_len])
    pos += cfg_len
    config = NetworkConfig(**meta["config"])
    if expected is not None:
        arch = ("input_size", "n_down", "n_up", "n_res", "widths", "decoder_width", "kernel")
        diffs = [k for k in arch if getattr(expected, k) != getattr(config, k)]
        if diffs:
            raise ConfigMismatchError(f"{path}: stored config differs in {', '.join(diffs)}")
    net = PhENN(config)
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    state = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos : pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", body, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        state.append((name, arr.astype(config.np_dtype)))
    if pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after parameter block")
    net.set_state(state)
    return net
