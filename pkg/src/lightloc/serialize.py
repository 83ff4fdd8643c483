"""Versioned little-endian binary containers for fitted models.

Layout of a bundle: 4-byte magic, u16 version, u32 header length, UTF-8 JSON
header (metadata plus array names and shapes), then every array as f64 LE in
header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import MissingArtifact, VersionMismatch


def write_bundle(path, magic: bytes, version: int, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    header = dict(meta)
    header["arrays"] = [[name, list(np.shape(a))] for name, a in arrays]
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<HI", version, len(hb)))
        fh.write(hb)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_bundle(path, magic: bytes, version: int) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(str(path))
    data = path.read_bytes()
    if data[:4] != magic:
        raise VersionMismatch(f"{path}: bad magic {data[:4]!r}, expected {magic!r}")
    ver, hlen = struct.unpack_from("<HI", data, 4)
    if ver != version:
        raise VersionMismatch(f"{path}: version {ver}, expected {version}")
    off = 10
    header = json.loads(data[off:off + hlen])
    off += hlen
    arrays = {}
    for name, shape in header.pop("arrays"):
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    return header, arrays


def mlp_arrays(prefix: str, mlp) -> tuple[dict, list]:
    meta = {f"{prefix}.activations": [ly.activation for ly in mlp.layers],
            f"{prefix}.skips": [list(s) for s in mlp.skips]}
    arrays = []
    for i, ly in enumerate(mlp.layers):
        arrays += [(f"{prefix}.{i}.w", ly.weight), (f"{prefix}.{i}.b", ly.bias)]
    return meta, arrays


def mlp_from_arrays(prefix: str, meta: dict, arrays: dict):
    from .mlp import Layer, Mlp

    acts = meta[f"{prefix}.activations"]
    layers = [Layer(arrays[f"{prefix}.{i}.w"], arrays[f"{prefix}.{i}.b"], a) for i, a in enumerate(acts)]
    return Mlp(layers, [tuple(s) for s in meta[f"{prefix}.skips"]])
