"""Self-describing binary model container.

Layout: ASCII type tag line (e.g. TGNET1, OLS1, RF1), an 8-byte
little-endian JSON header length, the JSON header (meta dict plus ordered
tensor descriptors), then raw little-endian float64 tensor payloads in
descriptor order. Round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

KNOWN_TAGS = ("TGNET1", "OLS1", "KNN1", "RF1", "MLP1")


def write_container(path, tag: str, meta: dict, tensors: dict):
    if tag not in KNOWN_TAGS:
        raise ValueError(f"unknown container tag {tag}")
    names = list(tensors)
    header = {
        "meta": meta,
        "tensors": [{"name": n, "shape": list(np.asarray(tensors[n]).shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(tag.encode() + b"\n")
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def read_container(path):
    """Returns (tag, meta, {name: float64 array})."""
    with open(path, "rb") as f:
        tag = f.readline().strip().decode()
        if tag not in KNOWN_TAGS:
            raise ValueError(f"{path} is not a model container (tag {tag!r})")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        tensors = {}
        for desc in header["tensors"]:
            shape = tuple(desc["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(count * 8), dtype="<f8").astype(np.float64)
            tensors[desc["name"]] = data.reshape(shape)
    return tag, header["meta"], tensors
