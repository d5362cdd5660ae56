"""Checkpoint files: a JSON header followed by a float32 blob.

Layout::

    b"LDANCKPT"            8 bytes magic
    u32 little-endian      header length in bytes
    header                 UTF-8 JSON
    blob                   float32 little-endian arrays, header order

The header records format version, each network's layer specs and input
shape, the ``(name, shape)`` list describing the blob, and free-form
metadata (rng state, config echo).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import InvalidInputError
from .layers import LayerSpec
from .network import Network

MAGIC = b"LDANCKPT"
FORMAT_VERSION = 1


def save_checkpoint(path, networks: dict, extra_arrays: dict | None = None, meta: dict | None = None):
    """Write ``networks`` (name -> Network) plus optional named arrays."""
    entries = []
    chunks = []
    nets_header = {}
    for net_name, net in networks.items():
        nets_header[net_name] = {
            "specs": [s.to_dict() for s in net.specs],
            "input_shape": list(net.input_shape),
            "seed": net.seed,
        }
        for k, v in net.state_arrays().items():
            entries.append({"name": f"{net_name}/{k}", "shape": list(v.shape)})
            chunks.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    for k, v in (extra_arrays or {}).items():
        v = np.asarray(v)
        entries.append({"name": f"extra/{k}", "shape": list(v.shape)})
        chunks.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32",
        "networks": nets_header,
        "arrays": entries,
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        for c in chunks:
            f.write(c)


def read_checkpoint(path):
    """Return ``(header, arrays)`` where arrays maps entry name -> float32 array."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise InvalidInputError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode())
    if header.get("format_version") != FORMAT_VERSION:
        raise InvalidInputError(f"{path}: unsupported format version {header.get('format_version')}")
    off = 12 + hlen
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(e["shape"]).copy()
        off += 4 * n
    if off != len(data):
        raise InvalidInputError(f"{path}: trailing or missing bytes in blob")
    return header, arrays


def load_checkpoint(path, dtype=np.float32):
    """Rebuild every network in the file; returns ``(networks, extra, meta)``."""
    header, arrays = read_checkpoint(path)
    nets = {}
    for name, h in header["networks"].items():
        net = Network([LayerSpec.from_dict(s) for s in h["specs"]], h["input_shape"], dtype, h["seed"], name)
        prefix = f"{name}/"
        net.load_state_arrays({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
        nets[name] = net
    extra = {k[len("extra/"):]: v for k, v in arrays.items() if k.startswith("extra/")}
    return nets, extra, header["meta"]
