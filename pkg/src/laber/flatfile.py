"""Flat binary files: one JSON header line followed by raw little-endian arrays.

The header lists every array as ``{"name", "dtype", "shape"}`` in the order
the payload stores them, so a reader needs nothing but the header.
"""

import json

import numpy as np

MAGIC = "laber-flat"


def write_flat(path, header, arrays):
    meta = dict(header)
    meta["magic"] = MAGIC
    meta["arrays"] = []
    payload = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        meta["arrays"].append({"name": name, "dtype": dtype.str, "shape": list(arr.shape)})
        payload.append(arr.astype(dtype, copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(json.dumps(meta, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for chunk in payload:
            fh.write(chunk)


def read_flat(path):
    """Return ``(header, arrays)`` as written by :func:`write_flat`."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("magic") != MAGIC:
            raise ValueError(f"{path} is not a {MAGIC} file")
        arrays = {}
        for spec in header.pop("arrays"):
            dtype = np.dtype(spec["dtype"])
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise ValueError(f"{path}: truncated payload for array {spec['name']!r}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    header.pop("magic")
    return header, arrays
