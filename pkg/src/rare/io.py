"""On-disk formats.

Arrays (images, k-space data) are stored as a text header ``<stem>.hdr`` and
a raw payload ``<stem>.raw`` of little-endian interleaved real/imaginary
values in row-major order.  Network weights are a single file: an ASCII
header terminated by ``END`` followed by little-endian float32 kernels and
biases in layer order.
"""

import json
import os
from pathlib import Path

import numpy as np

from .network import Layer, NetWeights

__all__ = [
    "write_array",
    "read_array",
    "write_image",
    "read_image",
    "write_weights",
    "read_weights",
    "write_manifest",
    "read_manifest",
]

FORMAT_VERSION = 1
_DTYPES = {"complex64": "<c8", "complex128": "<c16"}


def _stem(path):
    path = str(path)
    for ext in (".hdr", ".raw"):
        if path.endswith(ext):
            return path[: -len(ext)]
    return path


def write_array(path, array, axes=None, dtype="complex128", meta=None):
    """Write ``array`` as ``<path>.hdr`` + ``<path>.raw``; returns the stem."""
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")
    array = np.asarray(array)
    stem = _stem(path)
    axes = list(axes) if axes is not None else [f"ax{i}" for i in range(array.ndim)]
    if len(axes) != array.ndim:
        raise ValueError("need one axis name per dimension")
    Path(stem).parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "format: rare-array",
        f"version: {FORMAT_VERSION}",
        "dims: " + " ".join(str(d) for d in array.shape),
        "axes: " + " ".join(axes),
        f"dtype: {dtype}",
        "endianness: little",
    ]
    for key, value in sorted((meta or {}).items()):
        lines.append(f"meta.{key}: {value}")
    Path(stem + ".hdr").write_text("\n".join(lines) + "\n")
    np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tofile(stem + ".raw")
    return stem


def read_header(path):
    header = {}
    for line in Path(_stem(path) + ".hdr").read_text().splitlines():
        if line.strip():
            key, _, value = line.partition(":")
            header[key.strip()] = value.strip()
    if header.get("format") != "rare-array":
        raise ValueError(f"{path}: not a rare-array header")
    if int(header.get("version", -1)) != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header.get('version')}")
    if header.get("endianness") != "little":
        raise ValueError(f"{path}: only little-endian payloads are supported")
    return header


def read_array(path):
    """Read an array written by :func:`write_array`; returns ``(array, header)``."""
    stem = _stem(path)
    header = read_header(stem)
    dims = tuple(int(d) for d in header["dims"].split()) if header["dims"] else ()
    dtype = _DTYPES.get(header["dtype"])
    if dtype is None:
        raise ValueError(f"{path}: unsupported dtype {header['dtype']}")
    data = np.fromfile(stem + ".raw", dtype=dtype)
    if data.size != int(np.prod(dims)):
        raise ValueError(f"{path}: payload has {data.size} values, header says {dims}")
    return data.reshape(dims).astype(np.complex128), header


def write_image(path, image, meta=None):
    axes = ["phase", "x", "y"] if np.ndim(image) == 3 else None
    return write_array(path, image, axes=axes, meta=meta)


def read_image(path):
    return read_array(path)[0]


def write_weights(path, weights):
    """Serialise :class:`NetWeights`; payload is float32."""
    lines = ["rare-netweights 1", f"layers {len(weights.layers)}"]
    for layer in weights.layers:
        shape = " ".join(str(d) for d in layer.kernel.shape)
        lines.append(f"layer {shape} {layer.activation}")
    lines.append("END")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for layer in weights.layers:
            fh.write(np.ascontiguousarray(layer.kernel, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    return str(path)


def read_weights(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    marker = b"\nEND\n"
    pos = raw.find(marker)
    if pos < 0:
        raise ValueError(f"{path}: missing END marker")
    header = raw[:pos].decode("ascii").splitlines()
    if header[0] != "rare-netweights 1":
        raise ValueError(f"{path}: not a weights file")
    n_layers = int(header[1].split()[1])
    payload = np.frombuffer(raw[pos + len(marker):], dtype="<f4")
    layers, offset = [], 0
    for line in header[2:2 + n_layers]:
        parts = line.split()
        shape = tuple(int(v) for v in parts[1:6])
        act = parts[6]
        size = int(np.prod(shape))
        kernel = payload[offset:offset + size].reshape(shape).astype(np.float64)
        offset += size
        bias = payload[offset:offset + shape[0]].astype(np.float64)
        offset += shape[0]
        layers.append(Layer(kernel, bias, act))
    if offset != payload.size:
        raise ValueError(f"{path}: payload size does not match header")
    return NetWeights(layers)


def write_manifest(path, entries, **extra):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    doc = {"version": FORMAT_VERSION, **extra, "entries": entries}
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return str(path)


def read_manifest(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported manifest version")
    return doc
