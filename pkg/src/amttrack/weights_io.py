"""NTW tensor container.

Layout: the 8-byte magic ``AMTW0001``, a little-endian u64 header length, a
UTF-8 JSON header, then little-endian float32 payloads each starting on a
64-byte boundary. The header maps tensor names to
``{"offset": <absolute byte offset>, "shape": [...], "dtype": "f32"}`` and
carries a ``__metadata__`` entry with the SHA-256 of the payload region.
"""

import hashlib
import json
from pathlib import Path
import struct

import numpy as np

from .exceptions import FormatError

MAGIC = b"AMTW0001"
ALIGN = 64
META_KEY = "__metadata__"


def _align(n):
    return (n + ALIGN - 1) // ALIGN * ALIGN


def encode_ntw(tensors):
    """Serialize ``{name: array}`` to NTW bytes."""
    names = sorted(tensors)
    arrays = {n: np.ascontiguousarray(tensors[n], dtype="<f4") for n in names}

    # header size depends on offsets, which depend on header size: iterate to a fixed point
    data_start = _align(len(MAGIC) + 8)
    while True:
        header, offset = {}, data_start
        for n in names:
            header[n] = {"offset": offset, "shape": list(arrays[n].shape), "dtype": "f32"}
            offset = _align(offset + arrays[n].nbytes)
        payload = bytearray(offset - data_start)
        for n in names:
            start = header[n]["offset"] - data_start
            payload[start : start + arrays[n].nbytes] = arrays[n].tobytes()
        header[META_KEY] = {"sha256": hashlib.sha256(payload).hexdigest(), "payload_start": data_start}
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        needed = _align(len(MAGIC) + 8 + len(blob))
        if needed == data_start:
            break
        data_start = needed
    head = MAGIC + struct.pack("<Q", len(blob)) + blob
    return head + b"\0" * (data_start - len(head)) + bytes(payload)


def decode_ntw(data):
    """Parse NTW bytes into ``{name: float64 array}``.

    Raises:
        FormatError: on any structural problem, checksum mismatch or
            non-finite value. Nothing is returned on failure.
    """
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise FormatError("not an NTW weights file (bad magic)")
    (hlen,) = struct.unpack("<Q", data[len(MAGIC) : len(MAGIC) + 8])
    hstart = len(MAGIC) + 8
    if hstart + hlen > len(data):
        raise FormatError("truncated NTW header")
    try:
        header = json.loads(data[hstart : hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt NTW header: {exc}") from None
    if not isinstance(header, dict) or not isinstance(header.get(META_KEY), dict):
        raise FormatError("NTW header lacks metadata")
    meta = header.pop(META_KEY)
    data_start = meta.get("payload_start")
    if data_start != _align(hstart + hlen) or data_start > len(data):
        raise FormatError("NTW payload start is inconsistent with the header")
    if hashlib.sha256(data[data_start:]).hexdigest() != meta.get("sha256"):
        raise FormatError("NTW payload checksum mismatch")

    out, spans = {}, []
    for name, entry in header.items():
        try:
            offset = int(entry["offset"])
            shape = tuple(int(s) for s in entry["shape"])
            dtype = entry["dtype"]
        except (KeyError, TypeError, ValueError):
            raise FormatError(f"malformed header entry for {name!r}") from None
        if dtype != "f32":
            raise FormatError(f"tensor {name!r} has unsupported dtype {dtype!r}")
        if offset % ALIGN or offset < data_start or any(s < 0 for s in shape):
            raise FormatError(f"tensor {name!r} has an invalid offset or shape")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise FormatError(f"tensor {name!r} runs past the end of the file")
        spans.append((offset, offset + nbytes, name))
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"tensor {name!r} contains non-finite values")
        out[name] = arr.astype(np.float64)
    spans.sort()
    for (_, end, a), (start, _, b) in zip(spans, spans[1:]):
        if start < end:
            raise FormatError(f"tensors {a!r} and {b!r} overlap")
    return out


def write_ntw(path, tensors):
    Path(path).write_bytes(encode_ntw(tensors))


def read_ntw(path):
    return decode_ntw(Path(path).read_bytes())
