"""On-disk formats: checkpoint files, metrics streams and plot CSVs.

Checkpoint layout (all little-endian)::

    b"MOSC"                      magic
    u32 version                  currently 1
    u32 tensor count
    per tensor:
        u32 name length, UTF-8 name bytes
        u32 ndim, ndim x u32 dims
    float32 values               flat, in manifest order
"""

import csv
import json
import struct
import threading

import numpy as np

from .errors import CheckpointFormatError
from .params import ParamVector

MAGIC = b"MOSC"
VERSION = 1


def encode_checkpoint(params):
    parts = [MAGIC, struct.pack("<II", VERSION, len(params.manifest))]
    for name, shape in params.manifest:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{len(shape)}I", len(shape), *shape))
    parts.append(params.values.astype("<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(data):
    if data[:4] != MAGIC:
        raise CheckpointFormatError("bad magic bytes")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        pos = 12
        manifest = []
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            manifest.append((name, shape))
    except struct.error as exc:
        raise CheckpointFormatError(f"truncated header: {exc}") from None
    size = sum(int(np.prod(s)) for _, s in manifest)
    if len(data) - pos != 4 * size:
        raise CheckpointFormatError(
            f"expected {4 * size} payload bytes, found {len(data) - pos}")
    values = np.frombuffer(data, dtype="<f4", count=size, offset=pos).astype(np.float32)
    return ParamVector(tuple(manifest), values)


def save_checkpoint(path, params):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(params))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_record(record):
    """One metrics record as a canonical single-line JSON string."""
    return json.dumps(record, sort_keys=True, default=_jsonable, separators=(",", ":"))


class MetricsWriter:
    """Append-only JSON-lines writer; safe to share between threads."""

    def __init__(self, path=None):
        self.path = path
        self.lines = []
        self._lock = threading.Lock()
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def write(self, record):
        line = dumps_record(record)
        with self._lock:
            self.lines.append(line)
            if self._fh:
                self._fh.write(line + "\n")
                self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_plot_csv(path, records):
    """CSV of batch index, running AP and the synergy weights per batch."""
    k = max((len(r.get("weights") or []) for r in records), default=0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["batch", "running_ap", "batch_ap", "evicted"]
                        + [f"w{i}" for i in range(k)])
        for r in records:
            w = list(r.get("weights") or [])
            w += [""] * (k - len(w))
            evicted = r.get("evicted_id")
            writer.writerow([r["batch"], f"{r['running_ap']:.6f}", f"{r['batch_ap']:.6f}",
                             "" if evicted is None else evicted] + w)
