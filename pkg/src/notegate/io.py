"""File formats: NGMX matrices, note CSVs, F0 CSVs, WAV audio.

NGMX layout (all little-endian)::

    b"NGMX" | u16 version=1 | u8 dtype (0=float32, 1=uint8) | u8 ndim
    | ndim x u32 dims | row-major payload
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .core import NoteEvent, NoteTrack

NGMX_MAGIC = b"NGMX"
NGMX_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODES = {np.dtype("<f4"): 0, np.dtype("u1"): 1}


class FormatError(ValueError):
    """A file does not follow its declared format."""


def ngmx_dumps(array) -> bytes:
    a = np.asarray(array)
    if a.dtype == np.bool_ or a.dtype == np.uint8:
        a = a.astype("u1")
    else:
        a = a.astype("<f4")
    code = _CODES[a.dtype]
    header = NGMX_MAGIC + struct.pack("<HBB", NGMX_VERSION, code, a.ndim)
    header += struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a).tobytes()


def ngmx_loads(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != NGMX_MAGIC:
        raise FormatError("not an NGMX file (bad magic)")
    version, code, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != NGMX_VERSION:
        raise FormatError(f"unsupported NGMX version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown NGMX dtype code {code}")
    off = 8
    if len(buf) < off + 4 * ndim:
        raise FormatError("truncated NGMX header")
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    dtype = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - off != count * dtype.itemsize:
        raise FormatError(f"payload size {len(buf) - off} does not match dims {dims}")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(dims).copy()


def save_ngmx(path, array) -> None:
    Path(path).write_bytes(ngmx_dumps(array))


def load_ngmx(path) -> np.ndarray:
    return ngmx_loads(Path(path).read_bytes())


def read_notes_csv(path, track_id: str | None = None) -> NoteTrack:
    """Read a ``start_sec,end_sec,freq_hz`` note CSV."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"start_sec", "end_sec", "freq_hz"} - set(reader.fieldnames or ())
        if missing:
            raise FormatError(f"{path}: missing columns {sorted(missing)}")
        try:
            notes = [NoteEvent(float(row["start_sec"]), float(row["end_sec"]), float(row["freq_hz"]))
                     for row in reader]
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    return NoteTrack(track_id if track_id is not None else path.stem.split(".")[0], tuple(notes))


def write_notes_csv(path, notes) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_sec", "end_sec", "freq_hz"])
        for n in notes:
            w.writerow([repr(float(n.start_sec)), repr(float(n.end_sec)), repr(float(n.freq_hz))])


def read_f0_csv(path):
    """Read a ``time_sec,f0_hz,voicing`` CSV into three float arrays."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 3:
        raise FormatError(f"{path}: expected 3 columns, got {data.shape[1]}")
    return data[:, 0], data[:, 1], data[:, 2]


def write_f0_csv(path, times, f0, voicing) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time_sec,f0_hz,voicing\n")
        for t, f, v in zip(times, f0, voicing):
            fh.write(f"{float(t)!r},{float(f)!r},{float(v)!r}\n")


def read_wav(path):
    """Return ``(samples in [-1, 1] as float64, sample_rate)`` for a mono WAV."""
    sr, data = wavfile.read(path)
    if data.ndim != 1:
        raise FormatError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype}")
    return samples, int(sr)


def write_wav(path, samples, sample_rate: int) -> None:
    wavfile.write(path, sample_rate, np.asarray(samples, dtype=np.float32))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))
