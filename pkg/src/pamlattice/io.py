"""Binary file formats: PLT1 tensors, binary PGM/PPM images, benchmark CSV.

PLT1 layout (all little-endian)::

    offset 0   4 bytes   magic b"PLT1"
    offset 4   uint32    rank
    offset 8   uint64 x rank   dims
    ...        float64 x prod(dims)   row-major payload
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"PLT1"
_MAX_RANK = 64
_MAX_ELEMENTS = 2**53

BENCH_FIELDS = ("n", "d", "channels", "method", "seconds", "rel_error")


class FormatError(ValueError):
    """Malformed input file. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


# ---------------------------------------------------------------------------
# tensors


def encode_tensor(array) -> bytes:
    a = np.asarray(array, dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
    header = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + a.tobytes(order="C")


def decode_tensor(buf: bytes) -> np.ndarray:
    """Parse a PLT1 byte string into a float64 array.

    Never reads past the declared payload; trailing bytes are rejected.
    """
    buf = memoryview(buf)
    if len(buf) < 4:
        raise FormatError("truncated magic", len(buf))
    if bytes(buf[:4]) != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}", 0)
    if len(buf) < 8:
        raise FormatError("truncated rank", len(buf))
    (rank,) = struct.unpack_from("<I", buf, 4)
    if rank > _MAX_RANK:
        raise FormatError(f"rank {rank} exceeds limit {_MAX_RANK}", 4)
    dims_end = 8 + 8 * rank
    if len(buf) < dims_end:
        raise FormatError("truncated dims", len(buf))
    dims = struct.unpack_from(f"<{rank}Q", buf, 8)
    count = 1
    for i, n in enumerate(dims):
        count *= n
        if count > _MAX_ELEMENTS:
            raise FormatError("dims overflow", 8 + 8 * i)
    end = dims_end + 8 * count
    if len(buf) < end:
        # offset of the first missing payload value
        missing = dims_end + 8 * ((len(buf) - dims_end) // 8)
        raise FormatError(
            f"truncated payload: expected {count} values, found {(len(buf) - dims_end) // 8}",
            missing,
        )
    if len(buf) > end:
        raise FormatError("trailing bytes after payload", end)
    data = np.frombuffer(buf[dims_end:end], dtype="<f8").astype(np.float64)
    return data.reshape(dims)


def write_tensor(array, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array))


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


# ---------------------------------------------------------------------------
# images


@dataclass
class Image:
    """Gray (``channels == 1``) or RGB (``channels == 3``) raster.

    ``samples`` has shape ``(height, width)`` or ``(height, width, 3)`` and an
    unsigned integer dtype; ``maxval`` is the declared PNM maximum.
    """

    samples: np.ndarray
    maxval: int = 255

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim not in (2, 3) or (s.ndim == 3 and s.shape[2] != 3):
            raise ValueError(f"image samples must be HxW or HxWx3, got {s.shape}")
        if not 0 < self.maxval <= 65535:
            raise ValueError(f"maxval must be in [1, 65535], got {self.maxval}")
        if s.size and (s.min() < 0 or s.max() > self.maxval):
            raise ValueError("sample values outside [0, maxval]")
        self.samples = s.astype(np.uint8 if self.maxval < 256 else np.uint16)

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 2 else 3


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos : pos + 1]
        if ch == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of header", pos)
    return buf[start:pos], pos


def decode_image(buf: bytes) -> Image:
    if buf[:2] not in (b"P5", b"P6"):
        raise FormatError(f"unsupported magic {buf[:2]!r}; need P5 or P6", 0)
    channels = 1 if buf[:2] == b"P5" else 3
    pos = 2
    fields = []
    for _ in range(3):
        start = pos
        tok, pos = _next_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"non-numeric header field {tok!r}", start)
        fields.append(int(tok))
    width, height, maxval = fields
    if not 0 < maxval <= 65535:
        raise FormatError(f"maxval {maxval} out of range [1, 65535]", pos)
    if width <= 0 or height <= 0:
        raise FormatError("image dimensions must be positive", pos)
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after header", pos)
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = width * height * channels * dtype.itemsize
    if len(buf) - pos < nbytes:
        raise FormatError("truncated raster", len(buf))
    data = np.frombuffer(buf, dtype=dtype, count=width * height * channels, offset=pos)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return Image(data.reshape(shape).copy(), maxval)


def encode_image(img: Image) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n{img.maxval}\n".encode("ascii")
    dtype = ">u2" if img.maxval > 255 else "u1"
    return header + np.ascontiguousarray(img.samples, dtype=dtype).tobytes()


def read_image(path: str | os.PathLike) -> Image:
    with open(path, "rb") as fh:
        return decode_image(fh.read())


def write_image(img: Image, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_image(img))


# ---------------------------------------------------------------------------
# benchmark CSV


def format_float(x: float) -> str:
    return f"{x:.9g}"


def bench_csv(rows: Iterable[dict]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(BENCH_FIELDS)
    for r in rows:
        w.writerow(
            [
                int(r["n"]),
                int(r["d"]),
                int(r["channels"]),
                r["method"],
                format_float(r["seconds"]),
                format_float(r["rel_error"]) if r.get("rel_error") is not None else "nan",
            ]
        )
    return out.getvalue()


def write_bench_csv(rows: Sequence[dict], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(bench_csv(rows))


def read_bench_csv(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != BENCH_FIELDS:
            raise FormatError(f"unexpected CSV header {reader.fieldnames}", 0)
        return [
            {
                "n": int(r["n"]),
                "d": int(r["d"]),
                "channels": int(r["channels"]),
                "method": r["method"],
                "seconds": float(r["seconds"]),
                "rel_error": float(r["rel_error"]),
            }
            for r in reader
        ]


# ---------------------------------------------------------------------------
# generic CSV records and checkpoints


def write_csv(rows: Sequence[dict], fields: Sequence[str], path: str | os.PathLike) -> None:
    """Write dict rows; floats use 9 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([format_float(r[k]) if isinstance(r[k], float) else r[k] for k in fields])


def read_csv(path: str | os.PathLike, fields: Sequence[str] | None = None) -> list[dict]:
    """Read rows back; numeric-looking cells become int or float."""

    def conv(s):
        for t in (int, float):
            try:
                return t(s)
            except ValueError:
                pass
        return s

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if fields is not None and tuple(reader.fieldnames or ()) != tuple(fields):
            raise FormatError(f"unexpected CSV header {reader.fieldnames}", 0)
        return [{k: conv(v) for k, v in r.items()} for r in reader]


MANIFEST = "manifest.json"


def save_checkpoint(directory: str | os.PathLike, tensors: dict, roles: dict, config: dict | None = None) -> None:
    """One PLT1 file per tensor plus a JSON manifest naming each tensor's role."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for name, arr in tensors.items():
        fname = f"{name}.plt"
        write_tensor(arr, os.path.join(directory, fname))
        entries.append({"name": name, "file": fname, "role": roles.get(name, ""),
                        "shape": list(np.shape(arr))})
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        json.dump({"format": "PLT1", "tensors": entries, "config": config or {}}, fh, indent=2, sort_keys=True)


def load_checkpoint(directory: str | os.PathLike) -> tuple[dict, dict]:
    with open(os.path.join(directory, MANIFEST)) as fh:
        manifest = json.load(fh)
    tensors = {e["name"]: read_tensor(os.path.join(directory, e["file"])) for e in manifest["tensors"]}
    return tensors, manifest
