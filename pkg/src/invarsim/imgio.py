"""Bit-exact image file I/O: PFM (HDR), binary PPM (LDR), Middlebury .flo.

PFM files are written little-endian (scale -1.0) with bottom-up row order
per the format convention.  PPM is the binary P6 variant; sample width
follows maxval (1 byte up to 255, else 2 bytes big-endian).  Flow files use
the Middlebury magic 202021.25 with interleaved (u, v) float32 pairs.
All writers round-trip exactly through the matching reader.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError

FLO_MAGIC = 202021.25


def write_pfm(path, data: np.ndarray) -> None:
    """Write a (H, W) or (H, W, 3) float array as Pf/PF."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        header = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
    else:
        raise ConfigError(f"PFM requires (H, W) or (H, W, 3), got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale marks little-endian
        f.write(arr[::-1].tobytes())  # bottom-up rows


def _read_token(f):
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise ConfigError("unexpected end of PFM/PPM header")
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic == b"PF":
            channels = 3
        elif magic == b"Pf":
            channels = 1
        else:
            raise ConfigError(f"not a PFM file: magic {magic!r}")
        w = int(_read_token(f))
        h = int(_read_token(f))
        scale = float(_read_token(f))
        dtype = "<f4" if scale < 0 else ">f4"
        raw = f.read(w * h * channels * 4)
        if len(raw) != w * h * channels * 4:
            raise ConfigError("truncated PFM payload")
    arr = np.frombuffer(raw, dtype=dtype).reshape(h, w, channels)[::-1]
    if channels == 1:
        arr = arr[:, :, 0]
    return np.ascontiguousarray(arr.astype(np.float32))


def write_ppm(path, data: np.ndarray, maxval: int | None = None) -> None:
    """Write an (H, W, 3) unsigned-int array as binary P6."""
    arr = np.asarray(data)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ConfigError(f"PPM requires (H, W, 3), got {arr.shape}")
    if maxval is None:
        maxval = 255 if arr.dtype == np.uint8 else int(arr.max(initial=1))
    if not 1 <= maxval <= 65535:
        raise ConfigError(f"PPM maxval out of range: {maxval}")
    if arr.max(initial=0) > maxval:
        raise ConfigError("PPM sample exceeds maxval")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n{maxval}\n".encode("ascii"))
        if maxval <= 255:
            f.write(arr.astype(np.uint8).tobytes())
        else:
            f.write(arr.astype(">u2").tobytes())


def read_ppm(path) -> tuple[np.ndarray, int]:
    """Read binary P6; returns (array, maxval), dtype uint8 or uint16."""
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic != b"P6":
            raise ConfigError(f"not a binary PPM: magic {magic!r}")
        w = int(_read_token(f))
        h = int(_read_token(f))
        maxval = int(_read_token(f))
        nbytes = w * h * 3 * (1 if maxval <= 255 else 2)
        raw = f.read(nbytes)
        if len(raw) != nbytes:
            raise ConfigError("truncated PPM payload")
    if maxval <= 255:
        arr = np.frombuffer(raw, dtype=np.uint8)
    else:
        arr = np.frombuffer(raw, dtype=">u2").astype(np.uint16)
    return arr.reshape(h, w, 3).copy(), maxval


def write_flo(path, flow: np.ndarray) -> None:
    """Write an (H, W, 2) flow field in Middlebury .flo format."""
    arr = np.asarray(flow, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ConfigError(f"flow must be (H, W, 2), got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(arr.astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = struct.unpack("<f", f.read(4))[0]
        if magic != FLO_MAGIC:
            raise ConfigError(f"not a .flo file: magic {magic!r}")
        w, h = struct.unpack("<ii", f.read(8))
        raw = f.read(w * h * 2 * 4)
        if len(raw) != w * h * 2 * 4:
            raise ConfigError("truncated .flo payload")
    return np.frombuffer(raw, dtype="<f4").reshape(h, w, 2).copy()
