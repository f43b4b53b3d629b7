"""File formats: PFM images, PES1 estimate stacks, 16-bit PGM, 8-bit PPM,
permutation CSV/displacement maps and JSON reports."""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .model import AuxPlanes
from .vertical import EstimateStack

STACK_MAGIC = b"PES1"
FLAG_ALPHA = 1
FLAG_BETA = 2
FLAG_RAGGED = 4
_MAX_DIM = 1 << 16


class FormatError(OSError):
    """Malformed or truncated file."""


def _finite_or_raise(a: np.ndarray, what: str, exc=FormatError):
    if not np.all(np.isfinite(a)):
        raise exc(f"{what} contains non-finite values")


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path, img: np.ndarray) -> None:
    """Little-endian PFM; rows are stored bottom to top."""
    a = np.asarray(img, dtype=np.float32)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim == 2:
        magic = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {a.shape}")
    _finite_or_raise(a, "image", ValueError)
    h, w = a.shape[:2]
    body = np.ascontiguousarray(a[::-1]).astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(magic + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n" + body)


def _read_tokens(data: bytes, n: int, pos: int):
    toks = []
    while len(toks) < n:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header")
        toks.append(data[start:pos])
    # exactly one whitespace byte separates the header from the payload
    return toks, pos + 1


def read_pfm(path) -> np.ndarray:
    """Read a PFM as float32 ``(H, W)`` or ``(H, W, 3)``; non-finite values are rejected."""
    data = Path(path).read_bytes()
    toks, pos = _read_tokens(data, 4, 0)
    magic = toks[0]
    if magic == b"PF":
        c = 3
    elif magic == b"Pf":
        c = 1
    else:
        raise FormatError(f"bad PFM magic {magic!r}")
    try:
        w, h = int(toks[1]), int(toks[2])
        scale = float(toks[3])
    except ValueError as e:
        raise FormatError(f"bad PFM header: {e}") from None
    if w <= 0 or h <= 0 or w > _MAX_DIM or h > _MAX_DIM or scale == 0:
        raise FormatError("bad PFM dimensions or scale")
    dt = "<f4" if scale < 0 else ">f4"
    n = w * h * c
    if len(data) - pos < 4 * n:
        raise FormatError("truncated PFM payload")
    a = np.frombuffer(data, dtype=dt, count=n, offset=pos).astype(np.float32)
    a = a.reshape((h, w, c) if c == 3 else (h, w))[::-1].copy()
    _finite_or_raise(a, str(path))
    return a


# ---------------------------------------------------------------------------
# PES1 stacks


def write_stack(path, stack: EstimateStack) -> None:
    """Header ``PES1`` + uint32 ``w, h, channels, M, flags`` (little-endian), then
    optional uint32 per-pixel counts, the float32 planes in ``(m, c, row, col)``
    order and finally the alpha and beta planes (``(c, row, col)`` each)."""
    v = stack.chw().astype("<f4")
    M, C, H, W = v.shape
    flags = 0
    aux = stack.aux
    if aux is not None:
        flags |= FLAG_ALPHA | FLAG_BETA
    if stack.counts is not None:
        flags |= FLAG_RAGGED
    _finite_or_raise(v, "stack", ValueError)
    with open(path, "wb") as f:
        f.write(STACK_MAGIC + struct.pack("<5I", W, H, C, M, flags))
        if stack.counts is not None:
            f.write(np.asarray(stack.counts, dtype="<u4").tobytes())
        f.write(v.tobytes())
        if aux is not None:
            for plane in (aux.alpha, aux.beta):
                p = np.asarray(plane, dtype=np.float64)
                p = p[None] if p.ndim == 2 else np.moveaxis(p, 2, 0)
                f.write(np.ascontiguousarray(p).astype("<f4").tobytes())


def read_stack(path) -> EstimateStack:
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:4] != STACK_MAGIC:
        raise FormatError("not a PES1 stack file")
    W, H, C, M, flags = struct.unpack_from("<5I", data, 4)
    if min(W, H, C, M) < 1 or W > _MAX_DIM or H > _MAX_DIM or C > 4096 or M > 1 << 20:
        raise FormatError("stack dimensions out of range")
    if flags & ~(FLAG_ALPHA | FLAG_BETA | FLAG_RAGGED):
        raise FormatError("unknown stack flags")
    naux = bool(flags & FLAG_ALPHA) + bool(flags & FLAG_BETA)
    expect = 24 + (4 * W * H if flags & FLAG_RAGGED else 0) + 4 * (M * C * H * W + naux * C * H * W)
    if len(data) != expect:
        raise FormatError(f"stack payload is {len(data)} bytes, expected {expect}")
    pos = 24
    counts = None
    if flags & FLAG_RAGGED:
        counts = np.frombuffer(data, "<u4", W * H, pos).reshape(H, W).astype(np.int64)
        pos += 4 * W * H
    v = np.frombuffer(data, "<f4", M * C * H * W, pos).reshape(M, C, H, W).astype(np.float64)
    pos += 4 * M * C * H * W
    _finite_or_raise(v, str(path))
    planes = {}
    for flag in (FLAG_ALPHA, FLAG_BETA):
        if flags & flag:
            planes[flag] = np.frombuffer(data, "<f4", C * H * W, pos).reshape(C, H, W).astype(np.float64)
            pos += 4 * C * H * W
    values = v[:, 0] if C == 1 else np.moveaxis(v, 1, 3)
    aux = None
    if planes:
        a = planes.get(FLAG_ALPHA, np.ones((C, H, W)))
        b = planes.get(FLAG_BETA, np.zeros((C, H, W)))
        if C == 1:
            aux = AuxPlanes(a[0], b[0])
        else:
            aux = AuxPlanes(np.moveaxis(a, 0, 2), np.moveaxis(b, 0, 2))
    try:
        return EstimateStack(values, counts, aux)
    except ValueError as e:
        raise FormatError(str(e)) from None


def stack_from_image(img: np.ndarray) -> EstimateStack:
    return EstimateStack(np.asarray(img, dtype=np.float64)[None])


def image_from_stack(stack: EstimateStack) -> np.ndarray:
    if stack.M != 1:
        raise ValueError("only single-estimate stacks convert to an image")
    return stack.values[0].copy()


# ---------------------------------------------------------------------------
# PGM / PPM


def write_pgm16_raw(path, values: np.ndarray) -> None:
    """Integer plane in ``[0, 65535]`` as a binary 16-bit PGM."""
    v = np.asarray(values)
    if v.ndim != 2:
        raise ValueError("PGM needs a 2D array")
    if v.min() < 0 or v.max() > 65535:
        raise ValueError("values do not fit 16 bits")
    h, w = v.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(v.astype(">u2").tobytes())


def write_pgm16(path, img: np.ndarray) -> None:
    """Values clamped to ``[0, 1]`` and quantized to 16 bits."""
    a = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    write_pgm16_raw(path, np.rint(a * 65535.0).astype(np.int64))


def write_ppm(path, img: np.ndarray) -> None:
    """8-bit binary PPM; grayscale input is replicated to RGB."""
    a = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if a.ndim == 2:
        a = np.repeat(a[:, :, None], 3, axis=2)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError("PPM needs a gray or RGB image")
    h, w = a.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.rint(a * 255.0).astype(np.uint8).tobytes())


def read_pnm(path) -> tuple[np.ndarray, int]:
    """Read a binary P5/P6 file; returns the raw integer array and maxval."""
    data = Path(path).read_bytes()
    toks, pos = _read_tokens(data, 4, 0)
    if toks[0] not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {toks[0]!r}")
    try:
        w, h, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    except ValueError as e:
        raise FormatError(f"bad PNM header: {e}") from None
    if w <= 0 or h <= 0 or not 0 < maxval <= 65535:
        raise FormatError("bad PNM header values")
    c = 3 if toks[0] == b"P6" else 1
    dt = ">u2" if maxval > 255 else "u1"
    n = w * h * c
    if len(data) - pos < n * np.dtype(dt).itemsize:
        raise FormatError("truncated PNM payload")
    a = np.frombuffer(data, dt, n, pos).astype(np.int64)
    return a.reshape((h, w, c) if c == 3 else (h, w)), maxval


def read_pgm16(path) -> np.ndarray:
    a, maxval = read_pnm(path)
    return a / float(maxval)


# ---------------------------------------------------------------------------
# masks, permutations, traces, reports


def write_mask(path, mask) -> None:
    write_pgm16_raw(path, mask.ranks)


def read_mask(path):
    from .masks import DitherMask

    a, _ = read_pnm(path)
    if a.ndim != 2:
        raise FormatError("mask must be a single-channel PGM")
    try:
        return DitherMask(a)
    except ValueError as e:
        raise FormatError(str(e)) from None


def write_permutation_csv(path, perm) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["index", "target"])
        for i, t in enumerate(perm.mapping):
            wr.writerow([i, int(t)])


def read_permutation_csv(path, shape):
    from .horizontal import Permutation

    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["index", "target"]:
        raise FormatError("missing permutation CSV header")
    try:
        pairs = sorted((int(a), int(b)) for a, b in rows[1:])
    except ValueError as e:
        raise FormatError(str(e)) from None
    if [p[0] for p in pairs] != list(range(len(pairs))):
        raise FormatError("permutation CSV indices are not 0..N-1")
    try:
        return Permutation(np.array([p[1] for p in pairs]), shape)
    except ValueError as e:
        raise FormatError(str(e)) from None


def write_displacement_pgm(path, perm) -> None:
    """Height-2H PGM: the dx plane on top of the dy plane, offset by 32768."""
    h, w = perm.shape
    o = np.arange(h * w)
    dy = (perm.mapping // w - o // w).reshape(h, w)
    dx = (perm.mapping % w - o % w).reshape(h, w)
    write_pgm16_raw(path, np.vstack([dx, dy]) + 32768)


def read_displacement_pgm(path):
    from .horizontal import Permutation

    a, _ = read_pnm(path)
    h2, w = a.shape
    h = h2 // 2
    dx = a[:h] - 32768
    dy = a[h:] - 32768
    ys, xs = np.indices((h, w))
    return Permutation(((ys + dy) * w + (xs + dx)).ravel(), (h, w))


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["sweep", "energy"])
        for i, e in enumerate(trace):
            wr.writerow([i, repr(float(e))])


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        f.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
