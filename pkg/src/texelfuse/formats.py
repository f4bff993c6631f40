"""Binary file formats for probability images (SMPB) and textures (SMTX).

All integers and floats are little-endian regardless of platform.

SMPB (one prediction frame):
    magic 'SMPB', u32 version=1, u32 height, u32 width, u32 classes,
    then height*width*classes float32, pixel-major with classes innermost.

SMTX (one fused texture, self-describing):
    u32 triangle_count, then per triangle u32 steps + u8 origin vertex
    (the layout table deliberately sits in front of the magic),
    magic 'SMTX', u32 version=1,
    u64 total_texels, u32 classes,
    total_texels*classes float32 rows,
    total_texels u32 observation counts (0 encodes "unobserved", so rows
    flagged unobserved at finalize are written with count 0).
"""

import os
import struct

import numpy as np

from .errors import DataError
from .geometry import TexelLayout, texel_count

SMPB_MAGIC = b"SMPB"
SMTX_MAGIC = b"SMTX"
FORMAT_VERSION = 1

# per-pixel distributions must sum to 1 within this on load
_SUM_TOL = 1e-4


def _read_exact(fh, n, path, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError("%s: truncated %s" % (path, what))
    return buf


def write_probability_image(path, probs: np.ndarray):
    """Write an (H, W, C) float32 class-probability image."""
    probs = np.asarray(probs, dtype=np.float32)
    if probs.ndim != 3:
        raise DataError("probability image must be (H, W, C), got %s" % (probs.shape,))
    h, w, c = probs.shape
    with open(path, "wb") as fh:
        fh.write(SMPB_MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, h, w, c))
        fh.write(np.ascontiguousarray(probs, dtype="<f4").tobytes())


def read_probability_header(path):
    """Return (height, width, classes) without loading pixel data."""
    path = str(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataError("cannot read prediction %s: %s" % (path, exc)) from exc
    with fh:
        magic = _read_exact(fh, 4, path, "header")
        if magic != SMPB_MAGIC:
            raise DataError("%s: bad magic %r (not a probability image)" % (path, magic))
        version, h, w, c = struct.unpack("<IIII", _read_exact(fh, 16, path, "header"))
    if version != FORMAT_VERSION:
        raise DataError("%s: unsupported version %d" % (path, version))
    if h < 1 or w < 1 or c < 1:
        raise DataError("%s: invalid dimensions %dx%dx%d" % (path, h, w, c))
    return h, w, c


def read_probability_image(path) -> np.ndarray:
    """Read an SMPB file, validating that pixel rows are distributions."""
    path = str(path)
    h, w, c = read_probability_header(path)
    with open(path, "rb") as fh:
        fh.seek(20)
        data = np.fromfile(fh, dtype="<f4", count=h * w * c)
    if data.size != h * w * c:
        raise DataError("%s: truncated pixel data" % path)
    probs = data.reshape(h, w, c)
    if float(probs.min()) < -1e-6:
        raise DataError("%s: negative probabilities" % path)
    sums = probs.sum(axis=2, dtype=np.float64)
    err = float(np.abs(sums - 1.0).max())
    if err > _SUM_TOL:
        raise DataError("%s: pixel distributions do not sum to 1 (max error %.3g)" % (path, err))
    return probs


def write_texture(path, layout: TexelLayout, rows: np.ndarray, counts: np.ndarray,
                  unobserved: np.ndarray | None = None):
    """Write a finalized texture together with its layout table."""
    rows = np.asarray(rows, dtype=np.float32)
    n, c = rows.shape
    if n != layout.total_texels:
        raise DataError("texture rows (%d) do not match layout texels (%d)" % (n, layout.total_texels))
    stored = np.asarray(counts, dtype=np.uint32).copy()
    if stored.shape != (n,):
        raise DataError("texture counts shape %s does not match %d texels" % (stored.shape, n))
    if unobserved is not None:
        stored[np.asarray(unobserved, dtype=bool)] = 0
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", layout.num_triangles))
        table = np.zeros(layout.num_triangles, dtype=np.dtype([("s", "<u4"), ("o", "u1")]))
        table["s"] = layout.steps
        table["o"] = layout.origins
        fh.write(table.tobytes())
        fh.write(SMTX_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<QI", n, c))
        fh.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())
        fh.write(stored.astype("<u4").tobytes())


def read_texture(path):
    """Read an SMTX file; returns (layout, rows, counts).

    Unobserved rows are those with count 0 (see module docstring).
    """
    path = str(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataError("cannot read texture %s: %s" % (path, exc)) from exc
    size = os.path.getsize(path)
    with fh:
        (m,) = struct.unpack("<I", _read_exact(fh, 4, path, "layout table"))
        # the table runs ahead of the magic, so sanity-check its length
        # against the file before trusting m
        if 4 + 5 * m + 4 > size:
            raise DataError("%s: not a texture file (implausible layout table)" % path)
        table = np.frombuffer(
            _read_exact(fh, 5 * m, path, "layout table"),
            dtype=np.dtype([("s", "<u4"), ("o", "u1")]),
        )
        magic = _read_exact(fh, 4, path, "header")
        if magic != SMTX_MAGIC:
            raise DataError("%s: bad magic %r (not a texture file)" % (path, magic))
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path, "header"))
        if version != FORMAT_VERSION:
            raise DataError("%s: unsupported version %d" % (path, version))
        steps = table["s"].astype(np.int32)
        if m and int(steps.min()) < 1:
            raise DataError("%s: layout table has non-positive steps" % path)
        origins = table["o"].astype(np.int8)
        if m and int(origins.max()) > 2:
            raise DataError("%s: layout table has origin vertex > 2" % path)
        n, c = struct.unpack("<QI", _read_exact(fh, 12, path, "header"))
        counts_per_tri = texel_count(steps)
        offsets = np.zeros(m, dtype=np.int64)
        if m:
            np.cumsum(counts_per_tri[:-1], out=offsets[1:])
        total = int(counts_per_tri.sum()) if m else 0
        if total != n:
            raise DataError(
                "%s: layout table implies %d texels but header says %d" % (path, total, n)
            )
        rows = np.fromfile(fh, dtype="<f4", count=n * c)
        if rows.size != n * c:
            raise DataError("%s: truncated texture rows" % path)
        counts = np.fromfile(fh, dtype="<u4", count=n)
        if counts.size != n:
            raise DataError("%s: truncated observation counts" % path)
    layout = TexelLayout(
        steps=steps, origins=origins, offsets=offsets, total_texels=int(n)
    )
    return layout, rows.reshape(n, c), counts.astype(np.int64)
