"""Motion-vector pseudo-masks.

Sidecar ``MVS1`` layout (little-endian)::

    b"MVS1" | u32 frame_width | u32 frame_height | u32 block_size
            | u32 gop_length | u64 frame_count
    frame_count x ( u32 frame_index | u32 gop_index
                    | (H/bs)*(W/bs) x (f32 dx, f32 dy) row-major )
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from itertools import groupby
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, GroupingError, ParameterError, ParseError

MAGIC = b"MVS1"
_HEADER = struct.Struct("<4sIIIIQ")
_FRAME = struct.Struct("<II")
EPS_VEC = 1e-8


@dataclass
class MotionField:
    frame_index: int
    gop_index: int
    blocks: np.ndarray  # (H_b, W_b, 2), dx then dy
    block_size: int

    def check(self, frame_hw):
        h, w = frame_hw
        hb, wb = self.blocks.shape[:2]
        if hb * self.block_size != h or wb * self.block_size != w:
            raise DimensionError(
                f"frame {self.frame_index}: block grid {hb}x{wb} with block_size "
                f"{self.block_size} does not tile a {h}x{w} frame")
        if not np.all(np.isfinite(self.blocks)):
            raise DimensionError(f"frame {self.frame_index}: non-finite displacement")


@dataclass
class AccumulatedField:
    raw_sum: np.ndarray   # (H, W, 2)
    smoothed: np.ndarray  # (H, W, 2)


@dataclass
class BinaryMask:
    grid: np.ndarray  # (H, W) uint8 in {0, 1}
    frame_index: int

    @property
    def shape(self):
        return self.grid.shape


@dataclass
class MaskParams:
    lam: float = 1.0
    tau: float = 0.5
    min_area_frac: float = 0.001


@dataclass
class SidecarHeader:
    frame_width: int
    frame_height: int
    block_size: int
    gop_length: int
    frame_count: int


# --------------------------------------------------------------------------
# sidecar I/O
# --------------------------------------------------------------------------

def write_mv_sidecar(path, fields: Sequence[MotionField], frame_hw, gop_length):
    h, w = frame_hw
    bs = fields[0].block_size if fields else 16
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, w, h, bs, gop_length, len(fields)))
        for f in fields:
            f.check(frame_hw)
            fh.write(_FRAME.pack(f.frame_index, f.gop_index))
            fh.write(np.ascontiguousarray(f.blocks, dtype="<f4").tobytes())


def read_mv_header(path) -> SidecarHeader:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise ParseError("truncated MVS1 header", 0)
    magic, w, h, bs, gop, n = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    return SidecarHeader(w, h, bs, gop, n)


def parse_mv_sidecar(path) -> list[MotionField]:
    """Read an ``MVS1`` sidecar, returning fields sorted by frame index.

    Raises:
        ParseError: bad magic, truncated header or frame record.
        DimensionError: the frame size is not a multiple of the block size.
    """
    data = Path(path).read_bytes()
    if len(data) == 0:
        return []
    hdr = read_mv_header(path)
    bs = hdr.block_size
    if bs < 1 or hdr.frame_height % bs or hdr.frame_width % bs:
        raise DimensionError(
            f"{hdr.frame_height}x{hdr.frame_width} frame is not tiled by {bs}px blocks")
    hb, wb = hdr.frame_height // bs, hdr.frame_width // bs
    rec_size = _FRAME.size + hb * wb * 8
    body = len(data) - _HEADER.size
    if body != hdr.frame_count * rec_size:
        bad = body // rec_size
        raise ParseError(
            f"frame record {bad} truncated: expected {hdr.frame_count} records of {rec_size} bytes, "
            f"body has {body}", _HEADER.size + bad * rec_size)
    rec_dtype = np.dtype([("fi", "<u4"), ("gi", "<u4"), ("mv", "<f4", (hb, wb, 2))])
    arr = np.frombuffer(data, dtype=rec_dtype, offset=_HEADER.size, count=hdr.frame_count)
    fields = [MotionField(int(r["fi"]), int(r["gi"]), r["mv"].astype(np.float64), bs) for r in arr]
    for f in fields:
        if not np.all(np.isfinite(f.blocks)):
            raise ParseError(f"non-finite motion vector in frame {f.frame_index}")
    fields.sort(key=lambda f: (f.gop_index, f.frame_index))
    order = [f.frame_index for f in fields]
    if order != sorted(order):
        raise GroupingError("gop_index is not monotone in frame_index")
    return fields


def write_pgm(path, mask):
    grid = (np.asarray(mask) > 0).astype(np.uint8) * 255
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(grid.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ParseError(f"not a binary PGM: {tokens[0]!r}", 0)
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ParseError("only 8-bit PGM supported", 0)
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1)
    return (pix.reshape(h, w) > 0).astype(np.uint8)


# --------------------------------------------------------------------------
# mask generation
# --------------------------------------------------------------------------

def upsample_blocks(blocks, block_size):
    return np.repeat(np.repeat(blocks, block_size, axis=0), block_size, axis=1)


def smooth_field(field):
    """3x3 binomial smoothing of each vector component."""
    return np.stack([kernels.gaussian3x3(field[..., c]) for c in range(field.shape[-1])], axis=-1)


def accumulate_gop(fields: Sequence[MotionField]) -> AccumulatedField:
    if len(fields) == 0:
        raise GroupingError("accumulate_gop needs at least one field")
    gops = {f.gop_index for f in fields}
    if len(gops) != 1:
        raise GroupingError(f"fields span several GOPs: {sorted(gops)}")
    block_sum = np.sum([f.blocks for f in fields], axis=0, dtype=np.float64)
    raw = upsample_blocks(block_sum, fields[0].block_size)
    return AccumulatedField(raw, smooth_field(raw))


def binarize(acc: AccumulatedField, lam=1.0, tau=0.5, frame_index=0, eps=EPS_VEC) -> BinaryMask:
    """Keep pixels whose summed-motion norm plus ``lam`` times the cosine between
    the smoothed and raw vectors reaches ``tau``. Zero motion never fires."""
    return BinaryMask(kernels.binarize(acc.raw_sum, acc.smoothed, lam, tau, eps), frame_index)


def refine(mask: BinaryMask, min_area_frac=0.001) -> BinaryMask:
    if not 0 <= min_area_frac < 1:
        raise ParameterError(f"min_area_frac must be in [0, 1), got {min_area_frac}")
    g = kernels.median3x3(mask.grid)
    g = kernels.erode3x3(kernels.dilate3x3(g))   # closing
    g = kernels.dilate3x3(kernels.erode3x3(g))   # opening
    h, w = g.shape
    g = kernels.remove_small_components(g, min_area_frac * h * w)
    return BinaryMask(g, mask.frame_index)


def gop_mask(fields: Sequence[MotionField], params: MaskParams = MaskParams()) -> np.ndarray:
    acc = accumulate_gop(fields)
    return refine(binarize(acc, params.lam, params.tau), params.min_area_frac).grid


def masks_for_video(fields: Sequence[MotionField], params: MaskParams = MaskParams()) -> list[BinaryMask]:
    """One refined mask per GOP, copied to every frame of that GOP."""
    if len(fields) == 0:
        return []
    out = []
    ordered = sorted(fields, key=lambda f: (f.gop_index, f.frame_index))
    for _, grp in groupby(ordered, key=lambda f: f.gop_index):
        grp = list(grp)
        grid = gop_mask(grp, params)
        out.extend(BinaryMask(grid.copy(), f.frame_index) for f in grp)
    out.sort(key=lambda m: m.frame_index)
    return out


def mask_stack(fields: Sequence[MotionField], params: MaskParams = MaskParams()):
    """``(frame_indices, masks (F, H, W) uint8)``: array form of :func:`masks_for_video`."""
    masks = masks_for_video(fields, params)
    if not masks:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 0, 0), dtype=np.uint8)
    return (np.array([m.frame_index for m in masks], dtype=np.int64),
            np.stack([m.grid for m in masks]))


def centroid(grid):
    """(row, col) centroid of the set pixels, or ``None`` if empty."""
    ys, xs = np.nonzero(grid)
    if len(ys) == 0:
        return None
    return float(ys.mean()), float(xs.mean())
