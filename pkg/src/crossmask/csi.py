"""CSI ingestion: file I/O, amplitudes, Hampel denoising, per-frame windows.

Binary ``CSI1`` layout (little-endian)::

    b"CSI1" | u32 K | u32 N_tx | u32 N_rx | u64 record_count
    record_count x ( u64 timestamp_us | K*N_tx*N_rx x (f32 re, f32 im) )

Complex entries are stored subcarrier-major, then tx, then rx. A JSON-lines
mirror (``.jsonl``) holds one ``{"timestamp_us": int, "values": [...]}``
object per line, ``values`` being a nested ``K x N_tx x N_rx x 2`` list.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, OrderingError, ParameterError, ParseError

log = logging.getLogger(__name__)

MAGIC = b"CSI1"
_HEADER = struct.Struct("<4sIIIQ")
_TS = struct.Struct("<Q")


@dataclass
class CsiRecord:
    timestamp_us: int
    values: np.ndarray  # complex, (K, N_tx, N_rx)

    @property
    def dims(self):
        return tuple(self.values.shape)


@dataclass
class AmplitudeRecord:
    timestamp_us: int
    amps: np.ndarray  # float, (K, N_tx, N_rx)


@dataclass
class CsiWindow:
    frame_index: int
    amps_concat: np.ndarray  # ((m*K), N_tx, N_rx)
    source_timestamps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def m(self):
        return len(self.source_timestamps)

    def as_steps(self):
        """Reshape to ``(m, K, N_tx * N_rx)`` for the detector."""
        m = self.m
        mk, ntx, nrx = self.amps_concat.shape
        return self.amps_concat.reshape(m, mk // m, ntx * nrx)


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def write_csi_stream(path, timestamps_us, values):
    """Write a ``CSI1`` file. ``values`` has shape (T, K, N_tx, N_rx), complex."""
    values = np.asarray(values)
    timestamps_us = np.asarray(timestamps_us, dtype=np.uint64)
    if values.ndim != 4 or len(values) != len(timestamps_us):
        raise DimensionError(f"expected (T, K, N_tx, N_rx) values, got {values.shape}")
    t, k, ntx, nrx = values.shape
    rec = np.empty((t, k * ntx * nrx * 2), dtype="<f4")
    flat = values.reshape(t, -1)
    rec[:, 0::2] = flat.real
    rec[:, 1::2] = flat.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, k, ntx, nrx, t))
        for i in range(t):
            fh.write(_TS.pack(int(timestamps_us[i])))
            fh.write(rec[i].tobytes())


def _check_dims(dims, expected_dims):
    if any(d < 1 for d in dims):
        raise DimensionError(f"all CSI dimensions must be >= 1, got {dims}")
    if expected_dims is not None and tuple(dims) != tuple(expected_dims):
        raise DimensionError(f"stream dims {tuple(dims)} != expected {tuple(expected_dims)}")


def _check_order(timestamps, where):
    for i in range(1, len(timestamps)):
        if timestamps[i] <= timestamps[i - 1]:
            raise OrderingError(
                f"timestamps must strictly increase: record {i} has {timestamps[i]} "
                f"after {timestamps[i - 1]} ({where})")


def read_csi_arrays(path, expected_dims=None):
    """Parse a CSI file straight into ``(timestamps int64 (T,), values complex64 (T,K,tx,rx))``."""
    path = Path(path)
    if path.suffix == ".jsonl":
        recs = _parse_jsonl(path, expected_dims)
        if not recs:
            return np.zeros(0, dtype=np.int64), np.zeros((0,) + tuple(expected_dims or (0, 0, 0)), np.complex64)
        return (np.array([r.timestamp_us for r in recs], dtype=np.int64),
                np.stack([r.values for r in recs]).astype(np.complex64))
    data = path.read_bytes()
    if len(data) == 0:
        dims = tuple(expected_dims) if expected_dims is not None else (0, 0, 0)
        return np.zeros(0, dtype=np.int64), np.zeros((0,) + dims, dtype=np.complex64)
    if len(data) < _HEADER.size:
        raise ParseError("truncated CSI header", 0)
    magic, k, ntx, nrx, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    _check_dims((k, ntx, nrx), expected_dims)
    n_vals = k * ntx * nrx
    rec_size = _TS.size + 8 * n_vals
    body = len(data) - _HEADER.size
    if body != count * rec_size:
        bad = body // rec_size
        raise ParseError(
            f"record {bad} is truncated or malformed: header declares {count} records "
            f"of {rec_size} bytes (K={k}, N_tx={ntx}, N_rx={nrx}) but body has {body} bytes",
            _HEADER.size + bad * rec_size)
    rec_dtype = np.dtype([("ts", "<u8"), ("iq", "<f4", (n_vals * 2,))])
    arr = np.frombuffer(data, dtype=rec_dtype, offset=_HEADER.size, count=count)
    ts = arr["ts"].astype(np.int64)
    iq = arr["iq"]
    vals = (iq[:, 0::2] + 1j * iq[:, 1::2]).astype(np.complex64).reshape(count, k, ntx, nrx)
    if not np.all(np.isfinite(iq)):
        bad = int(np.nonzero(~np.isfinite(iq).all(axis=1))[0][0])
        raise ParseError(f"non-finite value in record {bad}", _HEADER.size + bad * rec_size)
    _check_order(ts, str(path))
    return ts, vals


def _parse_jsonl(path, expected_dims):
    records = []
    dims = tuple(expected_dims) if expected_dims is not None else None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                arr = np.asarray(obj["values"], dtype=np.float64)
                ts = int(obj["timestamp_us"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"malformed JSON record: {exc}", lineno) from None
            if arr.ndim != 4 or arr.shape[-1] != 2:
                raise ParseError(f"values must be K x N_tx x N_rx x 2, got {arr.shape}", lineno)
            if dims is None:
                dims = arr.shape[:3]
                _check_dims(dims, None)
            elif arr.shape[:3] != dims:
                raise ParseError(f"record dims {arr.shape[:3]} differ from stream dims {dims}", lineno)
            records.append(CsiRecord(ts, arr[..., 0] + 1j * arr[..., 1]))
    _check_order([r.timestamp_us for r in records], str(path))
    return records


def write_csi_jsonl(path, timestamps_us, values):
    with open(path, "w") as fh:
        for t, v in zip(timestamps_us, values):
            pairs = np.stack([v.real, v.imag], axis=-1).tolist()
            fh.write(json.dumps({"timestamp_us": int(t), "values": pairs}) + "\n")


def parse_csi_stream(path, expected_dims=None) -> list[CsiRecord]:
    """Read a ``CSI1`` (or ``.jsonl``) file into a list of :class:`CsiRecord`.

    Raises:
        ParseError: malformed header/record, with the byte offset (line for jsonl).
        DimensionError: dims differ from ``expected_dims``.
        OrderingError: timestamps not strictly increasing.
    """
    if Path(path).suffix == ".jsonl":
        return _parse_jsonl(Path(path), expected_dims)
    ts, vals = read_csi_arrays(path, expected_dims)
    return [CsiRecord(int(t), v) for t, v in zip(ts, vals)]


# --------------------------------------------------------------------------
# processing
# --------------------------------------------------------------------------

def amplitude(record: CsiRecord) -> AmplitudeRecord:
    return AmplitudeRecord(record.timestamp_us, np.abs(record.values).astype(np.float64))


def hampel_filter(series, window=5, n_sigmas=3.0, eps=1e-9):
    """Replace points further than ``n_sigmas`` scaled MADs from their local median.

    Windows are truncated at both ends. When the local MAD is 0, a point is
    only replaced if its deviation also exceeds ``eps``.
    """
    if window < 3 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 3, got {window}")
    if not n_sigmas > 0:
        raise ParameterError(f"n_sigmas must be > 0, got {n_sigmas}")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    return kernels.hampel(x[None, :], window // 2, n_sigmas, eps)[0]


def denoise_amplitudes(amps, window=5, n_sigmas=3.0, eps=1e-9):
    """Hampel-filter every (subcarrier, tx, rx) series of a (T, K, N_tx, N_rx) block along time."""
    if window < 3 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 3, got {window}")
    if not n_sigmas > 0:
        raise ParameterError(f"n_sigmas must be > 0, got {n_sigmas}")
    amps = np.asarray(amps, dtype=np.float64)
    if amps.shape[0] == 0:
        return amps.copy()
    t = amps.shape[0]
    series = np.ascontiguousarray(amps.reshape(t, -1).T)
    out = kernels.hampel(series, window // 2, n_sigmas, eps)
    return out.T.reshape(amps.shape)


def frame_bounds(frame_times_us):
    """Half-open ``[start, end)`` interval per frame; the last frame reuses the previous period."""
    ft = np.asarray(frame_times_us, dtype=np.int64)
    if len(ft) == 0:
        return ft, ft
    if np.any(np.diff(ft) <= 0):
        raise OrderingError("frame times must strictly increase")
    ends = np.empty_like(ft)
    ends[:-1] = ft[1:]
    ends[-1] = ft[-1] + (ft[-1] - ft[-2]) if len(ft) > 1 else np.iinfo(np.int64).max
    return ft, ends


def window_indices(timestamps_us, frame_times_us, m):
    """Record indices selected for every frame, plus the list of dropped frames.

    Returns ``(selected, dropped)`` where ``selected`` maps frame index to an
    ``int`` array of ``m`` record indices.
    """
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    ts = np.asarray(timestamps_us, dtype=np.int64)
    starts, ends = frame_bounds(frame_times_us)
    lo = np.searchsorted(ts, starts, side="left")
    hi = np.searchsorted(ts, ends, side="left")
    selected, dropped = {}, []
    for f in range(len(starts)):
        n = int(hi[f] - lo[f])
        if n < m:
            dropped.append(f)
            continue
        selected[f] = lo[f] + (np.arange(m) * n) // m
    return selected, dropped


def window_csi(amps: Sequence[AmplitudeRecord], frame_times_us, m):
    """Group amplitude records into per-frame windows of ``m`` records.

    Returns:
        ``(windows, dropped)``: list of :class:`CsiWindow` and the indices of
        frames that had fewer than ``m`` records in their interval.
    """
    if len(amps) == 0:
        dropped = list(range(len(frame_times_us)))
        if dropped:
            log.warning("no CSI records; dropping all %d frames", len(dropped))
        return [], dropped
    ts = np.array([a.timestamp_us for a in amps], dtype=np.int64)
    block = np.stack([a.amps for a in amps])
    selected, dropped = window_indices(ts, frame_times_us, m)
    if dropped:
        log.warning("%d frame(s) had fewer than m=%d CSI records and were dropped", len(dropped), m)
    windows = []
    for f, idx in selected.items():
        sub = block[idx]
        windows.append(CsiWindow(f, sub.reshape(-1, *sub.shape[2:]), ts[idx]))
    return windows, dropped


def window_array(block, timestamps_us, frame_times_us, m):
    """Array version of :func:`window_csi`: returns ``(frame_idx (F,), windows (F, m*K, tx, rx), dropped)``."""
    selected, dropped = window_indices(timestamps_us, frame_times_us, m)
    frames = np.array(sorted(selected), dtype=np.int64)
    if len(frames) == 0:
        return frames, np.zeros((0, m * block.shape[1]) + block.shape[2:]), dropped
    idx = np.stack([selected[f] for f in frames])
    win = block[idx]  # (F, m, K, tx, rx)
    return frames, win.reshape(len(frames), -1, *block.shape[2:]), dropped
