"""Cross-modal alignment and self-supervised label generation."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .csi import CsiWindow
from .errors import ParameterError
from .mvmask import BinaryMask

log = logging.getLogger(__name__)


@dataclass
class SyncedSample:
    frame_index: int
    csi: CsiWindow
    pseudo_mask: BinaryMask
    motion_label: int
    recording: str = ""

    def __post_init__(self):
        if not (self.csi.frame_index == self.pseudo_mask.frame_index == self.frame_index):
            raise ParameterError(
                f"misaligned sample: frame {self.frame_index}, csi {self.csi.frame_index}, "
                f"mask {self.pseudo_mask.frame_index}")


@dataclass
class ClipPair:
    visual_masks: list            # g BinaryMask
    wireless_masks: list          # g float arrays (H, W) in [0, 1]
    label: int                    # 0 = corresponding, 1 = forged
    visual_key: tuple = ()        # (recording, first frame)
    wireless_key: tuple = ()

    def as_array(self):
        """(g, 2, H, W) float32: channel 0 visual, channel 1 wireless."""
        vis = np.stack([m.grid for m in self.visual_masks]).astype(np.float32)
        wl = np.stack(self.wireless_masks).astype(np.float32)
        return np.stack([vis, wl], axis=1)


@dataclass
class SplitSpec:
    train_frac: float = 0.9
    seed: int = 0
    selector: str = "all_frames"      # or "moving_frames"
    mode: str = "random"              # or "contiguous"
    block_len: int = 40               # contiguous mode: frames per block

    def __post_init__(self):
        if not 0 < self.train_frac < 1:
            raise ParameterError(f"train_frac must be in (0, 1), got {self.train_frac}")
        if self.selector not in ("all_frames", "moving_frames"):
            raise ParameterError(f"unknown selector {self.selector!r}")
        if self.mode not in ("random", "contiguous"):
            raise ParameterError(f"unknown split mode {self.mode!r}")


def motion_criterion(mask, eta=0.0) -> int:
    """1 iff the fraction of set pixels strictly exceeds ``eta``."""
    if not 0 <= eta < 1:
        raise ParameterError(f"eta must be in [0, 1), got {eta}")
    grid = mask.grid if isinstance(mask, BinaryMask) else np.asarray(mask)
    return int(grid.sum() / grid.size > eta)


def split_indices(keys: Sequence[tuple], split: SplitSpec):
    """Seeded train/test partition of positions ``0..n-1``.

    ``keys`` are ``(recording, frame_index)`` pairs; the contiguous mode cuts
    each recording into runs of ``block_len`` frames and assigns whole runs.
    """
    n = len(keys)
    n_train = int(round(split.train_frac * n))
    rng = np.random.default_rng(split.seed)
    if split.mode == "random":
        perm = rng.permutation(n)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])
    order = sorted(range(n), key=lambda i: keys[i])
    blocks, cur, last = [], [], None
    for i in order:
        rec, f = keys[i]
        blk = (rec, f // split.block_len)
        if blk != last and cur:
            blocks.append(cur)
            cur = []
        cur.append(i)
        last = blk
    if cur:
        blocks.append(cur)
    test, n_test = [], n - n_train
    for b in rng.permutation(len(blocks)):
        if len(test) >= n_test:
            break
        test.extend(blocks[b])
    test = np.sort(np.array(test, dtype=np.int64))
    train = np.setdiff1d(np.arange(n), test)
    return train, test


def _split(samples, split):
    if len(samples) == 0:
        log.warning("empty sample list; returning empty datasets")
        return [], []
    keys = [(s.recording, s.frame_index) for s in samples]
    tr, te = split_indices(keys, split)
    return [samples[i] for i in tr], [samples[i] for i in te]


def build_detector_dataset(samples: Sequence[SyncedSample], split: SplitSpec):
    """All frames, split into (train, test); items keep ``csi`` and ``motion_label``."""
    if split.selector != "all_frames":
        raise ParameterError("detector dataset uses selector='all_frames'")
    return _split(list(samples), split)


def build_segmentor_dataset(samples: Sequence[SyncedSample], split: SplitSpec):
    """Only frames whose pseudo-mask shows motion, split into (train, test)."""
    if split.selector != "moving_frames":
        raise ParameterError("segmentor dataset uses selector='moving_frames'")
    moving = [s for s in samples if s.motion_label == 1]
    if not moving:
        log.warning("no moving frames; segmentor dataset is empty")
        return [], []
    return _split(moving, split)


def clip_starts(keys: Sequence[tuple], g: int):
    """Positions ``i`` such that ``keys[i:i+g]`` are consecutive frames of one recording."""
    starts = []
    for i in range(len(keys) - g + 1):
        rec, f = keys[i]
        if all(keys[i + j] == (rec, f + j) for j in range(1, g)):
            starts.append(i)
    return starts


def forgery_pairs(keys: Sequence[tuple], g: int, forgery_frac=0.5, min_offset: Optional[int] = None, seed=0):
    """Index plan for forgery clips: list of ``(visual_start, wireless_start, label)``.

    Candidate clips are stride-1 windows of ``g`` consecutive frames. A seeded
    ``round(forgery_frac * n)`` of them are re-paired with a wireless clip that
    starts at least ``min_offset`` frames away (or in another recording).
    """
    if g < 1:
        raise ParameterError(f"g must be >= 1, got {g}")
    if not 0 < forgery_frac < 1:
        raise ParameterError(f"forgery_frac must be in (0, 1), got {forgery_frac}")
    min_offset = g if min_offset is None else min_offset
    if min_offset < g:
        raise ParameterError(f"min_offset must be >= g={g}, got {min_offset}")
    starts = clip_starts(keys, g)
    n = len(starts)
    if n == 0:
        return []
    rng = np.random.default_rng(seed)
    n_forged = int(round(forgery_frac * n))
    forged = set(rng.permutation(n)[:n_forged].tolist())
    rec_id = {r: i for i, r in enumerate(sorted({k[0] for k in keys}))}
    srec = np.array([rec_id[keys[s][0]] for s in starts])
    sframe = np.array([keys[s][1] for s in starts])
    plan = []
    for ci, s in enumerate(starts):
        if ci not in forged:
            plan.append((s, s, 0))
            continue
        ok = (srec != srec[ci]) | (np.abs(sframe - sframe[ci]) >= min_offset)
        cand = np.nonzero(ok)[0]
        if len(cand) == 0:
            plan.append((s, s, 0))
            continue
        plan.append((s, starts[int(cand[rng.integers(len(cand))])], 1))
    return plan


def build_forgery_dataset(visual: Sequence[BinaryMask], wireless: Sequence, g: int, forgery_frac=0.5,
                          min_offset: Optional[int] = None, seed=0,
                          recordings: Optional[Sequence[str]] = None) -> list[ClipPair]:
    """Matched (label 0) and re-paired (label 1) clips of ``g`` mask pairs.

    ``visual`` and ``wireless`` are index-aligned; frame indices come from the
    visual masks and ``recordings`` (optional) names each item's source.
    """
    if len(visual) != len(wireless):
        raise ParameterError("visual and wireless sequences must be index-aligned")
    if len(visual) < g:
        return []
    recs = recordings if recordings is not None else [""] * len(visual)
    keys = [(r, v.frame_index) for r, v in zip(recs, visual)]
    out = []
    for vs, ws, label in forgery_pairs(keys, g, forgery_frac, min_offset, seed):
        out.append(ClipPair([visual[vs + j] for j in range(g)],
                            [np.asarray(wireless[ws + j]) for j in range(g)],
                            label, keys[vs], keys[ws]))
    return out


# --------------------------------------------------------------------------
# recording -> aligned arrays
# --------------------------------------------------------------------------

@dataclass
class FrameTable:
    """Column store of aligned frames; row ``i`` is one :class:`SyncedSample`."""
    recording: list
    frame_index: np.ndarray      # (N,)
    windows: np.ndarray          # (N, m*K, tx, rx) float32 denoised amplitudes
    masks: np.ndarray            # (N, H, W) uint8 pseudo-masks
    labels: np.ndarray           # (N,) motion labels
    m: int
    dropped: int = 0

    def __len__(self):
        return len(self.frame_index)

    @property
    def keys(self):
        return list(zip(self.recording, self.frame_index.tolist()))

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return FrameTable([self.recording[i] for i in idx], self.frame_index[idx], self.windows[idx],
                          self.masks[idx], self.labels[idx], self.m)

    def samples(self) -> list[SyncedSample]:
        out = []
        for i in range(len(self)):
            f = int(self.frame_index[i])
            win = CsiWindow(f, self.windows[i], np.arange(self.m))
            out.append(SyncedSample(f, win, BinaryMask(self.masks[i], f), int(self.labels[i]), self.recording[i]))
        return out

    @classmethod
    def concat(cls, tables):
        tables = [t for t in tables if len(t)]
        if not tables:
            raise ParameterError("nothing to concatenate")
        return cls(sum((t.recording for t in tables), []),
                   np.concatenate([t.frame_index for t in tables]),
                   np.concatenate([t.windows for t in tables]),
                   np.concatenate([t.masks for t in tables]),
                   np.concatenate([t.labels for t in tables]),
                   tables[0].m, sum(t.dropped for t in tables))


def preprocess(timestamps_us, csi_values, frame_times_us, motion_fields, *, m=5, hampel_window=5,
               hampel_sigmas=3.0, mask_params=None, eta=0.0, name="rec") -> FrameTable:
    """Denoise CSI, cut per-frame windows, derive pseudo-masks and motion labels."""
    from .csi import denoise_amplitudes, window_array
    from .mvmask import MaskParams, mask_stack

    amps = np.abs(np.asarray(csi_values)).astype(np.float64)
    amps = denoise_amplitudes(amps, hampel_window, hampel_sigmas)
    frames, windows, dropped = window_array(amps, timestamps_us, frame_times_us, m)
    if dropped:
        log.warning("%s: %d frame(s) without %d CSI records dropped", name, len(dropped), m)
    mask_frames, masks = mask_stack(motion_fields, mask_params or MaskParams())
    pos = {int(f): i for i, f in enumerate(mask_frames)}
    keep = np.array([int(f) in pos for f in frames], dtype=bool)
    frames, windows = frames[keep], windows[keep]
    masks = masks[[pos[int(f)] for f in frames]] if len(frames) else masks[:0]
    labels = np.array([motion_criterion(mk, eta) for mk in masks], dtype=np.int64)
    return FrameTable([name] * len(frames), frames, windows.astype(np.float32), masks.astype(np.uint8),
                      labels, m, len(dropped))


def preprocess_recording(rec, **kw) -> FrameTable:
    return preprocess(rec.csi_timestamps_us, rec.csi_values, rec.frame_times_us, rec.motion_fields,
                      name=rec.name, **kw)
