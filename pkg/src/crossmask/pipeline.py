"""Gated streaming inference: detector gate -> segmentor -> forgery check."""
from __future__ import annotations

import json
import logging
import queue
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .csi import CsiWindow
from .errors import OrderingError, ParameterError
from .mvmask import BinaryMask
from .models import load_checkpoint, tile_to_working_size

log = logging.getLogger(__name__)


@dataclass
class Verdict:
    clip_start: int
    score: float
    forged: bool
    latency_us: int

    def to_json(self):
        return json.dumps({"clip_start": self.clip_start, "score": self.score,
                           "forged": self.forged, "latency_us": self.latency_us})


@dataclass
class PipelineState:
    g: int
    visual: deque = None
    wireless: deque = None
    frames: deque = None
    gate_open: bool = False
    last_index: Optional[int] = None
    frames_seen: int = 0
    clips_judged: int = 0
    alerts: int = 0
    calls: dict = field(default_factory=lambda: {"detector": 0, "segmentor": 0, "forgery": 0})
    seconds: dict = field(default_factory=lambda: {"detector": 0.0, "segmentor": 0.0, "forgery": 0.0})

    def __post_init__(self):
        if self.g < 1:
            raise ParameterError(f"g must be >= 1, got {self.g}")
        self.visual = deque(maxlen=self.g)
        self.wireless = deque(maxlen=self.g)
        self.frames = deque(maxlen=self.g)

    def reset_buffers(self):
        self.visual.clear()
        self.wireless.clear()
        self.frames.clear()

    def fps(self):
        """Frames (or clips) per second of module compute time; 0 when never called."""
        return {k: (self.calls[k] / self.seconds[k] if self.seconds[k] > 0 else 0.0) for k in self.calls}


class Pipeline:
    """Holds the three trained networks and the streaming state.

    Args:
        detector, segmentor, forgery: trained modules in eval mode.
        g: clip length.
        hw: working frame size (H, W).
        threshold: decision threshold on sigmoid scores for gate and verdict.
    """

    def __init__(self, detector, segmentor, forgery, g, hw, threshold=0.5):
        self.detector, self.segmentor, self.forgery = detector, segmentor, forgery
        for net in (detector, segmentor, forgery):
            net.eval()
        self.g, self.hw, self.threshold = g, tuple(hw), threshold
        self.state = PipelineState(g)

    def reset(self):
        self.state = PipelineState(self.g)

    def _timed(self, name, fn, *args):
        t0 = time.perf_counter()
        with torch.no_grad():
            out = fn(*args)
        self.state.seconds[name] += time.perf_counter() - t0
        self.state.calls[name] += 1
        return out

    def step(self, csi_window: CsiWindow, visual_mask: Optional[BinaryMask] = None) -> Optional[Verdict]:
        """Advance by one frame; returns a :class:`Verdict` once ``g`` aligned moving frames are buffered.

        A closed gate (detector score at or below the threshold), a missing
        visual mask, or a gap in frame indices clears the buffers.

        Raises:
            OrderingError: frame index not strictly increasing.
            ParameterError: visual mask for a different frame.
        """
        st = self.state
        f = int(csi_window.frame_index)
        if st.last_index is not None and f <= st.last_index:
            raise OrderingError(f"frame index regressed: {f} after {st.last_index}")
        if visual_mask is not None and visual_mask.frame_index != f:
            raise ParameterError(f"visual mask for frame {visual_mask.frame_index} paired with CSI frame {f}")
        t_start = time.perf_counter()
        if st.last_index is not None and f != st.last_index + 1:
            st.reset_buffers()
        st.last_index = f
        st.frames_seen += 1

        x = torch.from_numpy(np.ascontiguousarray(csi_window.as_steps(), dtype=np.float32))[None]
        gate = float(torch.sigmoid(self._timed("detector", self.detector, x))[0])
        st.gate_open = gate > self.threshold
        if not st.gate_open or visual_mask is None:
            st.reset_buffers()
            return None

        tiled = tile_to_working_size(torch.from_numpy(np.asarray(csi_window.amps_concat, dtype=np.float32)), self.hw)
        prob = torch.sigmoid(self._timed("segmentor", self.segmentor, tiled[None]))[0].numpy()
        st.visual.append(np.asarray(visual_mask.grid, dtype=np.float32))
        st.wireless.append(prob)
        st.frames.append(f)
        if len(st.frames) < self.g:
            return None

        clip = np.stack([np.stack(st.visual), np.stack(st.wireless)], axis=1)[None]
        score = float(torch.sigmoid(self._timed("forgery", self.forgery, torch.from_numpy(clip)))[0])
        st.clips_judged += 1
        forged = score >= self.threshold
        st.alerts += int(forged)
        latency = int(round((time.perf_counter() - t_start) * 1e6))
        return Verdict(st.frames[0], score, forged, latency)


# --------------------------------------------------------------------------
# whole-recording driver
# --------------------------------------------------------------------------

def load_pipeline(checkpoint_dir, cfg, tag="best") -> Pipeline:
    """Rebuild the three networks from ``checkpoint_dir`` and check their fingerprints against ``cfg``."""
    ckdir = Path(checkpoint_dir)
    dims = list(cfg.simulate.csi_dims)
    hw = list(cfg.simulate.frame_hw)
    expected = {"m": cfg.m, "K": dims[0], "N_tx": dims[1], "N_rx": dims[2], "H": hw[0], "W": hw[1]}
    nets = {}
    for module in ("detector", "segmentor", "forgery"):
        exp = dict(expected, module=module)
        if module == "forgery":
            exp["g"] = cfg.g
        nets[module], _ = load_checkpoint(ckdir / f"{module}_{tag}.pt", exp)
    return Pipeline(nets["detector"], nets["segmentor"], nets["forgery"], cfg.g, hw, cfg.pipeline.threshold)


def stream_inputs(csi_path, mv_path, cfg):
    """Yield ``(CsiWindow, BinaryMask)`` per frame of a recording, in frame order."""
    from .csi import denoise_amplitudes, read_csi_arrays, window_array
    from .mvmask import MaskParams, mask_stack, parse_mv_sidecar
    from .synth import frame_times

    ts, values = read_csi_arrays(csi_path, tuple(cfg.simulate.csi_dims))
    fields = parse_mv_sidecar(mv_path)
    if len(ts) == 0 or not fields:
        return
    sig = cfg.signal
    amps = denoise_amplitudes(np.abs(values).astype(np.float64), sig.hampel_window, sig.hampel_sigmas)
    mask_frames, masks = mask_stack(fields, MaskParams(sig.lam, sig.tau, sig.min_area_frac))
    n_frames = int(mask_frames.max()) + 1
    frames, windows, dropped = window_array(amps, ts, frame_times(n_frames, cfg.simulate.fps), cfg.m)
    if dropped:
        log.warning("%d frame(s) without %d CSI records skipped", len(dropped), cfg.m)
    pos = {int(f): i for i, f in enumerate(mask_frames)}
    for f, w in zip(frames.tolist(), windows):
        mk = BinaryMask(masks[pos[f]], f) if f in pos else None
        yield CsiWindow(f, w.astype(np.float32), np.arange(cfg.m)), mk


_DONE = object()


def _threaded(items, depth):
    """Run ``items`` (an iterator) in a producer thread behind a bounded FIFO."""
    q = queue.Queue(maxsize=depth)
    err = []

    def produce():
        try:
            for it in items:
                q.put(it)
        except BaseException as exc:  # surfaced in the consumer
            err.append(exc)
        finally:
            q.put(_DONE)

    th = threading.Thread(target=produce, daemon=True)
    th.start()
    while True:
        it = q.get()
        if it is _DONE:
            break
        yield it
    th.join()
    if err:
        raise err[0]


@dataclass
class StreamResult:
    verdicts: list
    frames: int
    wall_seconds: float
    fps: dict
    calls: dict

    @property
    def overall_fps(self):
        return self.frames / self.wall_seconds if self.wall_seconds > 0 else 0.0


def run_stream(csi_path, mv_path, pipeline: Pipeline, cfg, out_path=None, queue_depth=None) -> StreamResult:
    """Process a whole recording and optionally write the verdict log as JSON lines.

    ``queue_depth`` > 0 moves parsing and windowing to a producer thread
    connected by a bounded queue; verdict content does not depend on it.
    """
    depth = cfg.pipeline.queue_depth if queue_depth is None else queue_depth
    pipeline.reset()
    t0 = time.perf_counter()
    items = stream_inputs(csi_path, mv_path, cfg)
    if depth > 0:
        items = _threaded(items, depth)
    verdicts = []
    for win, mk in items:
        v = pipeline.step(win, mk)
        if v is not None:
            verdicts.append(v)
    wall = time.perf_counter() - t0
    st = pipeline.state
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w") as fh:
            for v in verdicts:
                fh.write(v.to_json() + "\n")
    return StreamResult(verdicts, st.frames_seen, wall, st.fps(), dict(st.calls))


def read_verdicts(path) -> list[Verdict]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(Verdict(int(d["clip_start"]), float(d["score"]), bool(d["forged"]), int(d["latency_us"])))
    return out


def verdict_dicts(verdicts, with_timing=False):
    rows = [asdict(v) for v in verdicts]
    if not with_timing:
        for r in rows:
            r.pop("latency_us")
    return rows
