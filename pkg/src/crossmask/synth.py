"""Deterministic scene simulator.

Produces synchronised recordings: elliptical actors walking piecewise-linear
paths, the block motion vectors an encoder would see, the rasterised
ground-truth masks, and a CSI stream whose amplitudes carry actor position
and speed. The CSI response model is deliberately non-physical: each
(tx, rx) link "looks" along its own direction, and a moving actor adds a
Gaussian bump over subcarriers centred at the actor's projection onto that
direction, scaled by speed and modulated at a speed-dependent rate.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .csi import write_csi_stream
from .errors import ParameterError
from .mvmask import MotionField, parse_mv_sidecar, read_pgm, write_mv_sidecar, write_pgm

log = logging.getLogger(__name__)


@dataclass
class ActorSpec:
    semi_axes: tuple[float, float]               # (ry, rx) in pixels
    waypoints: list[tuple[float, float]]         # (y, x) centres, visited in order
    speed: float                                 # px / frame


@dataclass
class SceneSpec:
    frame_hw: tuple[int, int] = (96, 128)
    fps: float = 7.5
    n_frames: int = 240
    persons_count: int = 1
    block_size: int = 16
    gop_length: int = 4
    seed: int = 0
    actors: Optional[list[ActorSpec]] = None     # explicit actors override random ones
    semi_axis_range: tuple[tuple[float, float], tuple[float, float]] = ((20.0, 26.0), (11.0, 15.0))
    speed_range: tuple[float, float] = (2.0, 4.0)
    pause_prob: float = 0.05                     # per-GOP chance a walking actor stops
    resume_prob: float = 0.5                     # per-GOP chance a standing actor resumes
    min_block_coverage: float = 0.25             # encoder-like: mostly-background blocks keep zero MV


@dataclass
class CsiModel:
    dims: tuple[int, int, int] = (30, 3, 3)
    baseline_level: float = 20.0
    baseline_ripple: float = 4.0
    response_gain: float = 2.5                   # amplitude per px/frame of speed
    bump_width: float = 1.5                      # subcarriers
    doppler_depth: float = 0.3
    doppler_hz_per_speed: float = 1.5
    noise_sigma: float = 0.5
    outlier_rate: float = 0.01
    outlier_magnitude: float = 15.0


@dataclass
class Recording:
    scene: SceneSpec
    csi_model: CsiModel
    csi_rate_hz: float
    frame_times_us: np.ndarray          # (F,)
    csi_timestamps_us: np.ndarray       # (T,)
    csi_values: np.ndarray              # (T, K, tx, rx) complex64
    csi_clean_amps: np.ndarray          # (T, K, tx, rx) noise- and outlier-free amplitude
    motion_fields: list[MotionField]
    gt_masks: np.ndarray                # (F, H, W) uint8
    positions: np.ndarray               # (A, F, 2) (y, x)
    velocities: np.ndarray              # (A, F, 2) (dy, dx), zero at frame 0
    name: str = "rec"
    forgery: Optional[dict] = None

    @property
    def n_frames(self):
        return len(self.frame_times_us)

    @property
    def moving(self):
        """(F,) bool: any actor moved into this frame."""
        if self.velocities.shape[0] == 0:
            return np.zeros(self.n_frames, dtype=bool)
        return np.any(np.abs(self.velocities).sum(axis=2) > 0, axis=0)


def frame_times(n_frames, fps):
    step = Fraction(10 ** 6) / Fraction(fps)
    return np.array([int(i * step) for i in range(n_frames)], dtype=np.int64)


def csi_times(n_records, rate_hz):
    step = Fraction(10 ** 6) / Fraction(rate_hz)
    return np.array([int(i * step) for i in range(n_records)], dtype=np.int64)


# --------------------------------------------------------------------------
# trajectories and rasterisation
# --------------------------------------------------------------------------

def _bounds(frame_hw, semi):
    h, w = frame_hw
    ry, rx = semi
    return (ry, h - ry), (rx, w - rx)


def _check_inside(frame_hw, semi, pt):
    (y0, y1), (x0, x1) = _bounds(frame_hw, semi)
    return y0 <= pt[0] <= y1 and x0 <= pt[1] <= x1


def _walk_explicit(actor: ActorSpec, scene: SceneSpec):
    pos = np.zeros((scene.n_frames, 2))
    for wp in actor.waypoints:
        if not _check_inside(scene.frame_hw, actor.semi_axes, wp):
            raise ParameterError(f"waypoint {wp} puts the actor outside the {scene.frame_hw} frame")
    cur = np.array(actor.waypoints[0], dtype=float)
    targets = [np.array(p, dtype=float) for p in actor.waypoints[1:]]
    for f in range(scene.n_frames):
        if f > 0:
            budget = actor.speed
            while targets and budget > 0:
                d = targets[0] - cur
                dist = np.hypot(*d)
                if dist <= budget:
                    cur, budget = targets.pop(0), budget - dist
                else:
                    cur = cur + d / dist * budget
                    budget = 0
        pos[f] = cur
    return pos


def _walk_random(semi, speed, scene: SceneSpec, rng):
    (y0, y1), (x0, x1) = _bounds(scene.frame_hw, semi)
    pick = lambda: np.array([rng.uniform(y0, y1), rng.uniform(x0, x1)])
    cur, target = pick(), pick()
    walking = True
    pos = np.zeros((scene.n_frames, 2))
    for f in range(scene.n_frames):
        # state only changes on GOP boundaries so motion labels are GOP-consistent
        if f > 0 and f % scene.gop_length == 0:
            walking = rng.random() >= (scene.pause_prob if walking else 1 - scene.resume_prob)
        if f > 0 and walking:
            budget = speed
            while budget > 1e-12:
                d = target - cur
                dist = np.hypot(*d)
                if dist <= budget:
                    cur, budget = target, budget - dist
                    target = pick()
                else:
                    cur = cur + d / dist * budget
                    budget = 0.0
        pos[f] = cur
    return pos


def rasterize(frame_hw, centres, semis):
    """Label image: 0 background, a+1 for actor a (later actors drawn on top)."""
    h, w = frame_hw
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    lab = np.zeros((h, w), dtype=np.int16)
    for a, ((cy, cx), (ry, rx)) in enumerate(zip(centres, semis)):
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        lab[inside] = a + 1
    return lab


def block_motion(lab, vel_dxdy, block_size, min_coverage):
    """Per-block mean displacement of actor pixels; ``vel_dxdy`` is (A, 2) as (dx, dy)."""
    h, w = lab.shape
    hb, wb = h // block_size, w // block_size
    blocks = lab.reshape(hb, block_size, wb, block_size).transpose(0, 2, 1, 3).reshape(hb, wb, -1)
    out = np.zeros((hb, wb, 2))
    n_act = len(vel_dxdy)
    if n_act == 0:
        return out
    counts = np.stack([(blocks == a + 1).sum(axis=2) for a in range(n_act)], axis=-1)  # (hb, wb, A)
    total = counts.sum(axis=2)
    ok = total >= max(min_coverage * block_size * block_size, 1)
    if n_act:
        summed = counts @ np.asarray(vel_dxdy, dtype=float)
        out[ok] = summed[ok] / total[ok][:, None]
    return out


# --------------------------------------------------------------------------
# CSI model
# --------------------------------------------------------------------------

def _link_geometry(model: CsiModel, frame_hw):
    k, ntx, nrx = model.dims
    n_links = ntx * nrx
    theta = np.pi * np.arange(n_links) / n_links
    h, w = frame_hw
    half_extent = np.abs(np.cos(theta)) * w / 2 + np.abs(np.sin(theta)) * h / 2
    return theta, half_extent


def _baseline(model: CsiModel, rng):
    k, ntx, nrx = model.dims
    ks = np.arange(k)[:, None]
    freq = rng.uniform(0.5, 1.5, size=ntx * nrx)
    phase = rng.uniform(0, 2 * np.pi, size=ntx * nrx)
    level = model.baseline_level * rng.uniform(0.8, 1.2, size=ntx * nrx)
    base = level + model.baseline_ripple * np.sin(2 * np.pi * freq * ks / k + phase)
    return base.reshape(k, ntx, nrx)


def csi_clean_amplitudes(model: CsiModel, frame_hw, positions, velocities, rec_frame, rec_t_s, rng):
    """Noise-free amplitudes for every record; ``rec_frame`` maps record -> frame."""
    k, ntx, nrx = model.dims
    base = _baseline(model, rng)
    theta, half = _link_geometry(model, frame_hw)
    h, w = frame_hw
    n_rec = len(rec_frame)
    amps = np.broadcast_to(base, (n_rec, k, ntx, nrx)).copy().reshape(n_rec, k, -1)
    link_phase = rng.uniform(0, 2 * np.pi, size=ntx * nrx)
    ks = np.arange(k)[None, :, None]
    for a in range(positions.shape[0]):
        p = positions[a, rec_frame]                  # (n, 2) y, x
        speed = np.hypot(*velocities[a, rec_frame].T)
        proj = ((p[:, 1:2] - w / 2) * np.cos(theta) + (p[:, 0:1] - h / 2) * np.sin(theta)) / half
        centre = (k - 1) / 2 * (1 + 0.9 * proj)      # (n, L)
        mod = 1 + model.doppler_depth * np.sin(
            2 * np.pi * model.doppler_hz_per_speed * speed[:, None] * rec_t_s[:, None] + link_phase)
        bump = np.exp(-((ks - centre[:, None, :]) ** 2) / (2 * model.bump_width ** 2))
        amps += model.response_gain * (speed[:, None] * mod)[:, None, :] * bump
    return amps.reshape(n_rec, k, ntx, nrx)


def corrupt(clean_amps, model: CsiModel, rng):
    """Complex CSI from clean amplitudes: fixed per-entry phase, complex Gaussian noise, impulsive outliers."""
    shape = clean_amps.shape
    amp = clean_amps.copy()
    if model.outlier_rate > 0:
        hit = rng.random(shape) < model.outlier_rate
        sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
        amp = np.where(hit, np.maximum(amp + sign * model.outlier_magnitude, 0.0), amp)
    phase = rng.uniform(0, 2 * np.pi, size=shape[1:])
    vals = amp * np.exp(1j * phase)
    if model.noise_sigma > 0:
        vals = vals + model.noise_sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return vals.astype(np.complex64)


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------

def _actors(scene: SceneSpec, rng):
    if scene.actors is not None:
        semis = [tuple(a.semi_axes) for a in scene.actors]
        pos = [_walk_explicit(a, scene) for a in scene.actors]
        return semis, pos
    if scene.persons_count not in (0, 1, 2, 3):
        raise ParameterError(f"persons_count must be in 0..3, got {scene.persons_count}")
    semis, pos = [], []
    (ry0, ry1), (rx0, rx1) = scene.semi_axis_range
    for _ in range(scene.persons_count):
        semi = (rng.uniform(ry0, ry1), rng.uniform(rx0, rx1))
        speed = rng.uniform(*scene.speed_range)
        semis.append(semi)
        pos.append(_walk_random(semi, speed, scene, rng))
    return semis, pos


def simulate(scene: SceneSpec, csi_model: CsiModel = CsiModel(), csi_rate_hz: float = 37.5,
             out_dir=None, m: int = 1, name: str = "rec") -> Recording:
    """Simulate one recording; optionally write it as a dataset directory.

    Raises:
        ParameterError: ``csi_rate_hz < m * fps``, actors leaving the frame,
            or a frame size not tiled by the block size.
    """
    h, w = scene.frame_hw
    bs = scene.block_size
    if h % bs or w % bs:
        raise ParameterError(f"frame {scene.frame_hw} not divisible by block_size {bs}")
    if csi_rate_hz < m * scene.fps:
        raise ParameterError(f"csi_rate_hz={csi_rate_hz} < m*fps={m * scene.fps}")
    rng = np.random.default_rng(scene.seed)
    semis, pos_list = _actors(scene, rng)
    n_act = len(semis)
    positions = np.stack(pos_list) if n_act else np.zeros((0, scene.n_frames, 2))
    velocities = np.zeros_like(positions)
    velocities[:, 1:] = np.diff(positions, axis=1)

    ftimes = frame_times(scene.n_frames, scene.fps)
    period = Fraction(10 ** 6) / Fraction(scene.fps)
    n_rec = int(Fraction(scene.n_frames) * period * Fraction(csi_rate_hz) / 10 ** 6)
    ctimes = csi_times(n_rec, csi_rate_hz)
    rec_frame = np.searchsorted(ftimes, ctimes, side="right") - 1

    gt = np.zeros((scene.n_frames, h, w), dtype=np.uint8)
    fields = []
    for f in range(scene.n_frames):
        lab = rasterize(scene.frame_hw, positions[:, f], semis)
        gt[f] = lab > 0
        vel_dxdy = velocities[:, f, ::-1]
        blocks = block_motion(lab, vel_dxdy, bs, scene.min_block_coverage)
        fields.append(MotionField(f, f // scene.gop_length, blocks, bs))

    csi_rng = np.random.default_rng([scene.seed, 1])
    clean = csi_clean_amplitudes(csi_model, scene.frame_hw, positions, velocities, rec_frame,
                                 ctimes / 1e6, csi_rng)
    values = corrupt(clean, csi_model, csi_rng)

    rec = Recording(scene, csi_model, csi_rate_hz, ftimes, ctimes, values, clean, fields, gt,
                    positions, velocities, name=name)
    if out_dir is not None:
        write_recording(rec, out_dir)
    return rec


def _manifest(rec: Recording):
    scene = asdict(rec.scene)
    return {
        "name": rec.name,
        "frame_count": rec.n_frames,
        "fps": rec.scene.fps,
        "frame_hw": list(rec.scene.frame_hw),
        "block_size": rec.scene.block_size,
        "gop_length": rec.scene.gop_length,
        "csi_dims": list(rec.csi_model.dims),
        "csi_rate_hz": rec.csi_rate_hz,
        "seed": rec.scene.seed,
        "persons_count": rec.scene.persons_count if rec.scene.actors is None else len(rec.scene.actors),
        "scene": scene,
        "csi_model": asdict(rec.csi_model),
        "forgery": rec.forgery,
    }


def write_recording(rec: Recording, out_dir):
    out = Path(out_dir)
    (out / "gt_masks").mkdir(parents=True, exist_ok=True)
    write_csi_stream(out / "csi.bin", rec.csi_timestamps_us, rec.csi_values)
    write_mv_sidecar(out / "mv.bin", rec.motion_fields, rec.scene.frame_hw, rec.scene.gop_length)
    for f in range(rec.n_frames):
        write_pgm(out / "gt_masks" / f"{f:06d}.pgm", rec.gt_masks[f])
    np.savez(out / "truth.npz", positions=rec.positions, velocities=rec.velocities,
             csi_clean_amps=rec.csi_clean_amps.astype(np.float32))
    with open(out / "manifest.json", "w") as fh:
        json.dump(_manifest(rec), fh, indent=2, sort_keys=True)
    if rec.forgery is not None:
        with open(out / "forgery.json", "w") as fh:
            json.dump(rec.forgery, fh, indent=2, sort_keys=True)


def load_manifest(rec_dir):
    with open(Path(rec_dir) / "manifest.json") as fh:
        return json.load(fh)


def forge(rec: Recording, mode="shift", offset_frames=7, g=7, interval=None,
          donor: Optional[Recording] = None) -> Recording:
    """Tamper with the visual side of a recording; CSI is left untouched.

    ``shift`` replays the visual stream delayed by ``offset_frames`` over
    ``interval`` (default ``[offset_frames, n)``); ``splice`` pastes the
    donor's visual frames over ``interval``. The returned recording carries
    ``forgery = {"mode", "offset_frames", "interval": [start, stop)}``.
    """
    n = rec.n_frames
    if mode == "shift":
        if offset_frames <= 0 or offset_frames < g:
            raise ParameterError(f"shift offset must be >= g={g} (and > 0), got {offset_frames}")
        a, b = interval if interval is not None else (offset_frames, n)
        if a - offset_frames < 0 or b > n or a >= b:
            raise ParameterError(f"interval {(a, b)} incompatible with offset {offset_frames} on {n} frames")
        src = {f: f - offset_frames for f in range(a, b)}
        src_rec = rec
    elif mode == "splice":
        if donor is None:
            raise ParameterError("splice needs a donor recording")
        a, b = interval if interval is not None else (0, min(n, donor.n_frames))
        if b > donor.n_frames or b > n or a >= b:
            raise ParameterError(f"interval {(a, b)} out of range")
        src = {f: f for f in range(a, b)}
        src_rec = donor
    else:
        raise ParameterError(f"unknown forgery mode {mode!r}")

    fields = [MotionField(fld.frame_index, fld.gop_index,
                          (src_rec.motion_fields[src[fld.frame_index]].blocks.copy()
                           if fld.frame_index in src else fld.blocks.copy()), fld.block_size)
              for fld in rec.motion_fields]
    gt = rec.gt_masks.copy()
    for f, s in src.items():
        gt[f] = src_rec.gt_masks[s]
    annotation = {"mode": mode, "offset_frames": int(offset_frames) if mode == "shift" else 0,
                  "interval": [int(a), int(b)]}
    return Recording(rec.scene, rec.csi_model, rec.csi_rate_hz, rec.frame_times_us,
                     rec.csi_timestamps_us, rec.csi_values, rec.csi_clean_amps, fields, gt,
                     rec.positions, rec.velocities, name=rec.name + f"_{mode}", forgery=annotation)


def load_recording(rec_dir) -> Recording:
    """Inverse of :func:`write_recording` (ground-truth extras are optional)."""
    from .csi import read_csi_arrays

    rec_dir = Path(rec_dir)
    man = load_manifest(rec_dir)
    ts, vals = read_csi_arrays(rec_dir / "csi.bin")
    fields = parse_mv_sidecar(rec_dir / "mv.bin")
    n = man["frame_count"]
    h, w = man["frame_hw"]
    gt_dir = rec_dir / "gt_masks"
    gt = (np.stack([read_pgm(gt_dir / f"{f:06d}.pgm") for f in range(n)])
          if gt_dir.exists() else np.zeros((n, h, w), dtype=np.uint8))
    truth = rec_dir / "truth.npz"
    if truth.exists():
        z = np.load(truth)
        positions, velocities, clean = z["positions"], z["velocities"], z["csi_clean_amps"]
    else:
        positions = velocities = np.zeros((0, n, 2))
        clean = np.abs(vals)
    sc = dict(man["scene"])
    sc["frame_hw"] = tuple(sc["frame_hw"])
    sc["actors"] = None if sc.get("actors") is None else [
        ActorSpec(tuple(a["semi_axes"]), [tuple(p) for p in a["waypoints"]], a["speed"]) for a in sc["actors"]]
    scene = SceneSpec(**{k: (tuple(map(tuple, v)) if k == "semi_axis_range" else
                             tuple(v) if k == "speed_range" else v) for k, v in sc.items()})
    cm = dict(man["csi_model"])
    cm["dims"] = tuple(cm["dims"])
    forgery = man.get("forgery")
    if (rec_dir / "forgery.json").exists():
        with open(rec_dir / "forgery.json") as fh:
            forgery = json.load(fh)
    return Recording(scene, CsiModel(**cm), man["csi_rate_hz"], frame_times(n, man["fps"]), ts, vals,
                     clean, fields, gt, positions, velocities, name=man.get("name", rec_dir.name),
                     forgery=forgery)


def benchmark_scenes(total_frames=1200, persons=(0, 1, 1, 2, 2), seed=0, **scene_kw) -> list[SceneSpec]:
    """Scene list for the standard synthetic benchmark: equal-length recordings
    whose persons counts follow ``persons``."""
    n = total_frames // len(persons)
    return [SceneSpec(n_frames=n, persons_count=p, seed=seed * 1000 + i, **scene_kw)
            for i, p in enumerate(persons)]
