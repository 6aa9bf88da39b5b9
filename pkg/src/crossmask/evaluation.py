"""Metrics, throughput benchmarking, the synthetic end-to-end benchmark and ablations."""
from __future__ import annotations

import csv
import json
import logging
import os
import platform
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .dataset import FrameTable, SplitSpec, forgery_pairs, preprocess_recording, split_indices
from .errors import ParameterError, ValidationError
from .models import (DetectorConfig, DetectorNet, ForgeryConfig, ForgeryNet, SegmentorConfig, SegmentorNet,
                     make_fingerprint, tile_to_working_size)
from .mvmask import MaskParams, centroid
from .training import ClipData, DetectorData, SegmentorData, predict_logits, train_module

log = logging.getLogger(__name__)

UNDEFINED = "undefined"


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Confusion counts with positive = forged (or moving, for the detector).

    Rates whose denominator is zero are ``None`` and serialised as ``"undefined"``.
    """
    tp: int
    fp: int
    tn: int
    fn: int
    acc: Optional[float]
    fpr: Optional[float]
    tpr: Optional[float]
    fps: dict = field(default_factory=dict)

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self, with_fps=False):
        out = {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}
        for k in ("acc", "fpr", "tpr"):
            v = getattr(self, k)
            out[k] = UNDEFINED if v is None else v
        if with_fps:
            out["fps"] = dict(self.fps)
        return out

    @classmethod
    def from_dict(cls, d):
        rate = lambda v: None if v == UNDEFINED else float(v)
        return cls(int(d["tp"]), int(d["fp"]), int(d["tn"]), int(d["fn"]),
                   rate(d["acc"]), rate(d["fpr"]), rate(d["tpr"]), dict(d.get("fps", {})))

    def table(self, title="metrics"):
        pct = lambda v: UNDEFINED if v is None else f"{100 * v:.2f}%"
        lines = [f"{title}", f"  TP {self.tp:6d}  FP {self.fp:6d}", f"  FN {self.fn:6d}  TN {self.tn:6d}",
                 f"  Acc {pct(self.acc)}  FPR {pct(self.fpr)}  TPR {pct(self.tpr)}"]
        for k, v in self.fps.items():
            lines.append(f"  {k} FPS {v:.1f}")
        return "\n".join(lines)


def _ratio(num, den):
    return num / den if den > 0 else None


def confusion(preds, labels) -> MetricsReport:
    """Exact confusion counts and Acc/FPR/TPR for 0/1 predictions against 0/1 labels."""
    p = np.asarray(preds)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1:
        raise ValidationError(f"preds and labels must be equal-length 1-D sequences, got {p.shape} and {y.shape}")
    if p.size == 0:
        raise ValidationError("confusion of an empty sequence")
    for name, a in (("preds", p), ("labels", y)):
        if not np.all((a == 0) | (a == 1)):
            raise ValidationError(f"{name} must be 0/1")
    p, y = p.astype(bool), y.astype(bool)
    tp = int(np.sum(p & y))
    fp = int(np.sum(p & ~y))
    tn = int(np.sum(~p & ~y))
    fn = int(np.sum(~p & y))
    return MetricsReport(tp, fp, tn, fn, _ratio(tp + tn, tp + fp + tn + fn), _ratio(fp, fp + tn), _ratio(tp, tp + fn))


# --------------------------------------------------------------------------
# throughput
# --------------------------------------------------------------------------

def hardware_descriptor():
    return {"machine": platform.machine(), "processor": platform.processor() or platform.machine(),
            "cpu_count": os.cpu_count(), "torch_threads": torch.get_num_threads(),
            "python": platform.python_version(), "torch": torch.__version__}


@torch.no_grad()
def bench(pipeline, windows, visual_masks, warmup=2, iters=10):
    """Per-module frames per second (median over ``iters`` timed passes).

    ``windows`` is an (N, m*K, tx, rx) array and ``visual_masks`` an (N, H, W)
    array; every module is timed on all N frames (the forgery detector on
    the N - g + 1 stride-1 clips).
    """
    if iters < 1:
        raise ParameterError("iters must be >= 1")
    windows = np.asarray(windows, dtype=np.float32)
    n = len(windows)
    if n < pipeline.g:
        raise ParameterError(f"need at least g={pipeline.g} frames to bench, got {n}")
    m = pipeline.detector.cfg.m
    xd = torch.from_numpy(windows.reshape(n, m, -1, windows.shape[-2] * windows.shape[-1]))
    xs = tile_to_working_size(torch.from_numpy(windows), pipeline.hw).contiguous()
    probs = torch.sigmoid(pipeline.segmentor(xs[:1]))
    wl = probs.expand(n, -1, -1).numpy()
    vis = np.asarray(visual_masks, dtype=np.float32)
    starts = np.arange(n - pipeline.g + 1)
    plan = np.stack([starts, starts, np.zeros_like(starts)], axis=1)
    clips = ClipData(vis, wl, plan, pipeline.g)

    def run_det():
        for i in range(n):
            pipeline.detector(xd[i:i + 1])
        return n

    def run_seg():
        for i in range(n):
            pipeline.segmentor(xs[i:i + 1])
        return n

    def run_forg():
        for i in range(len(plan)):
            x, _ = clips.batch(np.array([i]))
            pipeline.forgery(x)
        return len(plan)

    out = {}
    for name, fn in (("detector", run_det), ("segmentor", run_seg), ("forgery", run_forg)):
        for _ in range(warmup):
            fn()
        rates = []
        for _ in range(iters):
            t0 = time.perf_counter()
            count = fn()
            rates.append(count / (time.perf_counter() - t0))
        out[name] = statistics.median(rates)
    return {"fps": out, "hardware": hardware_descriptor(), "frames": n, "warmup": warmup, "iters": iters}


# --------------------------------------------------------------------------
# synthetic end-to-end benchmark
# --------------------------------------------------------------------------

def _dims(cfg):
    return tuple(cfg.simulate.csi_dims)


def _hw(cfg):
    return tuple(cfg.simulate.frame_hw)


def simulate_benchmark(cfg, out_dir=None):
    """Recordings of the standard benchmark (persons counts from ``cfg.simulate.persons``)."""
    from .synth import CsiModel, SceneSpec, benchmark_scenes, simulate, write_recording

    s = cfg.simulate
    # actor sizes and speeds are tuned for 96-row frames; scale them with the frame
    k = _hw(cfg)[0] / 96
    size = {}
    if k != 1:
        d = SceneSpec()
        size = {"semi_axis_range": tuple((a * k, b * k) for a, b in d.semi_axis_range),
                "speed_range": tuple(v * k for v in d.speed_range)}
    scenes = benchmark_scenes(s.total_frames, tuple(s.persons), seed=cfg.seed, frame_hw=_hw(cfg), fps=s.fps,
                              block_size=s.block_size, gop_length=s.gop_length, **size)
    model = CsiModel(dims=_dims(cfg), noise_sigma=s.noise_sigma, outlier_rate=s.outlier_rate)
    recs = []
    for i, sc in enumerate(scenes):
        rec = simulate(sc, model, s.csi_rate_hz, name=f"rec{i:02d}_p{sc.persons_count}")
        if out_dir is not None:
            write_recording(rec, Path(out_dir) / rec.name)
        recs.append(rec)
    return recs


def preprocess_all(recs, cfg, m=None) -> FrameTable:
    sig = cfg.signal
    params = MaskParams(sig.lam, sig.tau, sig.min_area_frac)
    return FrameTable.concat([
        preprocess_recording(r, m=cfg.m if m is None else m, hampel_window=sig.hampel_window,
                             hampel_sigmas=sig.hampel_sigmas, mask_params=params, eta=sig.eta)
        for r in recs])


@dataclass
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def make_splits(keys, cfg) -> Splits:
    """Contiguous-block train / validation / test positions over all frames."""
    sp = cfg.split
    tr, te = split_indices(keys, SplitSpec(sp.train_frac, cfg.seed, mode=sp.mode, block_len=sp.block_len))
    if sp.val_frac > 0:
        sub = [keys[i] for i in tr]
        inner = 1 - sp.val_frac / sp.train_frac
        a, b = split_indices(sub, SplitSpec(inner, cfg.seed + 1, mode=sp.mode, block_len=sp.block_len))
        tr, va = tr[a], tr[b]
    else:
        va = np.zeros(0, dtype=np.int64)
    return Splits(tr, va, te)


def _moving(table, idx):
    idx = np.asarray(idx, dtype=np.int64)
    return idx[table.labels[idx] == 1]


def _seg_data(table, idx, hw):
    return SegmentorData(table.windows[idx], table.masks[idx], hw)


def _fingerprint(module, net, cfg, m=None, g=None):
    return make_fingerprint(module, net.cfg, m=cfg.m if m is None else m, g=cfg.g if g is None else g,
                            dims=_dims(cfg), hw=_hw(cfg), seed=cfg.seed)


def train_detector(table, splits, cfg, out_dir=None):
    k, ntx, nrx = _dims(cfg)
    torch.manual_seed(cfg.seed)
    net = DetectorNet(DetectorConfig(m=table.m, k=k, n_links=ntx * nrx))
    mk = lambda idx: DetectorData(table.windows[idx], table.labels[idx], table.m)
    res = train_module(cfg.train_config("detector"), net, mk(splits.train), mk(splits.val), out_dir,
                       _fingerprint("detector", net, cfg, m=table.m))
    test = mk(splits.test)
    preds = (predict_logits(res.best, test) >= 0).numpy().astype(int)
    return res, confusion(preds, test.labels().astype(int))


def train_segmentor(table, splits, cfg, out_dir=None):
    k = _dims(cfg)[0]
    torch.manual_seed(cfg.seed)
    net = SegmentorNet(SegmentorConfig(in_channels=table.m * k, hw=_hw(cfg)))
    res = train_module(cfg.train_config("segmentor"), net, _seg_data(table, _moving(table, splits.train), _hw(cfg)),
                       _seg_data(table, _moving(table, splits.val), _hw(cfg)), out_dir,
                       _fingerprint("segmentor", net, cfg, m=table.m))
    return res


def segment(net, table, idx, hw):
    """Segmentor probabilities (len(idx), H, W) as float32."""
    return torch.sigmoid(predict_logits(net, _seg_data(table, idx, hw))).numpy().astype(np.float32)


def localization(probs, table, idx, recs, radius):
    """Centroid hit rates of thresholded predictions against ground-truth masks."""
    by_name = {r.name: r for r in recs}
    hits = {"all": [], "single": []}
    for p, i in zip(probs, idx):
        rec = by_name[table.recording[i]]
        gt = centroid(rec.gt_masks[int(table.frame_index[i])])
        if gt is None:
            continue
        pc = centroid(p >= 0.5)
        ok = pc is not None and float(np.hypot(pc[0] - gt[0], pc[1] - gt[1])) <= radius
        hits["all"].append(ok)
        if rec.scene.persons_count == 1:
            hits["single"].append(ok)
    rate = lambda h: float(np.mean(h)) if h else UNDEFINED
    return {"centroid_radius_px": radius, "hit_rate_all": rate(hits["all"]), "frames_all": len(hits["all"]),
            "hit_rate_single": rate(hits["single"]), "frames_single": len(hits["single"])}


def train_forgery(table, splits, seg_train_probs, seg_test_probs, seg_val_probs, cfg, g=None, out_dir=None):
    """Train and test the forgery detector on clips of moving frames.

    ``seg_*_probs`` are segmentor outputs aligned with the moving frames of
    each split.
    """
    g = cfg.g if g is None else g
    min_off = max(cfg.min_offset, g)
    parts = {}
    for name, idx, probs, seed in (("train", splits.train, seg_train_probs, cfg.seed),
                                   ("val", splits.val, seg_val_probs, cfg.seed + 1),
                                   ("test", splits.test, seg_test_probs, cfg.seed + 2)):
        mv = _moving(table, idx)
        keys = [(table.recording[i], int(table.frame_index[i])) for i in mv]
        plan = forgery_pairs(keys, g, cfg.dataset.forgery_frac, min_off, seed)
        parts[name] = ClipData(table.masks[mv], probs, plan, g)
    torch.manual_seed(cfg.seed)
    net = ForgeryNet(ForgeryConfig(g=g, hw=_hw(cfg)))
    res = train_module(cfg.train_config("forgery"), net, parts["train"], parts["val"], out_dir,
                       _fingerprint("forgery", net, cfg, m=table.m, g=g))
    test = parts["test"]
    preds = (predict_logits(res.best, test) >= 0).numpy().astype(int)
    return res, confusion(preds, test.labels().astype(int))


def out_of_fold_probs(table, idx, cfg, folds):
    """Segmentor outputs for moving frames of ``idx``, each predicted by a
    segmentor that did not train on it (contiguous-block folds)."""
    mv = _moving(table, idx)
    keys = [(table.recording[i], int(table.frame_index[i])) for i in mv]
    probs = np.zeros((len(mv),) + _hw(cfg), dtype=np.float32)
    fold_of = np.zeros(len(mv), dtype=np.int64)
    blocks = sorted({(r, f // cfg.split.block_len) for r, f in keys})
    perm = np.random.default_rng(cfg.seed + 7).permutation(len(blocks))
    block_fold = {b: int(perm[j]) % folds for j, b in enumerate(blocks)}
    for j, (r, f) in enumerate(keys):
        fold_of[j] = block_fold[(r, f // cfg.split.block_len)]
    for k in range(folds):
        tr, te = mv[fold_of != k], mv[fold_of == k]
        if len(te) == 0:
            continue
        sub = Splits(tr, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        res = train_segmentor(table, sub, cfg)
        probs[fold_of == k] = segment(res.best, table, te, _hw(cfg))
    return probs


@dataclass
class BenchmarkState:
    """Everything a benchmark run produced, kept for ablations and follow-up checks."""
    cfg: object
    recs: list
    table: FrameTable
    splits: Splits
    metrics: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    seg_probs: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)


def _configure_torch():
    torch.use_deterministic_algorithms(True)


def run_benchmark(cfg, out_dir=None, recs=None, modules=("detector", "segmentor", "forgery"), m=None,
                  write_data=False) -> BenchmarkState:
    """Simulate, preprocess and train all modules on the standard synthetic benchmark.

    Deterministic metrics go to ``metrics/metrics.json`` and wall-clock numbers
    to ``metrics/timing.json`` under ``out_dir`` (when given).
    """
    _configure_torch()
    out = Path(out_dir) if out_dir is not None else None
    t0 = time.perf_counter()
    if recs is None:
        recs = simulate_benchmark(cfg, out / "data" if (out is not None and write_data) else None)
    table = preprocess_all(recs, cfg, m)
    splits = make_splits(table.keys, cfg)
    st = BenchmarkState(cfg, recs, table, splits)
    st.timing["prepare_s"] = time.perf_counter() - t0
    st.metrics["data"] = {"frames": len(table), "moving_frames": int(table.labels.sum()),
                          "recordings": [r.name for r in recs], "m": table.m,
                          "train": len(splits.train), "val": len(splits.val), "test": len(splits.test),
                          "dropped_frames": int(table.dropped)}
    hw = _hw(cfg)
    if "detector" in modules:
        t = time.perf_counter()
        res, rep = train_detector(table, splits, cfg, out)
        st.results["detector"] = res
        st.metrics["detector"] = rep.to_dict()
        st.metrics["detector"]["best_epoch"] = res.best_epoch
        st.metrics["detector"]["train_loss_first"] = res.log[0]["train_loss"]
        st.metrics["detector"]["train_loss_last"] = res.log[-1]["train_loss"]
        st.timing["detector_s"] = time.perf_counter() - t
    if "segmentor" in modules or "forgery" in modules:
        t = time.perf_counter()
        res = train_segmentor(table, splits, cfg, out)
        st.results["segmentor"] = res
        for name in ("train", "val", "test"):
            st.seg_probs[name] = segment(res.best, table, _moving(table, getattr(splits, name)), hw)
        mv_test = _moving(table, splits.test)
        st.metrics["segmentor"] = localization(st.seg_probs["test"], table, mv_test, recs,
                                               2 * cfg.simulate.block_size)
        st.metrics["segmentor"].update(best_epoch=res.best_epoch, train_loss_first=res.log[0]["train_loss"],
                                       train_loss_last=res.log[-1]["train_loss"])
        st.timing["segmentor_s"] = time.perf_counter() - t
    if cfg.dataset.crossfit_folds > 1 and "forgery" in modules:
        t = time.perf_counter()
        st.seg_probs["train_oof"] = out_of_fold_probs(table, splits.train, cfg, cfg.dataset.crossfit_folds)
        st.timing["crossfit_s"] = time.perf_counter() - t
    if "forgery" in modules:
        st.metrics["forgery"] = forgery_stage(st, cfg.g, out)
    if out is not None:
        write_metrics(st, out)
    return st


def forgery_stage(st: BenchmarkState, g, out=None):
    t = time.perf_counter()
    train_probs = st.seg_probs.get("train_oof", st.seg_probs["train"])
    res, rep = train_forgery(st.table, st.splits, train_probs, st.seg_probs["test"], st.seg_probs["val"],
                             st.cfg, g=g, out_dir=out)
    st.results[f"forgery_g{g}"] = res
    if g == st.cfg.g:
        st.results["forgery"] = res
    st.timing[f"forgery_g{g}_s"] = time.perf_counter() - t
    d = rep.to_dict()
    d.update(g=g, best_epoch=res.best_epoch, train_loss_first=res.log[0]["train_loss"],
             train_loss_last=res.log[-1]["train_loss"])
    return d


def write_metrics(st: BenchmarkState, out):
    from .config import config_hash

    mdir = Path(out) / "metrics"
    mdir.mkdir(parents=True, exist_ok=True)
    body = {"config_hash": config_hash(st.cfg), "seed": st.cfg.seed, **st.metrics}
    (mdir / "metrics.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    (mdir / "timing.json").write_text(json.dumps(st.timing, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# ablation
# --------------------------------------------------------------------------

ABLATION_FIELDS = ("param", "value", "acc", "fpr", "tpr")


def ablate(param, values, cfg, out_dir=None, base: Optional[BenchmarkState] = None):
    """Forgery-detector test metrics for each value of ``m`` or ``g``.

    Everything else is seeded identically. ``g`` only retrains the forgery
    detector on a shared segmentor; ``m`` re-windows the CSI and retrains the
    segmentor and forgery detector from scratch. ``base`` (a finished
    :func:`run_benchmark` state at the configured ``m``) is reused where it
    already covers a row.
    """
    if param not in ("m", "g"):
        raise ParameterError(f"ablation parameter must be 'm' or 'g', got {param!r}")
    values = [int(v) for v in values]
    if not values:
        raise ParameterError("no ablation values given")
    _configure_torch()
    rows = []
    recs = base.recs if base is not None else None
    shared = base
    for v in values:
        if param == "g":
            if shared is None:
                shared = run_benchmark(cfg, recs=recs, modules=("segmentor",))
            if base is not None and v == cfg.g and "forgery" in base.metrics:
                met = base.metrics["forgery"]
            else:
                met = forgery_stage(shared, v)
        else:
            if base is not None and v == base.table.m and "forgery" in base.metrics:
                met = base.metrics["forgery"]
            else:
                vcfg = replace(cfg, m=v)
                st = run_benchmark(vcfg, recs=recs, modules=("segmentor", "forgery"), m=v)
                recs = st.recs
                met = st.metrics["forgery"]
        rows.append({"param": param, "value": v, "acc": met["acc"], "fpr": met["fpr"], "tpr": met["tpr"]})
        log.info("ablation %s=%d: acc %s", param, v, met["acc"])
    if out_dir is not None:
        write_ablation(rows, Path(out_dir) / "metrics" / f"ablation_{param}.csv")
    return rows


def write_ablation(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return path


def ablation_trend(rows):
    """``True`` when accuracy is non-decreasing in the ablated value."""
    ordered = sorted(rows, key=lambda r: r["value"])
    accs = [r["acc"] for r in ordered]
    if any(a == UNDEFINED for a in accs):
        return False
    return all(b >= a for a, b in zip(accs, accs[1:]))


# --------------------------------------------------------------------------
# forged-stream check
# --------------------------------------------------------------------------

def forged_stream_rates(verdicts, interval, g):
    """Alert rates over clips entirely inside / entirely outside the forged interval."""
    a, b = interval
    inside = [v.forged for v in verdicts if a <= v.clip_start and v.clip_start + g <= b]
    outside = [v.forged for v in verdicts if v.clip_start + g <= a or v.clip_start >= b]
    rate = lambda xs: float(np.mean(xs)) if xs else UNDEFINED
    return {"alert_rate_forged": rate(inside), "clips_forged": len(inside),
            "alert_rate_genuine": rate(outside), "clips_genuine": len(outside)}
