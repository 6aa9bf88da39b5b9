"""Command-line entry point: ``crossmask <subcommand> [options]``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import RunConfig, apply_overrides, config_hash, dump_config, from_dict, load_config, to_dict
from .errors import ConfigError, CrossmaskError

log = logging.getLogger("crossmask")

EXIT_OK, EXIT_INPUT, EXIT_ALERT = 0, 2, 3


# --------------------------------------------------------------------------
# run directory bookkeeping
# --------------------------------------------------------------------------

def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_hashes(paths):
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(x for x in p.rglob("*") if x.is_file()):
                out[str(f)] = file_hash(f)
        elif p.exists():
            out[str(p)] = file_hash(p)
    return out


def init_run_dir(run_dir, cfg: RunConfig, command, argv, inputs=()):
    run = Path(run_dir)
    for sub in ("checkpoints", "logs", "metrics"):
        (run / sub).mkdir(parents=True, exist_ok=True)
    (run / "config.resolved").write_text(dump_config(cfg))
    manifest = {"command": command, "argv": list(argv), "seed": cfg.seed, "version": _version(),
                "config_hash": config_hash(cfg), "inputs": _input_hashes(inputs)}
    (run / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return run


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else from_dict({})
    cfg = apply_overrides(cfg, args.set)
    flat = {k: getattr(args, k, None) for k in ("seed", "m", "g", "epochs")}
    data = to_dict(cfg)
    data.update({k: v for k, v in flat.items() if v is not None})
    return from_dict(data)


def _require(path, what):
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} {path} not found")
    return Path(path)


def _recording_dirs(path):
    path = _require(path, "data")
    if (path / "manifest.json").exists():
        return [path]
    dirs = sorted(p.parent for p in path.glob("*/manifest.json"))
    if not dirs:
        raise FileNotFoundError(f"no recordings (manifest.json) under {path}")
    return dirs


def _load_recordings(path):
    from .synth import load_recording
    return [load_recording(d) for d in _recording_dirs(path)]


def _cfg_for_recording(cfg: RunConfig, rec) -> RunConfig:
    """Signal-side settings follow the recording where it disagrees with the config."""
    data = to_dict(cfg)
    data["simulate"].update(fps=float(rec.scene.fps), frame_hw=list(rec.scene.frame_hw),
                            csi_dims=list(rec.csi_model.dims), block_size=rec.scene.block_size)
    return from_dict(data)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_simulate(args, cfg):
    from .evaluation import simulate_benchmark

    run = init_run_dir(args.run_dir, cfg, "simulate", args.argv)
    recs = simulate_benchmark(cfg, run / "data")
    print(json.dumps({"recordings": [str(run / "data" / r.name) for r in recs]}, indent=2))
    return EXIT_OK


def cmd_forge(args, cfg):
    from .synth import forge, load_recording, write_recording

    rec = load_recording(_require(args.rec, "recording"))
    donor = load_recording(_require(args.donor, "donor recording")) if args.donor else None
    interval = tuple(args.interval) if args.interval else None
    forged = forge(rec, args.mode, args.offset, cfg.g, interval, donor)
    out = Path(args.out)
    write_recording(forged, out)
    print(json.dumps({"out": str(out), "forgery": forged.forgery}))
    return EXIT_OK


def _save_table(path, table):
    np.savez_compressed(path, recording=np.array(table.recording), frame_index=table.frame_index,
                        windows=table.windows, masks=table.masks, labels=table.labels,
                        m=np.array(table.m), dropped=np.array(table.dropped))


def load_table(path):
    from .dataset import FrameTable

    z = np.load(_require(path, "preprocessed table"))
    return FrameTable(z["recording"].tolist(), z["frame_index"], z["windows"], z["masks"], z["labels"],
                      int(z["m"]), int(z["dropped"]))


def cmd_preprocess(args, cfg):
    from .evaluation import preprocess_all

    run = init_run_dir(args.run_dir, cfg, "preprocess", args.argv, [args.data])
    recs = _load_recordings(args.data)
    table = preprocess_all(recs, cfg)
    out = run / "preprocessed.npz"
    _save_table(out, table)
    print(json.dumps({"out": str(out), "frames": len(table), "moving": int(table.labels.sum()),
                      "dropped": int(table.dropped)}))
    return EXIT_OK


def cmd_train(args, cfg):
    import torch
    from .evaluation import (_moving, make_splits, preprocess_all, segment, train_detector, train_forgery,
                             train_segmentor)
    from .models import load_checkpoint

    run = init_run_dir(args.run_dir, cfg, "train", args.argv, [p for p in (args.data, args.table) if p])
    torch.use_deterministic_algorithms(True)
    if args.table:
        table = load_table(args.table)
    elif args.data:
        table = preprocess_all(_load_recordings(args.data), cfg)
    else:
        raise ConfigError("train needs --data (recordings) or --table (preprocessed.npz)")
    if table.m != cfg.m:
        raise ConfigError(f"table was windowed with m={table.m} but config has m={cfg.m}")
    splits = make_splits(table.keys, cfg)
    modules = ["detector", "segmentor", "forgery"] if args.module == "all" else [args.module]
    report = {}
    for module in modules:
        if module == "detector":
            res, rep = train_detector(table, splits, cfg, run)
            report["detector"] = rep.to_dict()
        elif module == "segmentor":
            res = train_segmentor(table, splits, cfg, run)
            report["segmentor"] = {"best_epoch": res.best_epoch}
        else:
            hw = tuple(cfg.simulate.frame_hw)
            seg_path = _require(run / "checkpoints" / "segmentor_best.pt", "segmentor checkpoint")
            seg, _ = load_checkpoint(seg_path, {"module": "segmentor", "m": cfg.m})
            probs = {n: segment(seg, table, _moving(table, getattr(splits, n)), hw) for n in ("train", "val", "test")}
            res, rep = train_forgery(table, splits, probs["train"], probs["test"], probs["val"], cfg, out_dir=run)
            report["forgery"] = rep.to_dict()
    (run / "metrics" / "train.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _stream_paths(args):
    if args.rec:
        rec = _require(args.rec, "recording")
        return rec / "csi.bin", rec / "mv.bin"
    if not (args.csi and args.mv):
        raise ConfigError("infer needs --rec or both --csi and --mv")
    return _require(args.csi, "CSI stream"), _require(args.mv, "motion-vector sidecar")


def cmd_infer(args, cfg):
    from .pipeline import load_pipeline, run_stream

    csi_path, mv_path = _stream_paths(args)
    run = init_run_dir(args.run_dir, cfg, "infer", args.argv, [csi_path, mv_path])
    ckdir = _require(args.checkpoints or run / "checkpoints", "checkpoint directory")
    pipe = load_pipeline(ckdir, cfg, args.tag)
    out = Path(args.out) if args.out else run / "logs" / "verdicts.jsonl"
    res = run_stream(csi_path, mv_path, pipe, cfg, out)
    summary = {"verdicts": str(out), "frames": res.frames, "clips": len(res.verdicts),
               "alerts": sum(v.forged for v in res.verdicts), "calls": res.calls,
               "fps": {**res.fps, "overall": res.overall_fps}}
    (run / "metrics" / "infer.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.fail_on_alert and summary["alerts"] > 0:
        return EXIT_ALERT
    return EXIT_OK


def clip_labels_from_annotation(verdicts, interval, g):
    """A clip is forged when any of its ``g`` frames lies in the forged interval."""
    a, b = interval
    return [int(v.clip_start < b and v.clip_start + g > a) for v in verdicts]


def cmd_eval(args, cfg):
    from .evaluation import confusion, run_benchmark
    from .pipeline import read_verdicts

    if args.synthetic:
        run = init_run_dir(args.run_dir, cfg, "eval", args.argv)
        st = run_benchmark(cfg, run, write_data=args.write_data)
        print((run / "metrics" / "metrics.json").read_text())
        return EXIT_OK
    if not args.verdicts:
        raise ConfigError("eval needs --verdicts (with --labels or --rec) or --synthetic")
    vpath = _require(args.verdicts, "verdict log")
    run = init_run_dir(args.run_dir, cfg, "eval", args.argv, [vpath] + ([args.labels] if args.labels else []))
    verdicts = read_verdicts(vpath)
    if args.labels:
        with open(_require(args.labels, "labels file")) as fh:
            lab = {int(d["clip_start"]): int(d["forged"]) for d in map(json.loads, filter(str.strip, fh))}
        missing = [v.clip_start for v in verdicts if v.clip_start not in lab]
        if missing:
            raise ConfigError(f"labels missing for clip starts {missing[:5]}")
        labels = [lab[v.clip_start] for v in verdicts]
    elif args.rec:
        from .synth import load_manifest
        rec_dir = _require(args.rec, "recording")
        ann = load_manifest(rec_dir).get("forgery")
        if (rec_dir / "forgery.json").exists():
            ann = json.loads((rec_dir / "forgery.json").read_text())
        interval = ann["interval"] if ann else (0, 0)
        labels = clip_labels_from_annotation(verdicts, interval, cfg.g)
    else:
        raise ConfigError("eval --verdicts needs --labels or --rec")
    rep = confusion([int(v.forged) for v in verdicts], labels)
    (run / "metrics" / "eval.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    print(rep.table("forgery verdicts"))
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_bench(args, cfg):
    from .evaluation import bench, preprocess_all
    from .pipeline import load_pipeline
    from .synth import SceneSpec, simulate

    run = init_run_dir(args.run_dir, cfg, "bench", args.argv)
    ckdir = _require(args.checkpoints or run / "checkpoints", "checkpoint directory")
    pipe = load_pipeline(ckdir, cfg, args.tag)
    s = cfg.simulate
    scene = SceneSpec(frame_hw=tuple(s.frame_hw), fps=s.fps, n_frames=max(cfg.bench.frames, cfg.g) + 4,
                      persons_count=1, block_size=s.block_size, gop_length=s.gop_length, seed=cfg.seed + 99)
    table = preprocess_all([simulate(scene, csi_rate_hz=s.csi_rate_hz, name="bench")], cfg)
    n = min(cfg.bench.frames, len(table))
    out = bench(pipe, table.windows[:n], table.masks[:n], cfg.bench.warmup, cfg.bench.iters)
    (run / "metrics" / "bench.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args, cfg):
    from .evaluation import ablate, ablation_trend

    run = init_run_dir(args.run_dir, cfg, "ablate", args.argv)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be comma-separated integers, got {args.values!r}") from None
    rows = ablate(args.param, values, cfg, run)
    for r in rows:
        print(f"{r['param']}={r['value']}: acc {r['acc']} fpr {r['fpr']} tpr {r['tpr']}")
    print(f"non-decreasing accuracy: {ablation_trend(rows)}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "forge": cmd_forge, "preprocess": cmd_preprocess, "train": cmd_train,
            "infer": cmd_infer, "eval": cmd_eval, "bench": cmd_bench, "ablate": cmd_ablate}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set train.detector.lr0=1e-4")
    common.add_argument("--run-dir", default="run", help="output directory (default: ./run)")
    common.add_argument("--seed", type=int)
    common.add_argument("--m", type=int)
    common.add_argument("--g", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="crossmask", description="CSI/video cross-modal forgery detection")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write the synthetic benchmark recordings")

    f = sub.add_parser("forge", parents=[common], help="tamper with a recording's visual side")
    f.add_argument("--rec", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--mode", choices=("shift", "splice"), default="shift")
    f.add_argument("--offset", type=int, default=None)
    f.add_argument("--interval", type=int, nargs=2, metavar=("START", "STOP"))
    f.add_argument("--donor")

    pp = sub.add_parser("preprocess", parents=[common], help="denoise, window and pseudo-label recordings")
    pp.add_argument("--data", required=True, help="recording directory or a directory of recordings")

    t = sub.add_parser("train", parents=[common], help="train one module or all three")
    t.add_argument("--module", choices=("detector", "segmentor", "forgery", "all"), required=True)
    t.add_argument("--data")
    t.add_argument("--table", help="preprocessed.npz from the preprocess subcommand")

    i = sub.add_parser("infer", parents=[common], help="gated streaming inference over a recording")
    i.add_argument("--rec")
    i.add_argument("--csi")
    i.add_argument("--mv")
    i.add_argument("--checkpoints")
    i.add_argument("--tag", default="best", choices=("best", "final"))
    i.add_argument("--out")
    i.add_argument("--fail-on-alert", action="store_true")

    e = sub.add_parser("eval", parents=[common], help="score a verdict log or run the synthetic benchmark")
    e.add_argument("--verdicts")
    e.add_argument("--labels", help="JSON lines {clip_start, forged}")
    e.add_argument("--rec", help="recording whose forgery annotation gives the labels")
    e.add_argument("--synthetic", action="store_true", help="simulate, train and test end to end")
    e.add_argument("--write-data", action="store_true", help="with --synthetic, also write the recordings")

    b = sub.add_parser("bench", parents=[common], help="per-module throughput")
    b.add_argument("--checkpoints")
    b.add_argument("--tag", default="best", choices=("best", "final"))

    a = sub.add_parser("ablate", parents=[common], help="forgery accuracy as a function of m or g")
    a.add_argument("--param", choices=("m", "g"), required=True)
    a.add_argument("--values", required=True, help="comma-separated integers")
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "forge" and args.offset is None:
            args.offset = cfg.g
        return COMMANDS[args.command](args, cfg)
    except (CrossmaskError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
