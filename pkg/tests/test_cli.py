import json

import pytest
import yaml

from crossmask.cli import clip_labels_from_annotation, main
from crossmask.pipeline import Verdict

SMALL = ["--m", "2", "--g", "3", "--epochs", "1",
         "--set", "simulate.frame_hw=[32, 48]", "--set", "simulate.csi_dims=[6, 2, 2]",
         "--set", "simulate.total_frames=120", "--set", "simulate.persons=[1, 2]",
         "--set", "split.block_len=10"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    run = tmp_path_factory.mktemp("cli") / "run"
    assert main(["simulate", "--run-dir", str(run)] + SMALL) == 0
    assert main(["train", "--module", "all", "--data", str(run / "data"), "--run-dir", str(run)] + SMALL) == 0
    return run


def test_simulate_writes_run_dir(trained):
    recs = sorted(p.name for p in (trained / "data").iterdir())
    assert len(recs) == 2
    manifest = json.loads((trained / "manifest.json").read_text())
    assert {"command", "argv", "seed", "version", "config_hash", "inputs"} <= set(manifest)
    cfg = yaml.safe_load((trained / "config.resolved").read_text())
    assert cfg["m"] == 2 and cfg["simulate"]["frame_hw"] == [32, 48]
    for name in ("detector", "segmentor", "forgery"):
        assert (trained / "checkpoints" / f"{name}_best.pt").exists()
        assert (trained / "logs" / f"{name}.csv").exists()
    assert set(json.loads((trained / "metrics" / "train.json").read_text())) == {"detector", "segmentor", "forgery"}


def test_preprocess_writes_table(trained, tmp_path):
    assert main(["preprocess", "--data", str(trained / "data"), "--run-dir", str(tmp_path)] + SMALL) == 0
    assert (tmp_path / "preprocessed.npz").exists()


def test_forge_infer_eval_round(trained, tmp_path, capsys):
    rec = next(iter(sorted((trained / "data").iterdir())))
    forged = tmp_path / "forged"
    assert main(["forge", "--rec", str(rec), "--out", str(forged), "--interval", "10", "40",
                 "--run-dir", str(tmp_path / "r1")] + SMALL) == 0
    capsys.readouterr()
    # threshold 0 keeps the gate open and flags every clip
    args = ["infer", "--rec", str(forged), "--checkpoints", str(trained / "checkpoints"),
            "--out", str(tmp_path / "v.jsonl"), "--run-dir", str(tmp_path / "r2"),
            "--set", "pipeline.threshold=0.0"] + SMALL
    assert main(args + ["--fail-on-alert"]) == 3
    summary = json.loads(capsys.readouterr().out)
    assert summary["frames"] == 60 and summary["clips"] == 58 and summary["alerts"] == 58
    assert main(["eval", "--verdicts", str(tmp_path / "v.jsonl"), "--rec", str(forged),
                 "--run-dir", str(tmp_path / "r3")] + SMALL) == 0
    rep = json.loads((tmp_path / "r3" / "metrics" / "eval.json").read_text())
    assert rep["tn"] == 0 and rep["fn"] == 0 and rep["tp"] + rep["fp"] == 58


def test_eval_perfect_verdicts(tmp_path):
    lines = [json.dumps({"clip_start": s, "score": 0.9 if s % 2 else 0.1, "forged": bool(s % 2), "latency_us": 5})
             for s in range(8)]
    (tmp_path / "v.jsonl").write_text("\n".join(lines) + "\n")
    (tmp_path / "l.jsonl").write_text("\n".join(json.dumps({"clip_start": s, "forged": s % 2}) for s in range(8)))
    assert main(["eval", "--verdicts", str(tmp_path / "v.jsonl"), "--labels", str(tmp_path / "l.jsonl"),
                 "--run-dir", str(tmp_path / "run")]) == 0
    rep = json.loads((tmp_path / "run" / "metrics" / "eval.json").read_text())
    assert (rep["acc"], rep["fpr"], rep["tpr"]) == (1.0, 0.0, 1.0)


@pytest.mark.parametrize("argv", [
    ["simulate", "--set", "signal.lamda=1"],
    ["simulate", "--set", "m=five"],
    ["eval"],
    ["infer", "--rec", "/nonexistent/rec"],
    ["ablate", "--param", "g", "--values", "3,x"],
])
def test_bad_input_exits_2(argv, tmp_path, capsys):
    assert main(argv + ["--run-dir", str(tmp_path / "run")]) == 2
    assert "error:" in capsys.readouterr().err


def test_bad_config_file_exits_2(tmp_path):
    (tmp_path / "c.yaml").write_text("g: 7\ndataset: {min_offset: 2}\n")
    assert main(["simulate", "--config", str(tmp_path / "c.yaml"), "--run-dir", str(tmp_path / "run")]) == 2


def test_clip_labels_from_annotation():
    vs = [Verdict(s, 0.0, False, 0) for s in range(6)]
    assert clip_labels_from_annotation(vs, (4, 6), g=2) == [0, 0, 0, 1, 1, 1]
