import numpy as np
import pytest

from crossmask.csi import denoise_amplitudes
from crossmask.dataset import preprocess_recording
from crossmask.errors import ParameterError
from crossmask.mvmask import masks_for_video
from crossmask.synth import (ActorSpec, CsiModel, SceneSpec, benchmark_scenes, forge, frame_times, load_recording,
                             simulate, write_recording)

QUIET = CsiModel(noise_sigma=0.0, outlier_rate=0.0)


def test_frame_times_exact():
    ft = frame_times(4, 7.5)
    assert ft.tolist() == [0, 133333, 266666, 400000]


def test_empty_scene_is_constant_and_motionless():
    rec = simulate(SceneSpec(n_frames=12, persons_count=0, seed=3), QUIET)
    assert rec.gt_masks.sum() == 0
    assert all(np.all(f.blocks == 0) for f in rec.motion_fields)
    amps = np.abs(rec.csi_values)
    np.testing.assert_allclose(amps, np.broadcast_to(amps[0], amps.shape), rtol=1e-6)


def test_horizontal_walker_block_motion():
    actor = ActorSpec(semi_axes=(20.0, 12.0), waypoints=[(48.0, 20.0), (48.0, 110.0)], speed=2.0)
    rec = simulate(SceneSpec(n_frames=10, actors=[actor], seed=0), QUIET)
    for f in rec.motion_fields[1:]:
        moving = np.any(f.blocks != 0, axis=2)
        assert moving.any()
        np.testing.assert_allclose(f.blocks[moving][:, 0], 2.0, atol=1e-9)
        np.testing.assert_allclose(f.blocks[moving][:, 1], 0.0, atol=1e-9)


def test_same_seed_byte_identical(tmp_path):
    sc = SceneSpec(n_frames=16, persons_count=2, seed=11)
    simulate(sc, out_dir=tmp_path / "a")
    simulate(sc, out_dir=tmp_path / "b")
    for name in ("csi.bin", "mv.bin", "manifest.json", "truth.npz", "gt_masks/000005.pgm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csi_rate_precondition():
    with pytest.raises(ParameterError):
        simulate(SceneSpec(n_frames=4), csi_rate_hz=30.0, m=5)


def test_write_load_round_trip(tmp_path):
    rec = simulate(SceneSpec(n_frames=8, persons_count=1, seed=2), name="x")
    write_recording(rec, tmp_path / "x")
    back = load_recording(tmp_path / "x")
    np.testing.assert_array_equal(back.csi_values, rec.csi_values)
    np.testing.assert_array_equal(back.gt_masks, rec.gt_masks)
    assert back.scene == rec.scene
    assert back.name == "x"


def test_forge_shift_annotation_and_content():
    rec = simulate(SceneSpec(n_frames=50, persons_count=1, seed=4))
    with pytest.raises(ParameterError):
        forge(rec, "shift", offset_frames=0, g=7)
    with pytest.raises(ParameterError):
        forge(rec, "shift", offset_frames=5, g=7)
    forged = forge(rec, "shift", offset_frames=10, g=7)
    assert forged.forgery == {"mode": "shift", "offset_frames": 10, "interval": [10, 50]}
    np.testing.assert_array_equal(forged.motion_fields[30].blocks, rec.motion_fields[20].blocks)
    np.testing.assert_array_equal(forged.motion_fields[5].blocks, rec.motion_fields[5].blocks)
    np.testing.assert_array_equal(forged.csi_values, rec.csi_values)


def test_forge_splice_uses_donor():
    rec = simulate(SceneSpec(n_frames=20, persons_count=1, seed=5))
    donor = simulate(SceneSpec(n_frames=20, persons_count=1, seed=6))
    forged = forge(rec, "splice", interval=(4, 12), donor=donor)
    np.testing.assert_array_equal(forged.gt_masks[4:12], donor.gt_masks[4:12])
    np.testing.assert_array_equal(forged.gt_masks[12:], rec.gt_masks[12:])


def test_pseudo_masks_overlap_ground_truth_per_gop():
    for seed in (0, 1, 2):
        rec = simulate(SceneSpec(n_frames=40, persons_count=1, seed=seed, pause_prob=0.0))
        masks = masks_for_video(rec.motion_fields)
        for start in range(4, 40, 4):
            gt = rec.gt_masks[start:start + 4].max(axis=0)
            pm = masks[start].grid
            iou = (gt & pm).sum() / max((gt | pm).sum(), 1)
            assert iou >= 0.5, (seed, start, iou)


def test_hampel_removes_injected_outliers():
    model = CsiModel(noise_sigma=0.5, outlier_rate=0.01)
    rec = simulate(SceneSpec(n_frames=40, persons_count=1, seed=7), model)
    den = denoise_amplitudes(np.abs(rec.csi_values))
    rms = np.sqrt(np.mean((den - rec.csi_clean_amps) ** 2))
    assert rms < 2 * model.noise_sigma


def test_linear_probe_detects_presence():
    scenes = [SceneSpec(n_frames=120, persons_count=p, seed=20 + i) for i, p in enumerate((0, 1, 2, 0, 1))]
    tabs = [preprocess_recording(simulate(s, name=f"r{i}"), m=5) for i, s in enumerate(scenes)]
    x = np.concatenate([t.windows.reshape(len(t), -1) for t in tabs])
    y = np.concatenate([t.labels for t in tabs]).astype(float)
    rng = np.random.default_rng(0)
    perm = rng.permutation(len(y))
    tr, te = perm[: len(y) * 3 // 4], perm[len(y) * 3 // 4:]
    mu, sd = x[tr].mean(0), x[tr].std(0) + 1e-6
    z = (x - mu) / sd
    a = np.c_[z, np.ones(len(z))]
    w = np.linalg.solve(a[tr].T @ a[tr] + 10.0 * np.eye(a.shape[1]), a[tr].T @ y[tr])
    acc = np.mean((a[te] @ w > 0.5) == (y[te] > 0.5))
    assert acc >= 0.9


def test_benchmark_scenes_layout():
    scenes = benchmark_scenes(1200)
    assert [s.persons_count for s in scenes] == [0, 1, 1, 2, 2]
    assert sum(s.n_frames for s in scenes) == 1200
    assert len({s.seed for s in scenes}) == 5
