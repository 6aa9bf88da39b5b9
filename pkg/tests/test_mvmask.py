import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossmask.errors import DimensionError, GroupingError, ParameterError, ParseError
from crossmask.mvmask import (AccumulatedField, BinaryMask, MaskParams, MotionField, accumulate_gop, binarize,
                              centroid, mask_stack, masks_for_video, parse_mv_sidecar, read_mv_header, read_pgm,
                              refine, smooth_field, write_mv_sidecar, write_pgm)

from oracles import literal_score_mask


def test_binarize_matches_literal_oracle_small():
    rng = np.random.default_rng(0)
    for _ in range(10):
        raw = rng.normal(scale=0.6, size=(6, 7, 2))
        raw[rng.random((6, 7)) < 0.3] = 0
        acc = AccumulatedField(raw, smooth_field(raw))
        np.testing.assert_array_equal(binarize(acc, 1.0, 0.5).grid, literal_score_mask(raw, 1.0, 0.5))


def test_zero_field_gives_empty_mask():
    raw = np.zeros((4, 4, 2))
    acc = AccumulatedField(raw, smooth_field(raw))
    assert binarize(acc, 1.0, 0.0).grid.sum() == 0


def test_uniform_motion_sets_every_pixel():
    raw = np.zeros((5, 5, 2))
    raw[..., 0] = 1.0
    acc = AccumulatedField(raw, smooth_field(raw))
    assert binarize(acc, 1.0, 0.5).grid.all()


def _fields(blocks, gop_length=2, bs=4):
    return [MotionField(i, i // gop_length, b, bs) for i, b in enumerate(blocks)]


def test_accumulate_rejects_mixed_gops():
    f = _fields([np.zeros((2, 2, 2))] * 3)
    with pytest.raises(GroupingError):
        accumulate_gop(f)


def test_accumulate_sums_and_upsamples():
    b = np.zeros((2, 2, 2))
    b[0, 1] = [1.0, -2.0]
    acc = accumulate_gop(_fields([b, b]))
    assert acc.raw_sum.shape == (8, 8, 2)
    np.testing.assert_array_equal(acc.raw_sum[0:4, 4:8], np.broadcast_to([2.0, -4.0], (4, 4, 2)))
    # symmetric borders with zero frame: smoothing preserves the total
    np.testing.assert_allclose(acc.smoothed.sum(axis=(0, 1)), acc.raw_sum.sum(axis=(0, 1)))


def test_masks_for_video_one_mask_per_gop():
    b = np.zeros((4, 4, 2))
    b[1:3, 1:3, 0] = 2.0
    fields = _fields([b, np.zeros_like(b), np.zeros_like(b), np.zeros_like(b)])
    masks = masks_for_video(fields)
    assert [m.frame_index for m in masks] == [0, 1, 2, 3]
    np.testing.assert_array_equal(masks[0].grid, masks[1].grid)
    assert masks[0].grid.sum() > 0 and masks[2].grid.sum() == 0
    frames, arr = mask_stack(fields)
    assert arr.shape == (4, 16, 16) and frames.tolist() == [0, 1, 2, 3]


def test_refine_removes_specks_and_keeps_blobs():
    g = np.zeros((40, 40), dtype=np.uint8)
    g[10:20, 10:20] = 1
    g[30, 30] = 1
    out = refine(BinaryMask(g, 0), 0.001).grid
    assert out[30, 30] == 0
    # the 3x3 median clips the four corners of the square, nothing else
    assert out[10:20, 10:20].sum() == 96
    assert out[:, :25].sum() == 96
    with pytest.raises(ParameterError):
        refine(BinaryMask(g, 0), 1.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 16 - 1))
def test_refine_is_binary_and_frame_preserving(seed):
    g = (np.random.default_rng(seed).random((12, 12)) < 0.4).astype(np.uint8)
    out = refine(BinaryMask(g, 7), 0.01)
    assert out.frame_index == 7
    assert set(np.unique(out.grid)) <= {0, 1}


def test_sidecar_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    fields = [MotionField(i, i // 4, rng.normal(size=(3, 4, 2)).astype(np.float32).astype(np.float64), 16)
              for i in range(6)]
    path = tmp_path / "mv.bin"
    write_mv_sidecar(path, fields, (48, 64), 4)
    hdr = read_mv_header(path)
    assert (hdr.frame_width, hdr.frame_height, hdr.block_size, hdr.gop_length, hdr.frame_count) == (64, 48, 16, 4, 6)
    got = parse_mv_sidecar(path)
    for a, b in zip(fields, got):
        assert (a.frame_index, a.gop_index) == (b.frame_index, b.gop_index)
        np.testing.assert_array_equal(a.blocks, b.blocks)


def test_sidecar_truncation_and_tiling(tmp_path):
    fields = [MotionField(0, 0, np.zeros((3, 4, 2)), 16)]
    path = tmp_path / "mv.bin"
    write_mv_sidecar(path, fields, (48, 64), 4)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(ParseError):
        parse_mv_sidecar(path)
    with pytest.raises(DimensionError):
        write_mv_sidecar(tmp_path / "x.bin", fields, (50, 64), 4)


def test_pgm_round_trip(tmp_path):
    g = (np.random.default_rng(2).random((5, 7)) < 0.5).astype(np.uint8)
    write_pgm(tmp_path / "m.pgm", g)
    assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5")
    np.testing.assert_array_equal(read_pgm(tmp_path / "m.pgm"), g)


def test_centroid():
    g = np.zeros((4, 4), dtype=np.uint8)
    assert centroid(g) is None
    g[1, 1] = g[1, 3] = 1
    assert centroid(g) == (1.0, 2.0)


def test_mask_params_defaults():
    assert MaskParams() == MaskParams(1.0, 0.5, 0.001)
