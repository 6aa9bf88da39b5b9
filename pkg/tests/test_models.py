import numpy as np
import pytest
import torch

from crossmask.errors import ConfigError, DimensionError, FingerprintError, ValidationError
from crossmask.models import (DetectorConfig, DetectorNet, ForgeryConfig, ForgeryNet, SegmentorConfig, SegmentorNet,
                              bce_loss, block_mode_downsample, detector_forward, dice_loss, forgery_forward,
                              load_checkpoint, make_fingerprint, save_checkpoint, segmentor_forward,
                              segmentor_loss, segmentor_loss_logits, tile_to_working_size, zero_weights)

SMALL_HW = (32, 48)


def test_detector_shapes_and_errors():
    net = DetectorNet(DetectorConfig(m=5, k=30, n_links=9))
    assert net(torch.zeros(4, 5, 30, 9)).shape == (4,)
    assert detector_forward(net, np.zeros((5, 30, 9))).shape == ()
    with pytest.raises(DimensionError):
        net(torch.zeros(4, 3, 30, 9))


def test_detector_zero_weights_is_undecided():
    net = zero_weights(DetectorNet())
    p = torch.sigmoid(detector_forward(net, torch.randn(5, 30, 9)))
    assert float(p) == pytest.approx(0.5)


def test_segmentor_shapes_and_errors():
    net = SegmentorNet(SegmentorConfig(in_channels=30, hw=SMALL_HW))
    x = tile_to_working_size(torch.randn(2, 30, 3, 3), SMALL_HW)
    out = segmentor_forward(net, x)
    assert out.shape == (2,) + SMALL_HW
    assert float(out.min()) >= 0 and float(out.max()) <= 1
    with pytest.raises(DimensionError):
        net(torch.zeros(1, 31, *SMALL_HW))
    with pytest.raises(ConfigError):
        SegmentorNet(SegmentorConfig(hw=(30, 48)))


def test_tile_replicates_and_inverts():
    w = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)
    t = tile_to_working_size(w, (96, 128))
    assert t.shape == (2, 96, 128)
    assert t[1, 0, 0] == w[1, 0, 0] and t[1, 95, 127] == w[1, 2, 2]
    assert t[0, 32, 43] == w[0, 1, 1]
    np.testing.assert_array_equal(block_mode_downsample(t, (3, 3)), w)
    tt = tile_to_working_size(torch.from_numpy(w), (96, 128))
    np.testing.assert_array_equal(tt.numpy(), t)
    with pytest.raises(ConfigError):
        tile_to_working_size(w, (90, 128))


def test_forgery_shapes_and_errors():
    net = ForgeryNet(ForgeryConfig(g=3, hw=SMALL_HW))
    assert net(torch.zeros(2, 3, 2, *SMALL_HW)).shape == (2,)
    assert forgery_forward(net, np.zeros((3, 2) + SMALL_HW, dtype=np.float32)).shape == ()
    with pytest.raises(DimensionError):
        net(torch.zeros(2, 4, 2, *SMALL_HW))


def test_dice_values():
    t = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
    assert float(dice_loss(t, t, smooth=1e-9)) == pytest.approx(0.0, abs=1e-6)
    assert float(dice_loss(1 - t, t, smooth=1e-9)) == pytest.approx(1.0, abs=1e-6)
    p = torch.full((2, 2), 0.5)
    # 1 - (2*1 + 1) / (2 + 2 + 1)
    assert float(dice_loss(p, t)) == pytest.approx(1 - 3 / 5)


def test_loss_validation():
    with pytest.raises(ValidationError):
        bce_loss(torch.zeros(3), torch.tensor([0.0, 0.5, 1.0]))
    with pytest.raises(ValidationError):
        dice_loss(torch.zeros(3), torch.zeros(3), smooth=0)


def test_segmentor_loss_forms_agree():
    torch.manual_seed(0)
    logits = torch.randn(3, 8, 8, dtype=torch.float64)
    t = (torch.rand(3, 8, 8) > 0.5).double()
    a = segmentor_loss(torch.sigmoid(logits), t, 1.0)
    b = segmentor_loss_logits(logits, t, 1.0)
    assert float(a) == pytest.approx(float(b), rel=1e-9)


def test_segmentor_loss_gradcheck():
    torch.manual_seed(1)
    p = torch.rand(8, 8, dtype=torch.float64).clamp(0.05, 0.95).requires_grad_()
    t = (torch.rand(8, 8) > 0.5).double()
    assert torch.autograd.gradcheck(lambda x: segmentor_loss(x, t, 1.0), (p,), eps=1e-6, atol=1e-7)


def test_checkpoint_round_trip_and_fingerprint(tmp_path):
    cfg = DetectorConfig()
    net = DetectorNet(cfg)
    fp = make_fingerprint("detector", cfg, m=5, g=7, dims=(30, 3, 3), hw=(96, 128), seed=0, epoch=3)
    save_checkpoint(tmp_path / "d.pt", net, fp)
    back, got = load_checkpoint(tmp_path / "d.pt", {**fp, "epoch": 9})
    assert got["epoch"] == 3
    x = torch.randn(2, 5, 30, 9)
    torch.testing.assert_close(back(x), net.eval()(x))
    with pytest.raises(FingerprintError):
        load_checkpoint(tmp_path / "d.pt", {**fp, "m": 1})
