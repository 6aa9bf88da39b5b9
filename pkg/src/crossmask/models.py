"""The three networks, their losses and checkpoint I/O.

* :class:`DetectorNet`: conv1d over subcarriers, LSTM over the ``m`` CSI
  steps, two linear layers, one motion logit.
* :class:`SegmentorNet`: U-Net style encoder/decoder over CSI tiled to the
  working resolution; four stride-2 stages each way with skips.
* :class:`ForgeryNet`: residual CNN per time step over (visual, wireless)
  mask pairs, LSTM over the clip, two linear layers, one forgery logit.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, DimensionError, FingerprintError, ValidationError


# --------------------------------------------------------------------------
# configs
# --------------------------------------------------------------------------

@dataclass
class DetectorConfig:
    m: int = 5
    k: int = 30
    n_links: int = 9
    conv_channels: tuple[int, int] = (32, 64)
    hidden: int = 64
    fc: int = 32


@dataclass
class SegmentorConfig:
    in_channels: int = 150          # m * K
    hw: tuple[int, int] = (96, 128)
    widths: tuple[int, ...] = (8, 8, 16, 32, 32)   # stem, then one per stride-2 stage
    context: int = 256              # bottleneck global-mixing width, 0 disables


@dataclass
class ForgeryConfig:
    g: int = 7
    hw: tuple[int, int] = (96, 128)
    pool: int = 4                   # average-pool factor before the residual stack
    widths: tuple[int, int, int, int] = (16, 32, 64, 128)
    hidden: int = 128
    fc: int = 64


# --------------------------------------------------------------------------
# human detector
# --------------------------------------------------------------------------

class DetectorNet(nn.Module):
    def __init__(self, cfg: DetectorConfig = DetectorConfig()):
        super().__init__()
        self.cfg = cfg
        c1, c2 = cfg.conv_channels
        self.conv = nn.Sequential(
            nn.Conv1d(cfg.n_links, c1, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv1d(c1, c2, 3, stride=2, padding=1), nn.ReLU(),
        )
        k_out = ((cfg.k + 1) // 2 + 1) // 2   # length after two stride-2, pad-1 convs
        self.lstm = nn.LSTM(c2 * k_out, cfg.hidden, batch_first=True)
        self.head = nn.Sequential(nn.Linear(cfg.hidden, cfg.fc), nn.ReLU(), nn.Linear(cfg.fc, 1))

    def forward(self, x):
        """``x``: (B, m, K, n_links) amplitudes -> (B,) logits."""
        cfg = self.cfg
        if x.dim() != 4 or tuple(x.shape[1:]) != (cfg.m, cfg.k, cfg.n_links):
            raise DimensionError(f"detector expects (B, {cfg.m}, {cfg.k}, {cfg.n_links}), got {tuple(x.shape)}")
        b = x.shape[0]
        z = self.conv(x.reshape(b * cfg.m, cfg.k, cfg.n_links).transpose(1, 2))
        z = z.reshape(b, cfg.m, -1)
        out, _ = self.lstm(z)
        return self.head(out[:, -1]).squeeze(1)


# --------------------------------------------------------------------------
# human segmentor
# --------------------------------------------------------------------------

def _cbr(cin, cout, k=3, stride=1):
    return nn.Sequential(nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=False),
                         nn.BatchNorm2d(cout), nn.ReLU(inplace=True))


class SegmentorNet(nn.Module):
    def __init__(self, cfg: SegmentorConfig = SegmentorConfig()):
        super().__init__()
        h, w = cfg.hw
        if h % 16 or w % 16:
            raise ConfigError(f"working size {cfg.hw} must be divisible by 16")
        if len(cfg.widths) != 5:
            raise ConfigError("segmentor widths needs 5 entries (stem + 4 stages)")
        self.cfg = cfg
        c = cfg.widths
        self.stem = _cbr(cfg.in_channels, c[0], k=1)
        self.down = nn.ModuleList(
            nn.Sequential(_cbr(c[i], c[i + 1], stride=2), _cbr(c[i + 1], c[i + 1])) for i in range(4))
        self.bottleneck = h // 16, w // 16
        n_bott = c[4] * self.bottleneck[0] * self.bottleneck[1]
        self.context = (nn.Sequential(nn.Flatten(), nn.Linear(n_bott, cfg.context), nn.ReLU(inplace=True),
                                      nn.Linear(cfg.context, n_bott))
                        if cfg.context else None)
        self.up = nn.ModuleList(nn.ConvTranspose2d(c[i + 1], c[i], 2, stride=2) for i in range(4))
        self.fuse = nn.ModuleList(_cbr(2 * c[i], c[i]) for i in range(4))
        self.head = nn.Conv2d(c[0], 1, 1)

    def forward(self, x):
        """``x``: (B, m*K, H, W) tiled CSI -> (B, H, W) logits."""
        cfg = self.cfg
        if x.dim() != 4 or x.shape[1] != cfg.in_channels or tuple(x.shape[2:]) != tuple(cfg.hw):
            raise DimensionError(
                f"segmentor expects (B, {cfg.in_channels}, {cfg.hw[0]}, {cfg.hw[1]}), got {tuple(x.shape)}")
        skips = [self.stem(x)]
        for stage in self.down:
            skips.append(stage(skips[-1]))
        z = skips.pop()
        if self.context is not None:
            z = z + self.context(z).view_as(z)
        for i in reversed(range(4)):
            z = self.fuse[i](torch.cat([self.up[i](z), skips[i]], dim=1))
        return self.head(z).squeeze(1)


def tile_to_working_size(window, working_hw):
    """Nearest-neighbour replicate an (C, N_tx, N_rx) grid to (C, H', W').

    Each grid cell becomes a ``ceil(H'/N_tx) x ceil(W'/N_rx)`` block; the
    result is cropped to size. Works on numpy arrays and torch tensors, with
    or without a leading batch axis.
    """
    hh, ww = working_hw
    if hh % 16 or ww % 16:
        raise ConfigError(f"working size {working_hw} must be divisible by 16")
    ntx, nrx = window.shape[-2:]
    ry = -(-hh // ntx)
    rx = -(-ww // nrx)
    if isinstance(window, torch.Tensor):
        out = window.repeat_interleave(ry, dim=-2).repeat_interleave(rx, dim=-1)
    else:
        out = np.repeat(np.repeat(window, ry, axis=-2), rx, axis=-1)
    return out[..., :hh, :ww]


def block_mode_downsample(tiled, grid_hw):
    """Inverse of :func:`tile_to_working_size` for inspection: most common
    value in each replication block (numpy)."""
    hh, ww = tiled.shape[-2:]
    ntx, nrx = grid_hw
    ry, rx = -(-hh // ntx), -(-ww // nrx)
    out = np.empty(tiled.shape[:-2] + (ntx, nrx), dtype=tiled.dtype)
    for i in range(ntx):
        for j in range(nrx):
            blk = tiled[..., i * ry:(i + 1) * ry, j * rx:(j + 1) * rx].reshape(tiled.shape[:-2] + (-1,))
            flat = blk.reshape(-1, blk.shape[-1])
            modes = []
            for row in flat:
                vals, counts = np.unique(row, return_counts=True)
                modes.append(vals[np.argmax(counts)])
            out[..., i, j] = np.array(modes).reshape(tiled.shape[:-2])
    return out


# --------------------------------------------------------------------------
# forgery detector
# --------------------------------------------------------------------------

class ResidualBlock(nn.Module):
    def __init__(self, cin, cout, stride=2):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False), nn.BatchNorm2d(cout),
            nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, padding=1, bias=False), nn.BatchNorm2d(cout))
        self.short = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        return F.relu(self.body(x) + self.short(x))


class ForgeryNet(nn.Module):
    def __init__(self, cfg: ForgeryConfig = ForgeryConfig()):
        super().__init__()
        self.cfg = cfg
        w = (2,) + tuple(cfg.widths)
        self.pool = nn.AvgPool2d(cfg.pool) if cfg.pool > 1 else nn.Identity()
        self.features = nn.Sequential(*[ResidualBlock(w[i], w[i + 1]) for i in range(4)],
                                      nn.AdaptiveAvgPool2d(1), nn.Flatten())
        self.lstm = nn.LSTM(w[-1], cfg.hidden, batch_first=True)
        self.head = nn.Sequential(nn.Linear(cfg.hidden, cfg.fc), nn.ReLU(), nn.Linear(cfg.fc, 1))

    def forward(self, x):
        """``x``: (B, g, 2, H, W) with channel 0 visual, 1 wireless -> (B,) logits."""
        cfg = self.cfg
        if x.dim() != 5 or x.shape[1] != cfg.g or x.shape[2] != 2 or tuple(x.shape[3:]) != tuple(cfg.hw):
            raise DimensionError(f"forgery net expects (B, {cfg.g}, 2, {cfg.hw[0]}, {cfg.hw[1]}), got {tuple(x.shape)}")
        b, g = x.shape[:2]
        feats = self.features(self.pool(x.reshape(b * g, *x.shape[2:]))).reshape(b, g, -1)
        out, _ = self.lstm(feats)
        return self.head(out[:, -1]).squeeze(1)


# --------------------------------------------------------------------------
# forward helpers and losses
# --------------------------------------------------------------------------

def _as_tensor(x):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x), dtype=torch.float32)


@torch.no_grad()
def detector_forward(net: DetectorNet, window):
    """Logit(s) for one ``(m, K, n_links)`` window or a batch of them."""
    x = _as_tensor(window)
    single = x.dim() == 3
    net.eval()
    out = net(x[None] if single else x)
    return out[0] if single else out


@torch.no_grad()
def segmentor_forward(net: SegmentorNet, tiled):
    """Probability map(s) in [0, 1] for tiled CSI (C, H, W) or (B, C, H, W)."""
    h, w = tiled.shape[-2:]
    if h % 16 or w % 16:
        raise ConfigError(f"input size {(h, w)} must be divisible by 16")
    x = _as_tensor(tiled)
    single = x.dim() == 3
    net.eval()
    out = torch.sigmoid(net(x[None] if single else x))
    return out[0] if single else out


@torch.no_grad()
def forgery_forward(net: ForgeryNet, clip):
    """Logit(s) for a ``(g, 2, H, W)`` clip or a batch of clips."""
    x = _as_tensor(clip)
    single = x.dim() == 4
    net.eval()
    out = net(x[None] if single else x)
    return out[0] if single else out


def zero_weights(net: nn.Module):
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    return net


def _check_binary(targets):
    if not torch.all((targets == 0) | (targets == 1)):
        raise ValidationError("targets must be 0/1")


def bce_loss(logits, targets):
    """Mean binary cross-entropy on logits."""
    logits, targets = _as_tensor(logits), _as_tensor(targets)
    _check_binary(targets)
    return F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype))


def dice_loss(probs, targets, smooth=1.0):
    """``1 - (2 sum(p t) + s) / (sum p + sum t + s)``, averaged over the batch axis
    when ``probs`` has more than two dimensions."""
    probs, targets = _as_tensor(probs), _as_tensor(targets)
    _check_binary(targets)
    if not smooth > 0:
        raise ValidationError("smooth must be > 0")
    targets = targets.to(probs.dtype)
    if probs.dim() > 2:
        p = probs.reshape(probs.shape[0], -1)
        t = targets.reshape(targets.shape[0], -1)
    else:
        p, t = probs.reshape(1, -1), targets.reshape(1, -1)
    dice = (2 * (p * t).sum(1) + smooth) / (p.sum(1) + t.sum(1) + smooth)
    return (1 - dice).mean()


def segmentor_loss(probs, targets, lambda_b=1.0, smooth=1.0):
    """Dice + ``lambda_b`` * BCE, both on probabilities."""
    probs, targets = _as_tensor(probs), _as_tensor(targets)
    _check_binary(targets)
    bce = F.binary_cross_entropy(probs, targets.to(probs.dtype))
    return dice_loss(probs, targets, smooth) + lambda_b * bce


def segmentor_loss_logits(logits, targets, lambda_b=1.0, smooth=1.0):
    """Same loss computed from logits (numerically safer; used for training)."""
    return dice_loss(torch.sigmoid(logits), targets, smooth) + lambda_b * bce_loss(logits, targets)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

_NETS = {"detector": (DetectorNet, DetectorConfig),
         "segmentor": (SegmentorNet, SegmentorConfig),
         "forgery": (ForgeryNet, ForgeryConfig)}


def _jsonable(obj):
    return json.loads(json.dumps(obj))


def make_fingerprint(module, net_cfg, *, m, g, dims, hw, seed, epoch=0):
    k, ntx, nrx = dims
    return _jsonable({"module": module, "m": m, "g": g, "K": k, "N_tx": ntx, "N_rx": nrx,
                      "H": hw[0], "W": hw[1], "seed": seed, "epoch": epoch, "arch": asdict(net_cfg)})


def build_net(module, arch: dict):
    cls, cfg_cls = _NETS[module]
    fixed = {k: tuple(v) if isinstance(v, list) else v for k, v in arch.items()}
    return cls(cfg_cls(**fixed))


def save_checkpoint(path, net: nn.Module, fingerprint: dict):
    torch.save({"state_dict": net.state_dict(), "fingerprint": _jsonable(fingerprint)}, path)


def load_checkpoint(path, expected: dict | None = None):
    """Rebuild the network stored at ``path``.

    ``expected`` is compared with the stored fingerprint on every key it
    contains except ``epoch``; any difference raises :class:`FingerprintError`.
    """
    blob = torch.load(path, map_location="cpu", weights_only=True)
    fp = blob["fingerprint"]
    if expected is not None:
        diff = {k: (fp.get(k), v) for k, v in _jsonable(expected).items()
                if k != "epoch" and fp.get(k) != v}
        if diff:
            raise FingerprintError(f"checkpoint {path} fingerprint mismatch: {diff}")
    net = build_net(fp["module"], fp["arch"])
    net.load_state_dict(blob["state_dict"])
    net.eval()
    return net, fp
