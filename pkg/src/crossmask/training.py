"""Training loops, optimiser settings and learning-rate schedule."""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, CrossmaskError
from .models import bce_loss, save_checkpoint, segmentor_loss_logits, tile_to_working_size

log = logging.getLogger(__name__)

MODULES = ("detector", "segmentor", "forgery")


class TrainingDiverged(CrossmaskError):
    pass


@dataclass
class TrainConfig:
    module: str
    epochs: int = 20
    batch_size: int = 32
    lr0: float = 1e-3
    lr_decay: float = 10.0
    lr_step_epochs: int = 5
    optimizer: str = "adam"
    momentum: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    seed: int = 0
    lambda_b: float = 1.0
    dice_smooth: float = 1.0

    def __post_init__(self):
        if self.module not in MODULES:
            raise ConfigError(f"unknown module {self.module!r}")
        if self.optimizer not in ("adam", "rmsprop"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr_step_epochs < 1:
            raise ConfigError("epochs, batch_size and lr_step_epochs must be >= 1")
        self.betas = tuple(self.betas)

    @classmethod
    def default_for(cls, module, **overrides):
        base = {
            "detector": dict(optimizer="rmsprop", lr0=1e-6, batch_size=16, weight_decay=1e-8, momentum=0.9),
            "segmentor": dict(optimizer="adam", lr0=1e-3, batch_size=32, betas=(0.9, 0.999), weight_decay=1e-5),
            "forgery": dict(optimizer="adam", lr0=1e-3, batch_size=32, betas=(0.9, 0.999), weight_decay=2e-5),
        }[module]
        base.update(overrides)
        return cls(module=module, **base)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Step decay: ``lr0 / lr_decay ** (epoch // lr_step_epochs)``."""
    return cfg.lr0 / cfg.lr_decay ** (epoch // cfg.lr_step_epochs)


def make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == "rmsprop":
        return torch.optim.RMSprop(params, lr=cfg.lr0, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    return torch.optim.Adam(params, lr=cfg.lr0, betas=cfg.betas, weight_decay=cfg.weight_decay)


# --------------------------------------------------------------------------
# batch providers
# --------------------------------------------------------------------------

class DetectorData:
    """CSI windows (N, m*K, tx, rx) with 0/1 motion labels."""

    def __init__(self, windows, labels, m):
        self.x = np.asarray(windows, dtype=np.float32)
        self.y = np.asarray(labels, dtype=np.float32)
        self.m = m

    def __len__(self):
        return len(self.y)

    def batch(self, idx):
        x = self.x[idx]
        b, mk, ntx, nrx = x.shape
        x = x.reshape(b, self.m, mk // self.m, ntx * nrx)
        return torch.from_numpy(np.ascontiguousarray(x)), torch.from_numpy(self.y[idx])

    def labels(self):
        return self.y


class SegmentorData:
    """CSI windows tiled on the fly to the working size, with pseudo-mask targets."""

    def __init__(self, windows, masks, hw):
        self.x = np.asarray(windows, dtype=np.float32)
        self.y = np.asarray(masks, dtype=np.float32)
        self.hw = tuple(hw)

    def __len__(self):
        return len(self.y)

    def batch(self, idx):
        x = torch.from_numpy(self.x[idx])
        return tile_to_working_size(x, self.hw).contiguous(), torch.from_numpy(self.y[idx])


class ClipData:
    """Forgery clips assembled from per-frame visual / wireless stacks and a pair plan."""

    def __init__(self, visual, wireless, plan, g):
        self.visual = np.asarray(visual, dtype=np.float32)
        self.wireless = np.asarray(wireless, dtype=np.float32)
        self.plan = np.asarray(plan, dtype=np.int64).reshape(-1, 3)
        self.g = g

    def __len__(self):
        return len(self.plan)

    def batch(self, idx):
        steps = np.arange(self.g)
        vs = self.plan[idx, 0][:, None] + steps
        ws = self.plan[idx, 1][:, None] + steps
        x = np.stack([self.visual[vs], self.wireless[ws]], axis=2)
        return torch.from_numpy(x), torch.from_numpy(self.plan[idx, 2].astype(np.float32))

    def labels(self):
        return self.plan[:, 2]


# --------------------------------------------------------------------------
# loops
# --------------------------------------------------------------------------

def _loss(cfg: TrainConfig, logits, y):
    if cfg.module == "segmentor":
        return segmentor_loss_logits(logits, y, cfg.lambda_b, cfg.dice_smooth)
    return bce_loss(logits, y)


@torch.no_grad()
def predict_logits(net: nn.Module, data, batch_size=64):
    net.eval()
    outs = []
    for s in range(0, len(data), batch_size):
        x, _ = data.batch(np.arange(s, min(s + batch_size, len(data))))
        outs.append(net(x))
    if not outs:
        return torch.zeros(0)
    return torch.cat(outs)


@torch.no_grad()
def evaluate(cfg: TrainConfig, net, data, batch_size=64):
    """(mean loss, accuracy); pixel accuracy for the segmentor."""
    if len(data) == 0:
        return float("nan"), float("nan")
    net.eval()
    tot_loss, n, correct, count = 0.0, 0, 0, 0
    for s in range(0, len(data), batch_size):
        x, y = data.batch(np.arange(s, min(s + batch_size, len(data))))
        logits = net(x)
        tot_loss += float(_loss(cfg, logits, y)) * len(y)
        n += len(y)
        correct += int(((logits >= 0).float() == y).sum())
        count += y.numel()
    return tot_loss / n, correct / count


@dataclass
class TrainResult:
    best: nn.Module
    final: nn.Module
    log: list = field(default_factory=list)
    best_epoch: int = 0
    paths: dict = field(default_factory=dict)


LOG_FIELDS = ("epoch", "lr", "train_loss", "val_loss", "val_acc")


def write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.8g}" if isinstance(r[k], float) else r[k]) for k in LOG_FIELDS})


def train_module(cfg: TrainConfig, net: nn.Module, train_data, val_data=None, out_dir=None,
                 fingerprint: Optional[dict] = None) -> TrainResult:
    """Train ``net`` in place and keep the best-validation copy.

    Best means highest validation accuracy for detector/forgery and lowest
    validation loss for the segmentor; without validation data the final
    weights are the best. When ``out_dir`` is given, ``checkpoints/<module>_best.pt``,
    ``checkpoints/<module>_final.pt`` and ``logs/<module>.csv`` are written.

    Raises:
        ConfigError: empty training set.
        TrainingDiverged: a non-finite loss.
    """
    if len(train_data) == 0:
        raise ConfigError(f"{cfg.module}: empty training set")
    torch.manual_seed(cfg.seed)
    opt = make_optimizer(cfg, net.parameters())
    rows, best_state, best_key, best_epoch = [], None, None, 0
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        for grp in opt.param_groups:
            grp["lr"] = lr
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_data))
        net.train()
        tot, n = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[s:s + cfg.batch_size])
            if len(idx) < 2 and any(isinstance(mod, nn.modules.batchnorm._BatchNorm) for mod in net.modules()):
                continue
            x, y = train_data.batch(idx)
            opt.zero_grad()
            loss = _loss(cfg, net(x), y)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"{cfg.module}: non-finite loss at epoch {epoch}, batch starting {s}")
            loss.backward()
            opt.step()
            tot += loss.item() * len(idx)
            n += len(idx)
        train_loss = tot / max(n, 1)
        if val_data is not None and len(val_data):
            val_loss, val_acc = evaluate(cfg, net, val_data)
        else:
            val_loss, val_acc = float("nan"), float("nan")
        rows.append({"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_loss": val_loss, "val_acc": val_acc})
        log.info("%s epoch %d lr %.3g loss %.4f val_loss %.4f val_acc %.4f",
                 cfg.module, epoch, lr, train_loss, val_loss, val_acc)
        if cfg.module == "segmentor":
            key = -val_loss
        else:
            key = val_acc
        if math.isnan(key):
            key = epoch  # no validation: the latest epoch wins
        if best_key is None or key > best_key:
            best_key, best_epoch = key, epoch
            best_state = copy.deepcopy(net.state_dict())
    final = net
    best = copy.deepcopy(net)
    best.load_state_dict(best_state)
    best.eval()
    final.eval()
    result = TrainResult(best, final, rows, best_epoch)
    if out_dir is not None:
        out = Path(out_dir)
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out / "logs").mkdir(parents=True, exist_ok=True)
        fp = dict(fingerprint or {"module": cfg.module})
        for tag, model, ep in (("best", best, best_epoch), ("final", final, cfg.epochs - 1)):
            path = out / "checkpoints" / f"{cfg.module}_{tag}.pt"
            save_checkpoint(path, model, {**fp, "epoch": ep})
            result.paths[tag] = path
        write_log(out / "logs" / f"{cfg.module}.csv", rows)
        result.paths["log"] = out / "logs" / f"{cfg.module}.csv"
    return result
