"""Run configuration: one YAML file, nested sections, strict keys."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import re
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError
from .training import TrainConfig


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-4`` (no dot) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def _yaml_load(text):
    return yaml.load(text, Loader=_Loader)


@dataclass
class SignalConfig:
    hampel_window: int = 5
    hampel_sigmas: float = 3.0
    lam: float = 1.0
    tau: float = 0.5
    eta: float = 0.0
    min_area_frac: float = 0.001


@dataclass
class SimulateConfig:
    total_frames: int = 1200
    persons: list = field(default_factory=lambda: [0, 1, 1, 2, 2])
    frame_hw: list = field(default_factory=lambda: [96, 128])
    fps: float = 7.5
    block_size: int = 16
    gop_length: int = 4
    csi_dims: list = field(default_factory=lambda: [30, 3, 3])
    csi_rate_hz: float = 37.5
    noise_sigma: float = 0.5
    outlier_rate: float = 0.01


@dataclass
class SplitConfig:
    train_frac: float = 0.8
    val_frac: float = 0.1
    mode: str = "contiguous"
    block_len: int = 40


@dataclass
class DatasetConfig:
    forgery_frac: float = 0.5
    min_offset: Optional[int] = None   # None -> g
    crossfit_folds: int = 0            # >1: forgery training sees out-of-fold segmentor outputs


@dataclass
class PipelineConfig:
    threshold: float = 0.5
    queue_depth: int = 0


@dataclass
class BenchConfig:
    warmup: int = 2
    iters: int = 10
    frames: int = 64


def _train_default(module):
    return field(default_factory=lambda: {})


@dataclass
class TrainSection:
    detector: dict = _train_default("detector")
    segmentor: dict = _train_default("segmentor")
    forgery: dict = _train_default("forgery")


@dataclass
class RunConfig:
    seed: int = 0
    m: int = 5
    g: int = 7
    epochs: int = 20
    lambda_b: float = 1.0
    signal: SignalConfig = field(default_factory=SignalConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainSection = field(default_factory=TrainSection)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    @property
    def min_offset(self):
        return self.g if self.dataset.min_offset is None else self.dataset.min_offset

    def train_config(self, module) -> TrainConfig:
        """Built-in defaults for ``module`` overlaid with the ``train.<module>`` section."""
        overrides = dict(getattr(self.train, module))
        defaults = TrainConfig.default_for(module)
        for k, v in overrides.items():
            ref = getattr(defaults, k, None)
            if k == "module" or ref is None:
                raise ConfigError(f"train.{module}: unknown key {k!r}")
            numeric = isinstance(v, (int, float)) and not isinstance(v, bool)
            if isinstance(ref, (int, float)) and not numeric:
                raise ConfigError(f"train.{module}.{k}: expected a number, got {v!r}")
            if isinstance(ref, int) and not isinstance(ref, bool) and k in ("epochs", "batch_size", "seed",
                                                                             "lr_step_epochs") and not isinstance(v, int):
                raise ConfigError(f"train.{module}.{k}: expected an integer, got {v!r}")
        overrides.setdefault("epochs", self.epochs)
        overrides.setdefault("seed", self.seed)
        overrides.setdefault("lambda_b", self.lambda_b)
        try:
            return TrainConfig.default_for(module, **overrides)
        except TypeError as exc:
            raise ConfigError(f"train.{module}: {exc}") from None

    def validate(self):
        if self.m < 1 or self.g < 1:
            raise ConfigError("m and g must be >= 1")
        if self.min_offset < self.g:
            raise ConfigError(f"dataset.min_offset ({self.min_offset}) must be >= g ({self.g})")
        if self.dataset.crossfit_folds < 0 or self.dataset.crossfit_folds == 1:
            raise ConfigError("dataset.crossfit_folds must be 0 or >= 2")
        if not 0 < self.dataset.forgery_frac < 1:
            raise ConfigError("dataset.forgery_frac must be in (0, 1)")
        if self.signal.hampel_window < 3 or self.signal.hampel_window % 2 == 0:
            raise ConfigError("signal.hampel_window must be odd and >= 3")
        if not 0 <= self.signal.eta < 1:
            raise ConfigError("signal.eta must be in [0, 1)")
        if not 0 <= self.signal.min_area_frac < 1:
            raise ConfigError("signal.min_area_frac must be in [0, 1)")
        h, w = self.simulate.frame_hw
        if h % 16 or w % 16:
            raise ConfigError("simulate.frame_hw must be divisible by 16")
        if h % self.simulate.block_size or w % self.simulate.block_size:
            raise ConfigError("simulate.frame_hw must be divisible by simulate.block_size")
        if self.simulate.csi_rate_hz < self.m * self.simulate.fps:
            raise ConfigError("simulate.csi_rate_hz must be >= m * fps")
        if not 0 < self.split.train_frac < 1 or not 0 <= self.split.val_frac < 1:
            raise ConfigError("split fractions out of range")
        if self.split.mode not in ("random", "contiguous"):
            raise ConfigError("split.mode must be 'random' or 'contiguous'")
        for module in ("detector", "segmentor", "forgery"):
            self.train_config(module)
        return self


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {unknown}")
    kwargs = {}
    for k, v in data.items():
        sub = f"{path}.{k}" if path else k
        hint = hints[k]
        if dataclasses.is_dataclass(hint):
            kwargs[k] = _build(hint, v, sub)
            continue
        origin = typing.get_origin(hint)
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        base = args[0] if origin is typing.Union and args else hint
        if v is None:
            if origin is typing.Union:
                kwargs[k] = None
                continue
            raise ConfigError(f"{sub}: must not be null")
        if base is float and isinstance(v, (int, float)) and not isinstance(v, bool):
            v = float(v)
        elif base is int and not (isinstance(v, int) and not isinstance(v, bool)):
            raise ConfigError(f"{sub}: expected an integer, got {v!r}")
        elif base in (list, dict) and not isinstance(v, base):
            raise ConfigError(f"{sub}: expected a {base.__name__}, got {v!r}")
        elif base is str and not isinstance(v, str):
            raise ConfigError(f"{sub}: expected a string, got {v!r}")
        elif base is float and not isinstance(v, float):
            raise ConfigError(f"{sub}: expected a number, got {v!r}")
        kwargs[k] = v
    return cls(**kwargs)


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data or {}, "").validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        data = _yaml_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(data or {})


def to_dict(cfg: RunConfig) -> dict:
    return json.loads(json.dumps(asdict(cfg)))


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply ``dotted.key=value`` overrides (values parsed as YAML scalars)."""
    data = to_dict(cfg)
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"override {key}: {p!r} is not a section")
            node = node[p]
        node[parts[-1]] = _yaml_load(raw)
    return from_dict(data)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]
