import pytest
import yaml

from crossmask.config import RunConfig, apply_overrides, config_hash, dump_config, from_dict, load_config, to_dict
from crossmask.errors import ConfigError


def test_defaults():
    cfg = from_dict({})
    assert (cfg.m, cfg.g, cfg.signal.lam, cfg.signal.tau, cfg.signal.eta) == (5, 7, 1.0, 0.5, 0.0)
    assert (cfg.simulate.gop_length, cfg.simulate.block_size, cfg.simulate.frame_hw) == (4, 16, [96, 128])
    assert (cfg.signal.hampel_window, cfg.signal.hampel_sigmas, cfg.signal.min_area_frac) == (5, 3.0, 0.001)
    assert (cfg.lambda_b, cfg.dataset.forgery_frac, cfg.min_offset) == (1.0, 0.5, 7)
    assert cfg.train_config("detector").lr0 == 1e-6


def test_round_trip_is_identity(tmp_path):
    cfg = from_dict({"m": 3, "train": {"detector": {"lr0": 1e-4}}, "split": {"block_len": 20}})
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    back = load_config(path)
    assert back == cfg
    assert dump_config(back) == dump_config(cfg)
    assert config_hash(back) == config_hash(cfg)


@pytest.mark.parametrize("data", [
    {"mm": 5},
    {"signal": {"lamda": 1.0}},
    {"m": "five"},
    {"m": True},
    {"signal": {"hampel_window": 4}},
    {"g": 7, "dataset": {"min_offset": 3}},
    {"simulate": {"frame_hw": [90, 128]}},
    {"split": {"mode": "stratified"}},
    {"train": {"detector": {"optimiser": "sgd"}}},
    {"train": {"segmentor": {"optimizer": "sgd"}}},
    {"signal": []},
])
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigError):
        from_dict(data)


def test_int_accepted_for_float_field():
    assert from_dict({"signal": {"tau": 1}}).signal.tau == 1.0


def test_overrides():
    cfg = apply_overrides(RunConfig(), ["g=5", "train.detector.lr0=1e-4", "signal.tau=0.25"])
    assert cfg.g == 5 and cfg.signal.tau == 0.25
    assert cfg.train_config("detector").lr0 == 1e-4
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["nokey"])
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["m.x=1"])


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("m: [1,\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert load_config(empty) == from_dict({})


def test_dump_is_plain_yaml():
    data = yaml.safe_load(dump_config(RunConfig()))
    assert data == to_dict(RunConfig())


@pytest.mark.parametrize("entry", [{"lr0": "fast"}, {"epochs": 2.5}, {"module": "forgery"}])
def test_train_section_types(entry):
    with pytest.raises(ConfigError):
        from_dict({"train": {"forgery": entry}})
