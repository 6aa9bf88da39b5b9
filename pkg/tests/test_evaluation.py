import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossmask.errors import ParameterError, ValidationError
from crossmask.evaluation import (MetricsReport, ablation_trend, bench, confusion, forged_stream_rates,
                                  hardware_descriptor, write_ablation)
from crossmask.models import DetectorConfig, DetectorNet, ForgeryConfig, ForgeryNet, SegmentorConfig, SegmentorNet
from crossmask.pipeline import Pipeline, Verdict


def test_confusion_worked_example():
    r = confusion([1, 1, 1, 0, 0, 0, 0, 0], [1, 1, 0, 0, 0, 0, 1, 1])
    assert (r.tp, r.fp, r.tn, r.fn) == (2, 1, 3, 2)
    assert (r.acc, r.fpr, r.tpr) == pytest.approx((0.625, 0.25, 0.5))


def test_perfect_and_inverted():
    y = [0, 1, 1, 0, 1]
    r = confusion(y, y)
    assert (r.acc, r.fpr, r.tpr) == (1.0, 0.0, 1.0)
    r = confusion([1 - v for v in y], y)
    assert (r.acc, r.fpr, r.tpr) == (0.0, 1.0, 0.0)


def test_undefined_rates_serialise():
    r = confusion([1, 1], [1, 1])
    assert r.fpr is None and r.tpr == 1.0
    d = r.to_dict()
    assert d["fpr"] == "undefined"
    assert MetricsReport.from_dict(d) == r
    assert "undefined" in r.table()


@pytest.mark.parametrize("preds,labels", [([], []), ([0, 1], [0]), ([0, 2], [0, 1]), ([[0]], [[0]])])
def test_confusion_rejects_bad_input(preds, labels):
    with pytest.raises(ValidationError):
        confusion(preds, labels)


pairs = st.integers(1, 60).flatmap(lambda n: st.tuples(st.lists(st.integers(0, 1), min_size=n, max_size=n),
                                                       st.lists(st.integers(0, 1), min_size=n, max_size=n)))


@settings(max_examples=200, deadline=None)
@given(pairs, st.randoms(use_true_random=False))
def test_confusion_invariants(pl, rnd):
    p, y = pl
    r = confusion(p, y)
    assert r.total == len(p)
    assert r.acc == pytest.approx(1 - (r.fp + r.fn) / r.total)
    order = list(range(len(p)))
    rnd.shuffle(order)
    assert confusion([p[i] for i in order], [y[i] for i in order]) == r


def test_forged_stream_rates():
    vs = [Verdict(s, 0.0, forged=(10 <= s < 20), latency_us=1) for s in range(30)]
    out = forged_stream_rates(vs, (10, 25), g=5)
    # clips fully inside start in [10, 20]; 10..19 alert, 20 does not
    assert out["clips_forged"] == 11 and out["alert_rate_forged"] == pytest.approx(10 / 11)
    assert out["clips_genuine"] == 6 + 5 and out["alert_rate_genuine"] == 0.0
    assert forged_stream_rates([], (0, 5), 3)["alert_rate_forged"] == "undefined"


def test_ablation_csv_and_trend(tmp_path):
    rows = [{"param": "g", "value": 3, "acc": 0.7, "fpr": 0.2, "tpr": 0.6},
            {"param": "g", "value": 7, "acc": 0.9, "fpr": 0.1, "tpr": 0.9}]
    path = write_ablation(rows, tmp_path / "m" / "ablation_g.csv")
    back = list(csv.DictReader(open(path)))
    assert list(back[0]) == ["param", "value", "acc", "fpr", "tpr"]
    assert [float(r["acc"]) for r in back] == [0.7, 0.9]
    assert ablation_trend(rows)
    assert not ablation_trend(rows[::-1] + [{"param": "g", "value": 9, "acc": 0.5}])
    assert not ablation_trend([{"value": 1, "acc": "undefined"}, {"value": 2, "acc": 0.5}])


def test_bench_reports_positive_rates():
    hw = (32, 48)
    pipe = Pipeline(DetectorNet(DetectorConfig(m=2, k=6, n_links=4, conv_channels=(4, 4), hidden=4, fc=4)),
                    SegmentorNet(SegmentorConfig(in_channels=12, hw=hw, widths=(4, 4, 4, 4, 4), context=8)),
                    ForgeryNet(ForgeryConfig(g=3, hw=hw, pool=2, widths=(2, 2, 2, 2), hidden=4, fc=4)), 3, hw)
    rng = np.random.default_rng(0)
    out = bench(pipe, rng.normal(size=(6, 12, 2, 2)), rng.integers(0, 2, (6,) + hw), warmup=1, iters=2)
    assert set(out["fps"]) == {"detector", "segmentor", "forgery"}
    assert all(v > 0 for v in out["fps"].values())
    assert out["hardware"] == hardware_descriptor()
    with pytest.raises(ParameterError):
        bench(pipe, rng.normal(size=(2, 12, 2, 2)), np.zeros((2,) + hw), iters=1)
