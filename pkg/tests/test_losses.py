import math

import numpy as np
import pytest

from tangentdepth import autograd as ag
from tangentdepth.checks import METRIC_FIXTURE
from tangentdepth.losses import (
    BERHU_FRACTION,
    EmptyMaskError,
    LossReport,
    MetricsRecord,
    berhu,
    berhu_border,
    metrics,
    total_loss,
)


def test_berhu_single_pixel_fixture():
    assert float(berhu(np.array([2.0]), np.array([3.0])).data) == 2.6


def test_berhu_zero_at_equality():
    assert float(berhu(np.array([1.0, 4.0]), np.array([1.0, 4.0])).data) == 0.0


def test_berhu_branches():
    # residuals 1 and 0.1: c = 0.2, the small one is linear, the large quadratic
    loss = float(berhu(np.array([0.0, 0.0]), np.array([1.0, 0.1])).data)
    assert loss == pytest.approx((2.6 + 0.1) / 2)


def test_berhu_continuous_at_knee():
    c = 0.31
    below = abs(c)
    above = (c * c + c * c) / (2 * c)
    assert abs(below - above) < 1e-12


def test_berhu_mask_and_mean():
    pred = np.array([0.0, 0.0, 5.0])
    gt = np.array([1.0, 0.1, 0.0])
    mask = np.array([True, True, False])
    assert float(berhu(pred, gt, mask).data) == pytest.approx(1.35)
    assert berhu_border(pred, gt, mask) == pytest.approx(BERHU_FRACTION)
    with pytest.raises(EmptyMaskError):
        berhu(pred, gt, np.zeros(3, bool))


def test_berhu_gradient_includes_border(rng):
    from tangentdepth.gradcheck import check_gradients

    gt = rng.uniform(1, 3, 20)
    p = ag.Tensor(gt + rng.normal(0, 0.5, 20))
    res = check_gradients(lambda: berhu(p, gt), {"p": p}, max_entries=None)
    assert res.ok(), res


def test_berhu_batch_shares_border():
    pred = np.zeros((2, 2))
    gt = np.array([[1.0, 1.0], [0.1, 0.1]])
    joint = float(berhu(pred, gt).data)
    # second image alone would use c = 0.02 and be penalized quadratically
    assert joint == pytest.approx((2 * 2.6 + 0.2) / 4)


def test_total_loss_linearity(rng):
    x = ag.Tensor(rng.normal(size=5), requires_grad=True)
    terms = [lambda: ag.tsum(x * x), lambda: ag.tsum(ag.silu(x))]
    ag.backward(total_loss([t() for t in terms]))
    joint = x.grad.copy()
    parts = []
    for t in terms:
        x.grad = None
        ag.backward(t())
        parts.append(x.grad.copy())
    np.testing.assert_allclose(joint, parts[0] + parts[1], atol=1e-12)
    with pytest.raises(ValueError):
        total_loss([])


def test_loss_report_line():
    r = LossReport([0.5, 0.25], 0.75, [0.1, 0.2], 10, step=3, lr=1e-3)
    assert r.line() == "step=3 lr=0.001 loss=0.75 iter1=0.5 iter2=0.25 border=0.2"


def test_metrics_identity():
    g = np.array([1.0, 2.0, 3.0])
    rec = metrics(g, g)
    assert rec.abs_rel == rec.rmse == rec.sq_rel == rec.rmse_log == 0
    assert rec.delta1 == rec.delta2 == rec.delta3 == 1


def test_metrics_uniform_scale():
    g = np.linspace(1, 5, 50)
    rec = metrics(1.3 * g, g)
    assert rec.delta1 == 0 and rec.delta2 == 1


def test_metrics_fixture():
    rec = metrics(np.array([1.0, 1.0, 4.0, 10.0]), np.array([1.0, 2.0, 4.0, 8.0])).as_dict()
    for key, value in METRIC_FIXTURE.items():
        assert rec[key] == pytest.approx(value, abs=1e-9), key


def test_metrics_fixture_by_hand():
    # per pixel |p-g|/g = 0, 1/2, 0, 1/4 ; (p-g)^2/g = 0, 1/2, 0, 1/2
    assert METRIC_FIXTURE["abs_rel"] == 0.75 / 4
    assert METRIC_FIXTURE["sq_rel"] == 1.0 / 4
    assert METRIC_FIXTURE["rmse"] == math.sqrt(5 / 4)


def test_delta_boundary_is_strict():
    rec = metrics(np.array([1.25]), np.array([1.0]))
    assert rec.delta1 == 0.0 and rec.delta2 == 1.0


@pytest.mark.parametrize("k", [0.5, 2.0])
def test_metrics_scaling(rng, k):
    g = rng.uniform(0.5, 5, 200)
    p = g * rng.uniform(0.7, 1.4, 200)
    a, b = metrics(p, g), metrics(k * p, k * g)
    assert b.abs_rel == pytest.approx(a.abs_rel, abs=1e-12)
    assert (b.delta1, b.delta2, b.delta3) == (a.delta1, a.delta2, a.delta3)
    assert b.rmse == pytest.approx(k * a.rmse, rel=1e-12)
    assert b.sq_rel == pytest.approx(k * a.sq_rel, rel=1e-12)
    assert b.rmse_log == pytest.approx(a.rmse_log, abs=1e-12)


def test_metrics_errors():
    with pytest.raises(ValueError):
        metrics(np.array([1.0, -1.0]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        metrics(np.ones(2), np.ones(3))
    with pytest.raises(EmptyMaskError):
        metrics(np.ones(2), np.ones(2), np.zeros(2, bool))


def test_metrics_mask_ignores_invalid():
    rec = metrics(np.array([1.0, -5.0]), np.array([1.0, 1.0]), np.array([True, False]))
    assert rec.abs_rel == 0 and rec.count == 1


def test_metrics_lines():
    rec = MetricsRecord(0, 0.5, 1, 2, 1, 1, 1)
    assert rec.lines()[0] == "abs_rel=0" and rec.lines()[4] == "delta1=1"


def test_masked_pixels_get_no_gradient():
    p = ag.Tensor(np.array([0.0, 0.0, 7.0]), requires_grad=True)
    ag.backward(berhu(p, np.array([1.0, 0.5, 0.0]), np.array([True, True, False])))
    assert p.grad[2] == 0 and p.grad[0] != 0
