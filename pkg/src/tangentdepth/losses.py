"""BerHu depth loss and standard monocular depth metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag

BERHU_FRACTION = 0.2
DELTA_BASE = 1.25


class EmptyMaskError(ValueError):
    pass


def _check_mask(gt, mask):
    mask = np.ones(np.shape(gt), dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, bool), np.shape(gt))
    n = int(mask.sum())
    if n == 0:
        raise EmptyMaskError("mask selects no valid pixels")
    return mask, n


def berhu_border(pred, gt, mask=None) -> float:
    pred = ag.as_tensor(pred).data
    mask, _ = _check_mask(gt, mask)
    return float(BERHU_FRACTION * np.max(np.where(mask, np.abs(np.asarray(gt) - pred), 0.0)))


def berhu(pred, gt, mask=None) -> ag.Tensor:
    """Reverse Huber loss, mean over valid pixels.

    The border is c = 0.2 * max residual over everything passed in, so a
    stacked batch shares one c. Residuals <= c are penalized linearly,
    larger ones by (r^2 + c^2) / (2c). The gradient includes the dependence
    of c on the largest residual; at the knee the linear branch is used.
    """
    pred = ag.as_tensor(pred)
    gt = np.asarray(gt, dtype=pred.dtype)
    mask, count = _check_mask(gt, mask)
    m = mask.astype(pred.dtype)
    r = (gt - pred.data) * m
    a = np.abs(r)
    flat_arg = int(np.argmax(a))
    c = pred.dtype.type(BERHU_FRACTION) * a.flat[flat_arg]
    if c == 0:
        return ag.make_node(np.asarray(0.0, dtype=pred.dtype), (pred,), lambda g: (np.zeros_like(pred.data),))
    quad = a > c
    per_pixel = np.where(quad, (a * a + c * c) / (2 * c), a)
    loss = per_pixel.sum() / count

    def bw(g):
        dl_da = np.where(quad, a / c, 1.0).astype(pred.dtype)
        dl_dc = np.where(quad, 0.5 - (a * a) / (2 * c * c), 0.0).sum()
        da = dl_da
        da.flat[flat_arg] += dl_dc * BERHU_FRACTION
        # a = |gt - pred| on valid pixels
        return (-(g / count) * da * np.sign(r),)

    return ag.make_node(np.asarray(loss, dtype=pred.dtype), (pred,), bw)


@dataclass
class LossReport:
    per_iteration: list[float]
    total: float
    borders: list[float]
    valid_count: int
    step: int = 0
    lr: float = 0.0

    def line(self) -> str:
        its = " ".join(f"iter{i + 1}={v:.9g}" for i, v in enumerate(self.per_iteration))
        return f"step={self.step} lr={self.lr:.9g} loss={self.total:.9g} {its} border={self.borders[-1]:.9g}"


def total_loss(per_iteration: list) -> ag.Tensor:
    """Sum of per-iteration losses."""
    if not per_iteration:
        raise ValueError("no iteration losses to sum")
    total = per_iteration[0]
    for term in per_iteration[1:]:
        total = total + term
    return total


@dataclass
class MetricsRecord:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    count: int = field(default=0, compare=False)

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("count")
        return d

    def lines(self) -> list[str]:
        return [f"{k}={v:.6g}" for k, v in self.as_dict().items()]


def metrics(pred, gt, mask=None) -> MetricsRecord:
    """Depth metrics over valid pixels. delta_t counts max(p/g, g/p) < t (strict)."""
    pred = np.asarray(ag.as_tensor(pred).data, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    if mask is None:
        mask = np.isfinite(gt) & np.isfinite(pred)
    mask, n = _check_mask(gt, mask)
    p, g = pred[mask], gt[mask]
    if np.any(g <= 0) or np.any(p <= 0):
        raise ValueError("depths must be positive on valid pixels")
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return MetricsRecord(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff * diff / g)),
        rmse=float(np.sqrt(np.mean(diff * diff))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < DELTA_BASE)),
        delta2=float(np.mean(ratio < DELTA_BASE**2)),
        delta3=float(np.mean(ratio < DELTA_BASE**3)),
        count=n,
    )
