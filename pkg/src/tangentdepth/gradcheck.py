"""Central finite-difference checks for the autograd engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag

REL_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    worst: str
    checked: int

    def ok(self, tol: float = 1e-3) -> bool:
        return self.max_rel_err < tol


def rel_error(a, b, floor: float = REL_FLOOR):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(
    fn: Callable[[], ag.Tensor],
    inputs: dict[str, ag.Tensor],
    name: str = "",
    eps: float = 1e-4,
    max_entries: int | None = 6,
    seed: int = 0,
) -> GradCheckResult:
    """Compare backprop gradients of scalar ``fn()`` against central differences.

    ``inputs`` are float64 leaf tensors that ``fn`` reads; their ``data`` is
    perturbed in place and restored. With ``max_entries`` set, a seeded
    sample of that many entries per input is checked.
    """
    for t in inputs.values():
        if t.dtype != np.float64:
            raise TypeError("gradient checks need float64 inputs")
        t.requires_grad = True
        t.grad = None
    out = fn()
    if out.data.size != 1:
        raise ValueError("fn must return a scalar")
    ag.backward(out)
    analytic = {k: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for k, t in inputs.items()}

    rng = np.random.default_rng(seed)
    worst, worst_at, checked = 0.0, "", 0
    with ag.no_grad():
        for key, t in inputs.items():
            flat = t.data.reshape(-1)
            picks = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                picks = rng.choice(flat.size, size=max_entries, replace=False)
            for j in picks:
                orig = flat[j]
                flat[j] = orig + eps
                up = float(fn().data)
                flat[j] = orig - eps
                down = float(fn().data)
                flat[j] = orig
                numeric = (up - down) / (2 * eps)
                err = float(rel_error(analytic[key].reshape(-1)[j], numeric))
                checked += 1
                if err > worst:
                    worst, worst_at = err, f"{key}[{j}]"
    return GradCheckResult(name, worst, worst_at, checked)
