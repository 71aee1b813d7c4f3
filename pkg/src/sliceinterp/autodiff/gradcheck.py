"""Central finite-difference gradient checks (run under ``precision(np.float64)``)."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, index: tuple, h: float = 1e-4) -> float:
    old = t.data[index]
    with no_grad():
        t.data[index] = old + h
        plus = fn().item()
        t.data[index] = old - h
        minus = fn().item()
    t.data[index] = old
    return (plus - minus) / (2 * h)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-4,
    n_samples: int | None = None,
    rng: np.random.Generator | None = None,
    kink_retry: bool = True,
) -> float:
    """Largest |autodiff - fd| / max(1, |fd|) over the checked entries of ``inputs``.

    ``fn`` must rebuild the graph on each call.  With ``n_samples`` set, that
    many entries are drawn at random across all inputs instead of checking all.
    With ``kink_retry`` an entry that disagrees is re-estimated with ``h / 10``
    and the smaller error kept: a ReLU kink inside [x - h, x + h] corrupts the
    central difference, not the analytic gradient.
    """
    for t in inputs:
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    entries = [(k, idx) for k, t in enumerate(inputs) for idx in np.ndindex(t.shape)]
    if n_samples is not None and n_samples < len(entries):
        rng = rng or np.random.default_rng(0)
        entries = [entries[i] for i in rng.choice(len(entries), size=n_samples, replace=False)]

    worst = 0.0
    for k, idx in entries:
        fd = numerical_grad(fn, inputs[k], idx, h)
        err = abs(analytic[k][idx] - fd) / max(1.0, abs(fd))
        if kink_retry and err > 1e-6:
            fd = numerical_grad(fn, inputs[k], idx, h / 10)
            err = min(err, abs(analytic[k][idx] - fd) / max(1.0, abs(fd)))
        worst = max(worst, err)
    return worst
