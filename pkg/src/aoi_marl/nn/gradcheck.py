"""Central finite-difference gradient oracle.

Used by the test suite to validate every analytic gradient in the stack.
The oracle perturbs raw parameter entries and re-runs the forward pass,
so it is independent of the reverse-mode machinery it checks.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward, monitor_kinks


def numeric_gradient(loss_fn: Callable[[], Tensor], param: Parameter,
                     h: float = 1e-5, entries: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences of loss_fn w.r.t. selected flat entries of param.

    Returns an array over ``entries`` (all entries when None). The
    parameter values are restored exactly afterwards.
    """
    flat = param.data.reshape(-1)
    entries = list(range(flat.size)) if entries is None else list(entries)
    grads = np.empty(len(entries))
    for k, i in enumerate(entries):
        original = flat[i]
        flat[i] = original + h
        up = float(loss_fn().data)
        flat[i] = original - h
        down = float(loss_fn().data)
        flat[i] = original
        grads[k] = (up - down) / (2.0 * h)
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       floor: float = 1e-6) -> float:
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(loss_fn: Callable[[], Tensor], params: Iterable[Parameter],
                    h: float = 1e-5, entries_per_param: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> float:
    """Compare reverse-mode gradients of loss_fn against finite differences.

    Returns the worst relative error over all checked entries. When
    ``entries_per_param`` is given, only that many randomly chosen entries
    of each parameter are checked (for large composites).

    Central differences carry roundoff noise of order eps * |loss| / h, so
    entries below that resolution cannot be certified by the oracle; the
    comparison floor scales with the loss magnitude to account for it.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {p.id: p.grad.copy() for p in params}
    for p in params:
        p.zero_grad()
    eps = np.finfo(np.float64).eps
    floor = max(1e-6, 1e4 * eps * max(1.0, abs(float(loss.data))) / h)

    worst = 0.0
    for p in params:
        size = p.data.size
        if entries_per_param is not None and entries_per_param < size:
            if rng is None:
                rng = np.random.default_rng(0)
            entries = rng.choice(size, size=entries_per_param, replace=False)
        else:
            entries = range(size)
        entries = list(entries)
        numeric = numeric_gradient(loss_fn, p, h=h, entries=entries)
        err = max_relative_error(analytic[p.id].reshape(-1)[entries], numeric, floor=floor)
        worst = max(worst, err)
    return worst


def sample_away_from_kinks(make_loss: Callable[[], tuple], margin: float = 1e-3,
                           max_tries: int = 200):
    """Resample a random instance until no ReLU/absolute input is near 0.

    ``make_loss`` builds a fresh random instance and returns
    ``(loss_fn, params)``; the instance is accepted when a forward pass
    keeps every kink input at least ``margin`` away from zero, which keeps
    central differences with h << margin well-defined.
    """
    for _ in range(max_tries):
        loss_fn, params = make_loss()
        with monitor_kinks() as monitor:
            loss_fn()
        if monitor.min_gap >= margin:
            return loss_fn, params
    raise RuntimeError("could not sample an instance away from activation kinks")
