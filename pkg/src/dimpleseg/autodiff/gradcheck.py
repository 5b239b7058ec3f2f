"""Central finite-difference gradient checking.

The numeric side only ever calls the forward function on perturbed copies of
the inputs; it never touches the tape, so it is an independent oracle for the
analytic gradients produced by ``backward``.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradcheckResult:
    max_rel_error: float
    per_input: list[float]

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


@contextmanager
def _cast(t: Tensor, dtype):
    if dtype is None:
        yield
        return
    original = t.data
    t.data = original.astype(dtype)
    try:
        yield
    finally:
        t.data = original


def numerical_grad(
    fn: Callable[[], Tensor],
    t: Tensor,
    h: float = 1e-5,
    indices: Optional[np.ndarray] = None,
    order: int = 2,
) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. entries of ``t``.

    ``indices`` restricts the probe to a subset of flat positions; other
    entries of the result stay zero. ``order=4`` applies one Richardson step,
    ``(4 D(h/2) - D(h)) / 3``, which cancels the h^2 truncation term and so
    tolerates a larger ``h``. That matters when the gradient is tiny next to
    ``|fn()|`` and roundoff ``eps |f| / h`` would otherwise dominate.
    """
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    flat = t.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    probe = range(flat.size) if indices is None else indices

    def central(i, step):
        # difference taken in the dtype of fn() so extended precision is kept
        orig = flat[i]
        flat[i] = orig + step
        fp = fn().data.reshape(-1)[0]
        flat[i] = orig - step
        fm = fn().data.reshape(-1)[0]
        flat[i] = orig
        return (fp - fm) / (2 * step)

    for i in probe:
        if order == 2:
            out[i] = central(i, h)
        else:
            out[i] = (4.0 * central(i, h / 2) - central(i, h)) / 3.0
    return out.reshape(t.shape)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_probes: Optional[int] = None,
    seed: int = 0,
    order: int = 2,
    numeric_dtype=None,
) -> GradcheckResult:
    """Compare analytic and finite-difference gradients of a scalar function.

    ``fn`` must rebuild its graph from ``inputs`` on every call. With
    ``max_probes`` set, at most that many randomly chosen entries per input
    are probed and the comparison is restricted to them.

    ``numeric_dtype`` (e.g. ``np.longdouble``) casts the probed input while
    differencing. Everything downstream of it is then promoted, which lowers
    the roundoff floor of the numeric side for gradients far smaller than
    ``|fn()|``. The analytic side is always float64.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradcheck needs float64 inputs")
        t.requires_grad = True
        t.grad = None
    root = fn()
    backward(root)
    rng = np.random.default_rng(seed)
    errors = []
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.copy()
        idx = None
        if max_probes is not None and t.size > max_probes:
            idx = np.sort(rng.choice(t.size, size=max_probes, replace=False))
        with _cast(t, numeric_dtype):
            numeric = numerical_grad(fn, t, h=h, indices=idx, order=order)
        if idx is not None:
            errors.append(_relative_error(analytic.reshape(-1)[idx], numeric.reshape(-1)[idx]))
        else:
            errors.append(_relative_error(analytic, numeric))
    return GradcheckResult(max(errors) if errors else 0.0, errors)


def directional_gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    n_directions: int = 4,
    h: float = 1e-5,
    seed: int = 0,
    numeric_dtype=None,
) -> float:
    """Worst relative error of the directional derivative along random directions.

    Perturbs every input at once along a random unit direction ``d`` and
    compares ``(f(x + h d) - f(x - h d)) / 2h`` against ``<grad, d>``. Cheap
    for models with many parameters where per-entry probing is too slow.
    ``numeric_dtype`` widens all inputs while differencing, as in
    :func:`gradcheck`.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("directional_gradcheck needs float64 inputs")
        t.requires_grad = True
        t.grad = None
    backward(fn())
    grads = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_directions):
        dirs = [rng.standard_normal(t.shape) for t in inputs]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        originals = [t.data for t in inputs]
        wide = originals if numeric_dtype is None else [o.astype(numeric_dtype) for o in originals]
        for t, d, o in zip(inputs, dirs, wide):
            t.data = o + h * d
        fp = fn().data.reshape(-1)[0]
        for t, d, o in zip(inputs, dirs, wide):
            t.data = o - h * d
        fm = fn().data.reshape(-1)[0]
        for t, o in zip(inputs, originals):
            t.data = o
        numeric = float((fp - fm) / (2 * h))
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        scale = max(abs(numeric), abs(analytic))
        if scale > 0:
            worst = max(worst, abs(numeric - analytic) / scale)
    return worst
