"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, fresh_tape, no_grad


class GradCheckError(ArithmeticError):
    """Raised for non-finite evaluations or a kink at the checked point."""

    def __init__(self, message: str, component: int):
        super().__init__(message)
        self.component = component


def _eval(f, x) -> float:
    with no_grad():
        val = f(x)
    return float(val.data.reshape(-1)[0]) if isinstance(val, Tensor) else float(val)


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    max_components: int | None = None,
    seed: int = 0,
    kink_tol: float = 1e-2,
) -> float:
    """Max over components of |analytic - central difference| / max(1, |analytic|).

    ``x`` must be a leaf with ``requires_grad``; ``f`` may read ``x`` directly
    (e.g. a model parameter) since components are perturbed in place and
    restored.  ``max_components`` samples a seeded subset of components.
    A component whose one-sided differences disagree by more than ``kink_tol``
    (relative) is reported as non-differentiable rather than passed.
    """
    if not x.requires_grad:
        raise ValueError("grad_check needs a tensor with requires_grad=True")
    saved_grad = x.grad
    x.grad = None
    with fresh_tape():
        y = f(x)
        if y.size != 1:
            raise ValueError(f"grad_check needs a scalar function, got shape {y.shape}")
        if not np.all(np.isfinite(y.data)):
            raise GradCheckError("non-finite value at the checked point", -1)
        backward(y)
    analytic = np.zeros(x.shape) if x.grad is None else x.grad.copy()
    x.grad = saved_grad

    flat = x.data.reshape(-1)
    comps = np.arange(flat.size)
    if max_components is not None and flat.size > max_components:
        comps = np.sort(np.random.default_rng(seed).choice(flat.size, max_components, replace=False))
    f0 = _eval(f, x)
    a_flat = analytic.reshape(-1)
    worst = 0.0
    for i in comps:
        orig = flat[i]
        try:
            flat[i] = orig + h
            fp = _eval(f, x)
            flat[i] = orig - h
            fm = _eval(f, x)
        finally:
            flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradCheckError(f"non-finite value when perturbing component {i}", int(i))
        central = (fp - fm) / (2 * h)
        fwd, bwd = (fp - f0) / h, (f0 - fm) / h
        if abs(fwd - bwd) > kink_tol * max(1.0, abs(central)):
            raise GradCheckError(
                f"component {i}: one-sided slopes {fwd:.6g} and {bwd:.6g} disagree (non-differentiable point)",
                int(i),
            )
        a = a_flat[i]
        if not np.isfinite(a):
            raise GradCheckError(f"non-finite analytic gradient at component {i}", int(i))
        worst = max(worst, abs(a - central) / max(1.0, abs(a)))
    return worst
