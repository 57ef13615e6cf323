"""Central finite-difference gradient checking (f64 only)."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def finite_difference_check(f, arrays, wrt: int, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f takes len(arrays) Tensors and returns a scalar Tensor; the gradient is
    checked with respect to arrays[wrt]. Relative error is measured against
    the larger of the two gradient norms (floored to avoid 0/0).
    """
    tensors = [Tensor(np.asarray(a, dtype=np.float64), requires_grad=(i == wrt))
               for i, a in enumerate(arrays)]
    loss = f(*tensors)
    backward(loss)
    analytic = tensors[wrt].grad.copy()

    target = np.asarray(arrays[wrt], dtype=np.float64)
    numeric = np.zeros_like(target)
    flat = target.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(*[Tensor(a) for a in arrays]).item()
        flat[i] = orig - step
        fm = f(*[Tensor(a) for a in arrays]).item()
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2 * step)

    denom = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / denom)


def model_gradient_check(loss_fn, params: dict[str, "Tensor"], step: float = 1e-5) -> dict[str, float]:
    """Finite-difference check of d(loss)/d(param) for every named parameter.

    loss_fn rebuilds the graph from the parameters' current data, so in-place
    perturbation of param.data is enough for the numeric side. Returns max
    relative error per parameter.
    """
    for p in params.values():
        p.zero_grad()
    backward(loss_fn())
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    report = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = loss_fn().item()
            flat[i] = orig - step
            fm = loss_fn().item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * step)
        a = analytic[name].reshape(-1)
        denom = max(np.abs(a).max(), np.abs(numeric).max(), 1e-8)
        report[name] = float(np.abs(a - numeric).max() / denom)
    return report
