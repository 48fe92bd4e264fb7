"""Central finite-difference gradient checking in float64."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor, backward


def check_gradients(fn: Callable[[], Tensor], params: Mapping[str, Tensor], *,
                    step: float = 1e-3, max_samples: int = 24, seed: int = 0,
                    atol: float = 1e-7) -> dict:
    """Compare tape gradients of ``fn()`` with central differences.

    ``params`` should be float64 leaves with ``requires_grad`` set; ``fn``
    must rebuild the scalar loss from their current ``.data``.  For each
    tensor up to ``max_samples`` entries are probed.  The returned error per
    tensor is ``|a - n|_2 / max(|a|_2, |n|_2, atol)`` over the probed entries.
    """
    with Tape() as tape:
        loss = fn()
    backward(tape, loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    rng = np.random.default_rng(seed)
    errors = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        if flat.size <= max_samples:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, size=max_samples, replace=False))
        num = np.empty(idx.size)
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = fn().item()
            flat[i] = orig - step
            f_minus = fn().item()
            flat[i] = orig
            num[k] = (f_plus - f_minus) / (2 * step)
        ana = analytic[name].reshape(-1)[idx]
        denom = max(np.linalg.norm(ana), np.linalg.norm(num), atol)
        errors[name] = float(np.linalg.norm(ana - num) / denom)
    return errors


def random_projection_loss(out: Tensor, seed: int = 1) -> Callable[[Tensor], Tensor]:
    """A smooth scalar loss ``sum(out * r)`` with a fixed random ``r``."""
    from . import ops

    r = Tensor(np.random.default_rng(seed).standard_normal(out.shape), dtype=out.dtype)
    return lambda y: ops.sum(ops.mul(y, r))
