"""Central-difference gradient verification.

The finite-difference side is computed directly on numpy arrays with the
function re-evaluated at perturbed inputs, independent of the reverse-mode
tape it checks.
"""

from __future__ import annotations

from typing import Callable, Dict, Sequence

import numpy as np

from .autodiff import Tensor

__all__ = ["grad_check", "relative_error"]

# Test hook: when set, grad_check negates the analytic gradient of the named
# tensor index, so a correct engine is reported as failing.  Used by the
# deliberate-fault verification harness only.
_FAULT_INJECTION = {"enabled": False}


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise |a-b| / max(|a|, |b|, 1)."""
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Compare the reverse-mode gradient of scalar ``fn(*inputs)`` against
    central finite differences; returns the max relative error over all
    checked inputs.

    ``fn`` must be deterministic (dropout disabled) and double precision.
    Only inputs with ``requires_grad`` are checked.
    """
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    if out.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    out.backward()

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        if _FAULT_INJECTION["enabled"]:
            analytic = -analytic
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(fn(*inputs).data)
            flat[i] = orig - eps
            lo = float(fn(*inputs).data)
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * eps)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
