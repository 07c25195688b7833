from __future__ import annotations

import math

import torch

from ..errors import NumericError


def _value(fn) -> float:
    with torch.no_grad():
        v = float(fn())
    if not math.isfinite(v):
        raise NumericError(f"function value is not finite ({v})")
    return v


def gradcheck(fn, params, eps=1e-5, dtype=torch.float64):
    """Max relative error between autograd and central finite differences.

    ``fn`` takes no arguments and returns a scalar tensor built from
    ``params``. Per coordinate the error is ``|a - n| / max(1e-12, |a| + |n|)``.
    """
    params = list(params)
    for p in params:
        if p.dtype != dtype:
            raise TypeError(f"gradcheck expects {dtype} parameters, got {p.dtype}")
    out = fn()
    if not torch.isfinite(out).all():
        raise NumericError("function value is not finite")
    analytic = torch.autograd.grad(out, params, allow_unused=True)
    worst = 0.0
    for p, a in zip(params, analytic):
        a = torch.zeros_like(p) if a is None else a.detach()
        if not torch.isfinite(a).all():
            raise NumericError("analytic gradient is not finite")
        flat = p.data.view(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            f_plus = _value(fn)
            flat[i] = orig - eps
            f_minus = _value(fn)
            flat[i] = orig
            num = (f_plus - f_minus) / (2.0 * eps)
            ai = a_flat[i].item()
            err = abs(ai - num) / max(1e-12, abs(ai) + abs(num))
            worst = max(worst, err)
    return worst
