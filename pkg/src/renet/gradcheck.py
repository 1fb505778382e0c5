"""Gradient verification against central finite differences.

`grad_check` takes a builder that returns named parameter tensors plus a
deterministic closure which re-runs the forward pass on a fresh graph and
returns (graph, scalar loss). The closure must be deterministic across
calls (re-seed any dropout rng inside it), or finite differences are
meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericsError

__all__ = ["grad_check", "GradCheckReport"]


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    per_param: dict = field(default_factory=dict)

    def __str__(self):
        lines = [f"max relative error {self.max_rel_err:.3e} (worst: {self.worst_param})"]
        for name, err in sorted(self.per_param.items()):
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def grad_check(build_fn, eps=1e-5, atol=1e-6):
    """Compare analytic gradients with central differences, per element.

    build_fn() -> (params, run) where params is a dict name -> Tensor and
    run() -> (Graph, loss Tensor). Relative error per element is
    |a - f| / max(|a|, |f|, atol); the report carries the max over every
    element of every parameter.
    """
    params, run = build_fn()
    for p in params.values():
        p.requires_grad = True
        p.grad = None

    graph, loss = run()
    if loss.data.size != 1:
        raise ValueError("build_fn's run() must produce a scalar loss")
    graph.backward(loss)
    analytic = {}
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} received no gradient")
        analytic[name] = np.array(p.grad, dtype=np.float64, copy=True)

    def loss_value():
        _, out = run()
        v = float(out.data.reshape(-1)[0])
        if not np.isfinite(v):
            raise NumericsError("non-finite loss during finite differencing")
        return v

    per_param = {}
    worst = ("", 0.0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a = analytic[name].reshape(-1)
        err_max = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_value()
            flat[i] = orig - eps
            f_minus = loss_value()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(a[i]), abs(fd), atol)
            err = abs(a[i] - fd) / denom
            if err > err_max:
                err_max = err
        per_param[name] = err_max
        if err_max >= worst[1]:
            worst = (name, err_max)
    return GradCheckReport(max_rel_err=worst[1], worst_param=worst[0], per_param=per_param)
