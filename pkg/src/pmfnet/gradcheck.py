"""Central-difference verification of reverse-mode gradients.

The harness reruns a scalar-valued computation with each parameter element
perturbed by +/-h and compares the symmetric difference quotient against the
gradient recorded by one backward pass. Verification is only meaningful at
float64; float32 parameters are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericsError, ShapeError
from .tensor import Tensor, no_grad


@dataclass
class PathResult:
    path: str
    max_rel_err: float
    n_elements: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_err <= tol


@dataclass
class GradCheckReport:
    tol: float
    h: float
    results: list[PathResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed(self.tol) for r in self.results)

    def failures(self) -> list[PathResult]:
        return [r for r in self.results if not r.passed(self.tol)]

    def max_errors(self) -> dict[str, float]:
        return {r.path: r.max_rel_err for r in self.results}


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def grad_check(f, params, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor; it must be
    deterministic and must read the parameter tensors in place. ``params``
    is an iterable of (path, Tensor) pairs, all float64.
    """
    params = list(params)
    for path, t in params:
        if t.data.dtype != np.float64:
            raise ShapeError(f"grad_check: parameter {path} must be float64, got {t.data.dtype.name}")
        t.grad = None

    loss = f()
    if loss.data.size != 1:
        raise ShapeError(f"grad_check: f must return a scalar, got shape {loss.shape}")
    base = loss.item()
    if not math.isfinite(base):
        raise NumericsError(f"grad_check: non-finite loss {base}")
    loss.backward()
    analytic = {
        path: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for path, t in params
    }

    report = GradCheckReport(tol=tol, h=h)
    for path, t in params:
        flat = t.data.reshape(-1)
        ga = analytic[path].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                up = f().item()
                flat[i] = orig - h
                down = f().item()
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericsError(f"grad_check: non-finite loss while perturbing {path}[{i}]")
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, _rel_err(float(ga[i]), numeric))
        report.results.append(PathResult(path=path, max_rel_err=worst, n_elements=flat.size))
    return report
