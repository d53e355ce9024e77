"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import HarnessError
from .tensor import Parameter


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    tol: float
    worst: dict = field(default_factory=dict)  # name -> (flat index, analytic, numeric)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"grad_check {status}: max relative error {self.max_rel_error:.3e} (tol {self.tol:.1e})"


def grad_check(f, params: list[Parameter], h: float = 1e-5, tol: float = 1e-4,
               max_coords_per_param: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare the analytic gradient of scalar ``f(params)`` against central
    finite differences (f(p+h) - f(p-h)) / 2h, coordinate by coordinate.

    ``f`` takes no arguments and must read the parameters' current values; it
    must be deterministic, which is verified by evaluating it twice. For large
    tensors a random subset of ``max_coords_per_param`` coordinates is checked.
    """
    if h <= 0:
        raise HarnessError("grad_check: h must be positive")
    v1 = float(f().data)
    v2 = float(f().data)
    if v1 != v2:
        raise HarnessError(f"grad_check: f is not deterministic ({v1!r} != {v2!r})")

    for p in params:
        p.zero_grad()
    out = f()
    if out.data.size != 1:
        raise HarnessError("grad_check: f must return a scalar")
    out.backward()

    rng = np.random.default_rng(seed)
    max_rel = 0.0
    worst = {}
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = np.arange(n)
        analytic = p.grad.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            denom = max(abs(analytic[i]), abs(numeric), 1e-8)
            rel = abs(analytic[i] - numeric) / denom
            if rel > max_rel:
                max_rel = rel
                worst = {p.name: (int(i), float(analytic[i]), float(numeric))}
    return GradCheckReport(max_rel_error=max_rel, passed=max_rel <= tol, tol=tol, worst=worst)
