"""Finite-difference verification of the reverse-mode gradients.

Central differences against the tape gradient, elementwise over one
probe tensor.  Callers build the function under test in float64; the
tolerances below assume that.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import VerificationError
from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"{status}  {self.name}: max rel err {self.max_rel_err:.3e} (tol {self.tol:.1e})"


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float | tuple[float, ...] = (1e-4, 1e-5),
    tol: float = 1e-3,
    name: str = "gradcheck",
    sample: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode d f/d x against central differences.

    f must map x to a scalar Tensor and be deterministic.  The relative
    error denominator is max(|fd|, |analytic|, 1e-8) per element.  With
    several steps the per-element best estimate counts: the larger step
    is roundoff-limited, the smaller one handles activation kinks.
    ``sample`` caps how many elements are probed (seeded choice without
    replacement); None probes all of them.
    """
    steps = (step,) if isinstance(step, float) else tuple(step)
    x.zero_grad()
    out = f(x)
    if out.size != 1:
        raise VerificationError(f"{name}: f must return a scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise VerificationError(f"{name}: f returned a non-finite value")
    out.backward()
    an = x.grad.copy().reshape(-1)

    flat = x.data.reshape(-1)
    if sample is not None and sample < flat.size:
        idx = np.random.default_rng(seed).choice(flat.size, size=sample, replace=False)
    else:
        idx = np.arange(flat.size)
    best = np.full(idx.size, np.inf)
    with no_grad():
        for h in steps:
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                hi = float(f(x).data)
                flat[i] = orig - h
                lo = float(f(x).data)
                flat[i] = orig
                fd = (hi - lo) / (2.0 * h)
                if not np.isfinite(fd):
                    raise VerificationError(f"{name}: non-finite finite-difference value")
                denom = max(abs(fd), abs(an[i]), 1e-8)
                best[j] = min(best[j], abs(fd - an[i]) / denom)

    return GradCheckReport(name=name, max_rel_err=float(best.max()), tol=tol)
