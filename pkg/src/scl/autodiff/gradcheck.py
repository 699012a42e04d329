"""Finite-difference verification of analytic gradients.

Checks run in float64 internally so that central differences are limited
by truncation error, not float32 rounding. Coordinates sitting on a kink
(one-sided slopes disagree, e.g. relu at exactly zero) are flagged and
excluded from the error statistic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .tensor import Tape, Tensor, backward

# Denominator floor for the relative error; coordinates where both the
# analytic and numeric gradient are below this count as matched.
_REL_FLOOR = 1e-4


@dataclass
class GradCheckReport:
    ok: bool
    max_rel_err: float
    n_checked: int
    kinks: list[int] = field(default_factory=list)
    note: str = ""

    def __str__(self) -> str:
        status = "ok" if self.ok else "FAIL"
        extra = f" ({self.note})" if self.note else ""
        return (f"gradcheck {status}: max rel err {self.max_rel_err:.3e} over "
                f"{self.n_checked} coords, {len(self.kinks)} kinks skipped{extra}")


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-3,
               tol: float = 1e-3, n_samples: Optional[int] = None,
               rng: Optional[np.random.Generator] = None,
               kink_tol: float = 0.01) -> GradCheckReport:
    """Compare the analytic gradient of scalar f at x against central differences.

    f must be deterministic and scalar-valued. x is perturbed in place, so f
    may either use its argument or close over the same tensor object (as model
    parameters do). If x is float32 the check is run on a float64 copy.

    A coordinate counts as a kink when its one-sided slopes disagree by more
    than kink_tol relative: a relu flipping anywhere inside [x-h, x+h] biases
    the central difference, so such coordinates are excluded rather than
    failed. Deep compositions should use a small h (1e-5) to keep the flip
    probability low.
    """
    if x.data.dtype != np.float64:
        x = Tensor(x.data.astype(np.float64), requires_grad=True)
    x.requires_grad = True
    x.grad = None

    with Tape() as tape:
        y = f(x)
    if y.data.size != 1:
        raise ValueError(f"grad_check: f must be scalar-valued, got shape {y.shape}")
    y0 = float(y.data.reshape(()))
    if not np.isfinite(y0):
        return GradCheckReport(False, np.inf, 0, note="non-finite output")
    backward(tape, y)
    if x.grad is None:
        analytic = np.zeros_like(x.data)
    else:
        analytic = x.grad

    flat = x.data.reshape(-1)
    ga = analytic.reshape(-1)
    if n_samples is not None and n_samples < flat.size:
        rng = rng if rng is not None else np.random.default_rng(0)
        coords = rng.choice(flat.size, size=n_samples, replace=False)
    else:
        coords = np.arange(flat.size)

    max_err = 0.0
    kinks: list[int] = []
    note = ""
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data.reshape(()))
        flat[i] = orig - h
        fm = float(f(x).data.reshape(()))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            return GradCheckReport(False, np.inf, len(coords),
                                   kinks, note="non-finite output under perturbation")
        d_plus = (fp - y0) / h
        d_minus = (y0 - fm) / h
        if abs(d_plus - d_minus) > kink_tol * (abs(d_plus) + abs(d_minus)) + 1e-8:
            kinks.append(int(i))
            continue
        numeric = (fp - fm) / (2.0 * h)
        err = abs(ga[i] - numeric) / max(abs(ga[i]), abs(numeric), _REL_FLOOR)
        max_err = max(max_err, err)

    if len(kinks) == len(coords):
        note = "all sampled coordinates sit on kinks"
    return GradCheckReport(max_err <= tol, max_err, len(coords) - len(kinks),
                           kinks, note)
