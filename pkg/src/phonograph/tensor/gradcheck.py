"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from phonograph.tensor.core import Tensor, no_grad

# Denominator floors for the relative error. Structural zeros (a key bias
# under softmax, say) would otherwise compare pure round-off against zero.
REL_FLOOR = 1e-6
SCALE_FLOOR = 1e-3  # fraction of the input's largest analytic gradient
# A probe whose one-sided slopes disagree straddles a kink (LeakyReLU, max);
# it is re-measured with these shorter steps, as multiples of ``step``.
KINK_STEPS = (1e-1, 1e-2)


@dataclass
class GradcheckReport:
    passed: bool
    max_rel_err: float
    worst: tuple | None  # (input index, flat coordinate)
    checked: int
    tol: float
    non_finite: tuple | None = None
    errors: list = field(default_factory=list, repr=False)
    kinks: int = 0  # probes re-measured with a shorter step

    def __str__(self):
        if self.non_finite is not None:
            return f"FAIL non-finite value at input {self.non_finite[0]} coord {self.non_finite[1]}"
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_err:.3e} over {self.checked} coords (tol {self.tol:g})"


def rel_error(analytic, numeric, scale=0.0):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR, SCALE_FLOOR * scale)


def gradcheck(f, x, step=1e-5, tol=1e-4, max_coords=None, rng=None):
    """Compare analytic gradients of a scalar function with central differences.

    ``x`` is a Tensor or a list of Tensors; ``f`` takes no arguments and
    reads them (closures make it easy to check model weights in place). With
    ``max_coords`` only that many randomly chosen coordinates per input are
    probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    inputs = [x] if isinstance(x, Tensor) else list(x)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = f()
    if out.data.size != 1:
        raise ValueError(f"gradcheck needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        return GradcheckReport(False, float("inf"), None, 0, tol, non_finite=(-1, -1))
    out.backward()
    rng = np.random.default_rng(0) if rng is None else rng

    worst, worst_at, checked, errors, kinks = 0.0, None, 0, [], 0
    with no_grad():
        for k, t in enumerate(inputs):
            analytic = np.zeros(t.shape) if t.grad is None else t.grad
            scale = float(np.abs(analytic).max()) if analytic.size else 0.0
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            for c in coords:
                a = float(analytic.reshape(-1)[c])
                numeric, up, down = _central(f, flat, c, step)
                if not (np.isfinite(numeric) and np.isfinite(a)):
                    return GradcheckReport(False, float("inf"), (k, int(c)), checked, tol, non_finite=(k, int(c)))
                err = rel_error(a, numeric, scale)
                if err >= tol:
                    mid = f().item()
                    if rel_error((up - mid) / step, (mid - down) / step, scale) >= tol:
                        kinks += 1
                        for factor in KINK_STEPS:
                            err = min(err, rel_error(a, _central(f, flat, c, step * factor)[0], scale))
                errors.append(err)
                checked += 1
                if err > worst or worst_at is None:
                    worst, worst_at = max(err, worst), (k, int(c))
    return GradcheckReport(worst < tol, worst, worst_at, checked, tol, errors=errors, kinks=kinks)


def _central(f, flat, c, step):
    orig = flat[c]
    flat[c] = orig + step
    up = f().item()
    flat[c] = orig - step
    down = f().item()
    flat[c] = orig
    return (up - down) / (2.0 * step), up, down
