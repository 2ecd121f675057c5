"""Independent finite-difference gradient oracle.

The oracle never touches the reverse-mode machinery: it reevaluates the
scalar function with each coordinate nudged by +/-h and forms central
differences. Deliberately simple; its value is that it cannot share a bug
with `autodiff.backward`.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import Parameter
from .errors import NumericError

DEFAULT_H = 1e-5


def finite_diff_gradient(
    f: Callable[[], float],
    params: Sequence[Parameter],
    h: float = DEFAULT_H,
    coords: dict[str, Iterable[int]] | None = None,
) -> dict[str, np.ndarray]:
    """Central differences (f(p+h e_k) - f(p-h e_k)) / 2h per coordinate.

    `f` must be a deterministic function of the current parameter values.
    `coords` optionally restricts the flat coordinate indices checked per
    parameter name; unchecked entries are returned as NaN. Parameters are
    restored bit-exactly before returning.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    grads: dict[str, np.ndarray] = {}
    for p in params:
        flat = p.data.reshape(-1)
        g = np.full(flat.shape, np.nan)
        indices = range(flat.size) if coords is None else coords.get(p.name, ())
        for k in indices:
            orig = flat[k]
            flat[k] = orig + h
            fp = float(f())
            flat[k] = orig - h
            fm = float(f())
            flat[k] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(
                    f"function returned non-finite value near {p.name}[{k}]",
                    op="finite_diff",
                )
            g[k] = (fp - fm) / (2.0 * h)
        grads[p.name] = g.reshape(p.data.shape)
    return grads


def relative_errors(
    analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8
) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise.

    The floor keeps coordinates whose true gradient is (numerically) zero
    from reporting 0/0 noise as a mismatch.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def max_relative_error(
    analytic: dict[str, np.ndarray],
    numeric: dict[str, np.ndarray],
    floor: float | None = None,
) -> float:
    """Worst relative error across all checked coordinates.

    With `floor=None` the denominator floor is 1e-4 times the largest
    gradient magnitude seen: coordinates that many orders of magnitude
    below the dominant gradient carry central-difference truncation noise
    comparable to their own size, so they are held to absolute agreement
    at that floor instead of pure relative error.
    """
    if floor is None:
        scale = 0.0
        for name, num in numeric.items():
            mask = np.isfinite(num)
            if mask.any():
                scale = max(
                    scale,
                    float(np.abs(num[mask]).max()),
                    float(np.abs(analytic[name][mask]).max()),
                )
        floor = max(1e-8, 1e-4 * scale)
    worst = 0.0
    for name, num in numeric.items():
        mask = np.isfinite(num)
        if not mask.any():
            continue
        err = relative_errors(analytic[name][mask], num[mask], floor)
        worst = max(worst, float(err.max()))
    return worst
