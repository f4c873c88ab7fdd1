"""Quadrature on reference simplices.

Rules are conical (collapsed) products of Gauss-Jacobi rules, so every
weight is positive and any degree is available in 1, 2 and 3 dimensions.
The reference simplex is ``{xi >= 0, sum(xi) <= 1}``; weights sum to its
volume ``1/d!``.
"""
from __future__ import annotations

from functools import lru_cache
from math import ceil

import numpy as np
from scipy.special import roots_jacobi


def _gauss_jacobi01(n: int, a: float):
    """n-point rule on [0, 1] for the weight (1 - s)^a."""
    x, w = roots_jacobi(n, a, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (a + 1.0)


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Points ``(nq, dim)`` and weights ``(nq,)`` exact for polynomials of ``degree``."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    n = max(1, ceil((degree + 1) / 2))
    if dim == 0:
        pts, wts = np.zeros((1, 0)), np.ones(1)
    elif dim == 1:
        s, w = _gauss_jacobi01(n, 0.0)
        pts, wts = s[:, None], w
    elif dim == 2:
        s, ws = _gauss_jacobi01(n, 1.0)
        t, wt = _gauss_jacobi01(n, 0.0)
        S, T = np.meshgrid(s, t, indexing="ij")
        pts = np.column_stack([S.ravel(), (T * (1 - S)).ravel()])
        wts = np.outer(ws, wt).ravel()
    elif dim == 3:
        s, ws = _gauss_jacobi01(n, 2.0)
        t, wt = _gauss_jacobi01(n, 1.0)
        r, wr = _gauss_jacobi01(n, 0.0)
        S, T, R = np.meshgrid(s, t, r, indexing="ij")
        pts = np.column_stack(
            [S.ravel(), (T * (1 - S)).ravel(), (R * (1 - S) * (1 - T)).ravel()]
        )
        wts = np.einsum("i,j,k->ijk", ws, wt, wr).ravel()
    else:
        raise ValueError(f"unsupported simplex dimension {dim}")
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts
