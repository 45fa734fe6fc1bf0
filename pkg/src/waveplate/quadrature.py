"""Gauss-type quadrature on segments and triangles.

Triangle rules are collapsed (Stroud conical) products of Gauss-Jacobi and
Gauss-Legendre rules, so any polynomial degree can be requested.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def gauss_legendre_01(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Points and weights on [0, 1], exact for polynomials of ``degree``."""
    npts = max(1, (degree + 2) // 2)
    t, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (t + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric-free rule on the reference triangle (0,0), (1,0), (0,1).

    Returns ``(points, weights)`` with ``points`` of shape (n, 2); the weights
    sum to 1/2 and the rule is exact for total degree ``degree``.
    """
    npts = max(1, (degree + 2) // 2)
    # weight (1 - u) on [0, 1] from Jacobi(1, 0) on [-1, 1]
    tj, wj = roots_jacobi(npts, 1.0, 0.0)
    u = 0.5 * (tj + 1.0)
    wu = wj / 4.0
    v, wv = gauss_legendre_01(degree)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ww = np.outer(wu, wv)
    pts = np.column_stack([uu.ravel(), (vv * (1.0 - uu)).ravel()])
    return pts, ww.ravel()


def map_triangle(coords: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature points and weights on a batch of physical triangles.

    ``coords`` has shape (m, 3, 2). Returns points (m, q, 2) and weights
    (m, q) including the Jacobian factor.
    """
    ref, w = triangle_rule(degree)
    a = coords[:, 0, :]
    e1 = coords[:, 1, :] - a
    e2 = coords[:, 2, :] - a
    pts = a[:, None, :] + ref[None, :, 0:1] * e1[:, None, :] + ref[None, :, 1:2] * e2[:, None, :]
    det = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return pts, det[:, None] * w[None, :]


def map_segment(a: np.ndarray, b: np.ndarray, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on a batch of segments ``a[i] -> b[i]`` (arrays (m, 2))."""
    t, w = gauss_legendre_01(degree)
    d = b - a
    pts = a[:, None, :] + t[None, :, None] * d[:, None, :]
    length = np.hypot(d[:, 0], d[:, 1])
    return pts, length[:, None] * w[None, :]
