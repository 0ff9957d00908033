"""Composite Gauss-Legendre panel quadrature helpers.

Everything downstream integrates smooth (often steeply growing) integrands
between prescribed knot sequences, so fixed-order panels between knots are
both fast and accurate; adaptivity is obtained by choosing the knots.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=16)
def _gl_rule(n_nodes: int):
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    return nodes, weights


def panel_nodes(knots: np.ndarray, n_nodes: int = 16):
    """All Gauss-Legendre nodes/weights for the panels between consecutive knots.

    Returns (points, weights) flattened over panels; points never include the
    knot endpoints, so integrable endpoint singularities are tolerated.
    """
    knots = np.asarray(knots, dtype=float)
    a = knots[:-1]
    h = np.diff(knots)
    x, w = _gl_rule(n_nodes)
    pts = a[:, None] + (x[None, :] + 1.0) * (h[:, None] / 2.0)
    wts = w[None, :] * (h[:, None] / 2.0)
    return pts.ravel(), wts.ravel()


def cumulative_integral(f, knots: np.ndarray, n_nodes: int = 16) -> np.ndarray:
    """Antiderivative of ``f`` along ``knots``: F[i] = int_{knots[0]}^{knots[i]} f.

    ``f`` must accept vectorised input. F[0] = 0.
    """
    knots = np.asarray(knots, dtype=float)
    pts, wts = panel_nodes(knots, n_nodes)
    vals = (f(pts) * wts).reshape(len(knots) - 1, n_nodes).sum(axis=1)
    out = np.empty(len(knots))
    out[0] = 0.0
    np.cumsum(vals, out=out[1:])
    return out


def integrate(f, a: float, b: float, n_panels: int = 64, n_nodes: int = 16) -> float:
    """Integral of vectorised ``f`` over [a, b] with uniform panels."""
    if b <= a:
        return 0.0
    knots = np.linspace(a, b, n_panels + 1)
    pts, wts = panel_nodes(knots, n_nodes)
    return float(np.dot(f(pts), wts))


def geometric_then_uniform(r_lo: float, r_break: float, r_max: float,
                           n_geo: int, n_uni: int) -> np.ndarray:
    """Strictly increasing grid from 0: geometric on (r_lo, r_break], uniform after.

    The leading point is exactly 0. Used for tabulation grids that must
    resolve both an r -> 0 regime and a Gaussian-growth tail.
    """
    if not (0 < r_lo < r_break < r_max):
        raise ValueError("need 0 < r_lo < r_break < r_max")
    geo = np.geomspace(r_lo, r_break, n_geo)
    uni = np.linspace(r_break, r_max, n_uni + 1)[1:]
    return np.concatenate(([0.0], geo, uni))
