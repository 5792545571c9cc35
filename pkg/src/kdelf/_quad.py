"""Composite Gauss-Legendre rules used by the window integrals."""

import numpy as np

_GL_CACHE = {}


def legendre(order):
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def panel_edges(a, b, width, breaks=(), min_panels=1):
    """Panel edges covering [a, b] with spacing <= ``width``, split at ``breaks``."""
    pts = [a] + sorted(float(t) for t in breaks if a < t < b) + [b]
    edges = [np.array([a])]
    for lo, hi in zip(pts[:-1], pts[1:]):
        k = max(min_panels, int(np.ceil((hi - lo) / width)))
        edges.append(np.linspace(lo, hi, k + 1)[1:])
    return np.concatenate(edges)


def gauss_legendre_nodes(edges, order=8):
    """Nodes and weights of a composite rule on consecutive ``edges``."""
    t, w = legendre(order)
    edges = np.asarray(edges, dtype=float)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def composite(a, b, n_panels, order=8, breaks=()):
    edges = panel_edges(a, b, (b - a) / n_panels, breaks)
    return gauss_legendre_nodes(edges, order)
