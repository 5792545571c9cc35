"""Compiled Gaussian product-kernel sums.

Kernel sums take sources sorted ascending along one *key* column so that the
neighbourhood of a query along that axis is found by binary search. Terms
with ``u.u > cutoff2`` are skipped. Per-query sums use a fixed pairwise
(tree) reduction so results do not depend on thread count or on how the
caller ordered the sample.
"""

import math

import numpy as np
from numba import config, njit, prange

# the TBB layer is probed first by default and warns on old TBB builds
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

_BLOCK = 64
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(cache=True)
def pairwise_sum(buf, m, scratch):
    if m <= _BLOCK:
        s = 0.0
        for k in range(m):
            s += buf[k]
        return s
    nb = (m + _BLOCK - 1) // _BLOCK
    for b in range(nb):
        s = 0.0
        stop = min(m, (b + 1) * _BLOCK)
        for k in range(b * _BLOCK, stop):
            s += buf[k]
        scratch[b] = s
    while nb > 1:
        half = nb // 2
        for k in range(half):
            scratch[k] = scratch[2 * k] + scratch[2 * k + 1]
        if nb % 2 == 1:
            scratch[half] = scratch[nb - 1]
            nb = half + 1
        else:
            nb = half
    return scratch[0]


@njit(cache=True)
def _query_sums(src, inv_h, norm, keys, q, skip, reflect, cutoff2, key, rk,
                buf_d, buf_m, scratch):
    d = src.shape[1]
    last = d - 1
    qk = q[key]
    lo = np.searchsorted(keys, qk - rk)
    hi = np.searchsorted(keys, qk + rk, side="right")
    # mirrored terms are found in the same pass unless the key is the
    # reflected coordinate, in which case they sit around -q[key]
    same_pass = reflect and key != last
    cd = 0
    cm = 0
    for j in range(lo, hi):
        base = 0.0
        for k in range(last):
            u = (q[k] - src[j, k]) * inv_h[j, k]
            base += u * u
            if base > cutoff2:
                break
        if base > cutoff2:
            continue
        if j != skip:
            u = (q[last] - src[j, last]) * inv_h[j, last]
            t = base + u * u
            if t <= cutoff2:
                buf_d[cd] = norm[j] * math.exp(-0.5 * t)
                cd += 1
        if same_pass:
            u = (q[last] + src[j, last]) * inv_h[j, last]
            t = base + u * u
            if t <= cutoff2:
                buf_m[cm] = norm[j] * math.exp(-0.5 * t)
                cm += 1
    if reflect and not same_pass:
        lo = np.searchsorted(keys, -qk - rk)
        hi = np.searchsorted(keys, -qk + rk, side="right")
        for j in range(lo, hi):
            u = (q[last] + src[j, last]) * inv_h[j, last]
            t = u * u
            if t > cutoff2:
                continue
            for k in range(last):
                u = (q[k] - src[j, k]) * inv_h[j, k]
                t += u * u
            if t <= cutoff2:
                buf_m[cm] = norm[j] * math.exp(-0.5 * t)
                cm += 1
    return pairwise_sum(buf_d, cd, scratch), pairwise_sum(buf_m, cm, scratch)


@njit(cache=True, parallel=True)
def kernel_sums(src, hsrc, wsrc, queries, self_pos, reflect, cutoff2, key):
    """Unnormalised direct and mirrored sums ``sum_j w_j exp(-u.u/2)/prod(h_j)``.

    The mirrored term flips the sign of the source's last coordinate. The
    direct sum skips source ``self_pos[q]`` (use -1 for none); the mirrored
    sum never skips. Queries are split into chunks processed in parallel;
    each query is reduced on its own, so results do not depend on threads.
    """
    n, d = src.shape
    m = queries.shape[0]
    hkey_max = 0.0
    for j in range(n):
        if hsrc[j, key] > hkey_max:
            hkey_max = hsrc[j, key]
    rk = math.sqrt(cutoff2) * hkey_max
    inv_h = 1.0 / hsrc
    norm = np.empty(n)
    for j in range(n):
        p = 1.0
        for k in range(d):
            p *= inv_h[j, k]
        norm[j] = wsrc[j] * p
    keys = src[:, key].copy()
    direct = np.zeros(m)
    mirror = np.zeros(m)
    chunk = 256
    nchunks = (m + chunk - 1) // chunk
    for c in prange(nchunks):
        buf_d = np.empty(n)
        buf_m = np.empty(n)
        scratch = np.empty(n // _BLOCK + 2)
        for q in range(c * chunk, min(m, (c + 1) * chunk)):
            a, b = _query_sums(src, inv_h, norm, keys, queries[q], self_pos[q],
                               reflect, cutoff2, key, rk, buf_d, buf_m, scratch)
            direct[q] = a
            mirror[q] = b
    return direct, mirror


@njit(cache=True)
def _phi_diff(a, b):
    # standard normal mass on [a, b] without cancellation in the tails
    if a >= b:
        return 0.0
    if a > 0.0:
        return 0.5 * (math.erfc(a / _SQRT2) - math.erfc(b / _SQRT2))
    if b < 0.0:
        return 0.5 * (math.erfc(-b / _SQRT2) - math.erfc(-a / _SQRT2))
    return 0.5 * (math.erf(b / _SQRT2) - math.erf(a / _SQRT2))


@njit(cache=True)
def window_mass_2d(src, hsrc, wsrc, xnodes, xweights, ylo, yhi, reflect, cutoff2):
    """``sum_j w_j`` times the kernel mass of source ``j`` inside the region
    ``{(x, y): ylo(x) <= y <= yhi(x)}``, x integrated by the supplied rule and
    y analytically. Sources are [x, y] rows; ``xnodes`` ascending."""
    n = src.shape[0]
    r = math.sqrt(cutoff2)
    masses = np.empty(n)
    for j in range(n):
        xj = src[j, 0]
        yj = src[j, 1]
        h1 = hsrc[j, 0]
        h2 = hsrc[j, 1]
        lo = np.searchsorted(xnodes, xj - r * h1)
        hi = np.searchsorted(xnodes, xj + r * h1, side="right")
        acc = 0.0
        for k in range(lo, hi):
            a = ylo[k]
            b = yhi[k]
            if not b > a:
                continue
            u = (xnodes[k] - xj) / h1
            gx = math.exp(-0.5 * u * u) * _INV_SQRT_2PI / h1
            mass = _phi_diff((a - yj) / h2, (b - yj) / h2)
            if reflect:
                mass += _phi_diff((a + yj) / h2, (b + yj) / h2)
            acc += xweights[k] * gx * mass
        masses[j] = wsrc[j] * acc
    scratch = np.empty(n // _BLOCK + 2)
    return pairwise_sum(masses, n, scratch)


@njit(cache=True)
def window_mass_3d(src, hsrc, wsrc, anodes, aweights, xnodes, xweights, ylo, yhi,
                   reflect, cutoff2):
    """Three-dimensional analogue of :func:`window_mass_2d` for [a, x, y]
    sources; ``ylo``/``yhi`` have shape (len(anodes), len(xnodes))."""
    n = src.shape[0]
    r = math.sqrt(cutoff2)
    masses = np.empty(n)
    for j in range(n):
        aj = src[j, 0]
        xj = src[j, 1]
        yj = src[j, 2]
        h1 = hsrc[j, 0]
        h2 = hsrc[j, 1]
        h3 = hsrc[j, 2]
        alo = np.searchsorted(anodes, aj - r * h1)
        ahi = np.searchsorted(anodes, aj + r * h1, side="right")
        xlo = np.searchsorted(xnodes, xj - r * h2)
        xhi = np.searchsorted(xnodes, xj + r * h2, side="right")
        acc = 0.0
        for ia in range(alo, ahi):
            ua = (anodes[ia] - aj) / h1
            ga = math.exp(-0.5 * ua * ua) * _INV_SQRT_2PI / h1 * aweights[ia]
            inner = 0.0
            for k in range(xlo, xhi):
                a = ylo[ia, k]
                b = yhi[ia, k]
                if not b > a:
                    continue
                u = (xnodes[k] - xj) / h2
                gx = math.exp(-0.5 * u * u) * _INV_SQRT_2PI / h2
                mass = _phi_diff((a - yj) / h3, (b - yj) / h3)
                if reflect:
                    mass += _phi_diff((a + yj) / h3, (b + yj) / h3)
                inner += xweights[k] * gx * mass
            acc += ga * inner
        masses[j] = wsrc[j] * acc
    scratch = np.empty(n // _BLOCK + 2)
    return pairwise_sum(masses, n, scratch)
