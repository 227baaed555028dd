"""Pure-numpy versions of the compiled kernels (same signatures and results)."""

from __future__ import annotations

import numpy as np

_BLOCK = 256


def _distances(src, dst):
    diff = dst[:, None, :] - src[None, :, :]
    return np.sqrt(np.einsum("qnk,qnk->qn", diff, diff))


def _first_zero(R, q0=0):
    hits = np.argwhere(R == 0.0)
    if len(hits):
        return int(hits[0, 0]) + q0, int(hits[0, 1])
    return -1, -1


def _green_block(src, dst, k0):
    R = _distances(src, dst)
    bad = _first_zero(R)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (np.cos(k0 * R) - 1j * np.sin(k0 * R)) / (4.0 * np.pi * R)
    g[R == 0.0] = 0.0
    return g, bad


def green_dense(src, dst, k0):
    g, (bq, bn) = _green_block(np.asarray(src), np.asarray(dst), k0)
    return g, bq, bn


def green_matvec(src, dst, k0, x):
    src = np.asarray(src)
    dst = np.asarray(dst)
    x = np.asarray(x)
    out = np.empty(len(dst), dtype=np.complex128)
    bad = (-1, -1)
    for q0 in range(0, len(dst), _BLOCK):
        g, (bq, bn) = _green_block(src, dst[q0:q0 + _BLOCK], k0)
        if bad[0] < 0 and bq >= 0:
            bad = (bq + q0, bn)
        out[q0:q0 + _BLOCK] = g @ x
    return out, bad[0], bad[1]


def fresnel_matvec(src, dst, k0, distance, prefactor, x):
    src = np.asarray(src)[:, :2]
    dst = np.asarray(dst)[:, :2]
    x = np.asarray(x)
    a = k0 / (2.0 * distance)
    out = np.empty(len(dst), dtype=np.complex128)
    for q0 in range(0, len(dst), _BLOCK):
        d = dst[q0:q0 + _BLOCK, None, :] - src[None, :, :]
        ph = a * np.einsum("qnk,qnk->qn", d, d)
        out[q0:q0 + _BLOCK] = prefactor * ((np.cos(ph) - 1j * np.sin(ph)) @ x)
    return out
