"""Shared fixtures and slow-but-obvious reference implementations used as oracles."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def blocky_image(rng, n=32, blocks=4, fill=0.5):
    """Random piecewise-constant image: a ``blocks x blocks`` grid upsampled to ``n``."""
    cells = (rng.uniform(size=(blocks, blocks)) < fill) * rng.uniform(0.2, 1.0, size=(blocks, blocks))
    return np.kron(cells, np.ones((n // blocks, n // blocks)))


def naive_bilinear_warp(img, matrix):
    """Per-pixel loop: output center c samples ``img`` at ``T^-1(c)``, zero outside."""
    n = img.shape[0]
    r = np.asarray(matrix)[:, :2]
    t = np.asarray(matrix)[:, 2]
    r_inv = r.T
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            c = np.array([(j + 0.5) / n, (i + 0.5) / n])
            x, y = r_inv @ (c - t)
            fx, fy = x * n - 0.5, y * n - 0.5
            j0, i0 = math.floor(fx), math.floor(fy)
            ax, ay = fx - j0, fy - i0
            acc = 0.0
            for di, dj, w in ((0, 0, (1 - ay) * (1 - ax)), (0, 1, (1 - ay) * ax),
                              (1, 0, ay * (1 - ax)), (1, 1, ay * ax)):
                ii, jj = i0 + di, j0 + dj
                if 0 <= ii < n and 0 <= jj < n:
                    acc += w * img[ii, jj]
            out[i, j] = acc
    return out


def brute_force_distance(mask, p=2.0):
    """Double loop over pixel centers."""
    n = mask.shape[0]
    targets = [((j + 0.5) / n, (i + 0.5) / n) for i in range(n) for j in range(n) if mask[i, j]]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            x, y = (j + 0.5) / n, (i + 0.5) / n
            best = math.inf
            for tx, ty in targets:
                dx, dy = abs(x - tx), abs(y - ty)
                d = max(dx, dy) if math.isinf(p) else (dx ** p + dy ** p) ** (1.0 / p)
                best = min(best, d)
            out[i, j] = best
    return out


def nnls_enumerate(G, b, c0=0.0):
    """Exhaustive active-set oracle for ``min 0.5 x'Gx - b'x + c0`` subject to ``x >= 0``.

    Every support pattern is tried; the best feasible stationary point wins.
    """
    n = len(b)
    best_x, best_f = np.zeros(n), c0
    for mask in range(1, 2 ** n):
        idx = [k for k in range(n) if mask >> k & 1]
        sub = G[np.ix_(idx, idx)]
        try:
            xs = np.linalg.solve(sub, b[idx])
        except np.linalg.LinAlgError:
            xs = np.linalg.lstsq(sub, b[idx], rcond=None)[0]
        if np.any(xs < 0):
            continue
        x = np.zeros(n)
        x[idx] = xs
        f = 0.5 * x @ G @ x - b @ x + c0
        if f < best_f:
            best_x, best_f = x, f
    return best_x, best_f
