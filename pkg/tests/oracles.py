"""Independent reference computations used by the tests.

Nothing here imports the code under test.
"""

from collections import deque

import numpy as np


# ---------------------------------------------------------------- fused lasso

def prox_objective_ref(e, v, tau, gamma, wh, wv):
    e = np.asarray(e, float)
    v = np.asarray(v, float)
    fused = 0.0
    h, w = e.shape
    for i in range(h):
        for j in range(w):
            if j + 1 < w:
                fused += wh[i][j] * abs(e[i, j] - e[i, j + 1])
            if i + 1 < h:
                fused += wv[i][j] * abs(e[i, j] - e[i + 1, j])
    return 0.5 * float(((e - v) ** 2).sum()) + tau * (float(np.abs(e).sum()) + gamma * fused)


def _unary(grid, vi, tau):
    return 0.5 * (grid - vi) ** 2 + tau * np.abs(grid)


def _pair(grid, weight, tau, gamma):
    return tau * gamma * weight * np.abs(grid[:, None] - grid[None, :])


def grid_min(v, tau, gamma, wh, wv, grid):
    """Exact minimum of the prox objective with every pixel restricted to ``grid``.

    Handles 1xN chains by dynamic programming and the 2x2 cycle by
    conditioning on one pixel; both are exhaustive over the grid.
    """
    v = np.asarray(v, float)
    grid = np.asarray(grid, float)
    h, w = v.shape
    if h == 1:
        msg = _unary(grid, v[0, 0], tau)
        for j in range(1, w):
            msg = (msg[:, None] + _pair(grid, wh[0][j - 1], tau, gamma)).min(axis=0) + _unary(grid, v[0, j], tau)
        return float(msg.min())
    if (h, w) == (2, 2):
        u = [_unary(grid, x, tau) for x in (v[0, 0], v[0, 1], v[1, 0], v[1, 1])]
        p01 = _pair(grid, wh[0][0], tau, gamma)
        p23 = _pair(grid, wh[1][0], tau, gamma)
        p02 = _pair(grid, wv[0][0], tau, gamma)
        p13 = _pair(grid, wv[0][1], tau, gamma)
        # m1[x0, x1]
        m1 = u[0][:, None] + u[1][None, :] + p01
        # m3[x0, x3] = min_x1 m1[x0, x1] + p13[x1, x3]
        m3 = (m1[:, :, None] + p13[None, :, :]).min(axis=1) + u[3][None, :]
        # m2[x0, x2] = min_x3 m3[x0, x3] + p23[x2, x3]
        m2 = (m3[:, None, :] + p23[None, :, :]).min(axis=2) + u[2][None, :]
        return float((m2 + p02).min())
    raise ValueError("grid_min handles 1xN and 2x2 frames only")


def brute_force_min(v, tau, gamma, wh, wv, grid):
    """Literal enumeration over ``grid ** pixels``; only for tiny grids."""
    v = np.asarray(v, float)
    n = v.size
    mesh = np.stack(np.meshgrid(*([grid] * n), indexing="ij"), axis=-1).reshape(-1, n)
    best = np.inf
    for row in mesh:
        best = min(best, prox_objective_ref(row.reshape(v.shape), v, tau, gamma, wh, wv))
    return best


# ---------------------------------------------------------------- convolution

def naive_convolve(img, kernel):
    """Direct sliding-window convolution with half-sample symmetric padding."""
    img = np.asarray(img, float)
    k = np.asarray(kernel, float)
    c = k.shape[0] // 2
    h, w = img.shape

    def at(i, j):
        # reflect with edge repeat: -1 -> 0, h -> h-1
        while i < 0 or i >= h:
            i = -i - 1 if i < 0 else 2 * h - i - 1
        while j < 0 or j >= w:
            j = -j - 1 if j < 0 else 2 * w - j - 1
        return img[i, j]

    out = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(-c, c + 1):
                for b in range(-c, c + 1):
                    acc += k[c + a, c + b] * at(i - a, j - b)
            out[i, j] = acc
    return out


# ---------------------------------------------------------------- thresholds

def otsu_brute_force(img, bins=256):
    """Try every split of a ``bins``-bin histogram; pixel-level class statistics."""
    img = np.asarray(img, float).ravel()
    lo, hi = img.min(), img.max()
    width = (hi - lo) / bins
    idx = np.minimum(((img - lo) / width).astype(int), bins - 1)
    centers = lo + (np.arange(bins) + 0.5) * width
    vals = centers[idx]
    best_k, best_var = None, -1.0
    for k in range(bins - 1):
        lower = idx <= k
        n0, n1 = lower.sum(), (~lower).sum()
        if n0 == 0 or n1 == 0:
            continue
        w0, w1 = n0 / img.size, n1 / img.size
        var = w0 * w1 * (vals[lower].mean() - vals[~lower].mean()) ** 2
        if var > best_var * (1 + 1e-12):
            best_k, best_var = k, var
    return lo + (best_k + 1) * width


def otsu_exact_values(img):
    """Threshold maximizing between-class variance over all cuts between sorted pixel values."""
    x = np.sort(np.asarray(img, float).ravel())
    best_t, best_var = None, -1.0
    for k in range(1, x.size):
        if x[k] == x[k - 1]:
            continue
        a, b = x[:k], x[k:]
        var = (k / x.size) * (1 - k / x.size) * (a.mean() - b.mean()) ** 2
        if var > best_var:
            best_t, best_var = 0.5 * (x[k - 1] + x[k]), var
    return best_t


# ---------------------------------------------------------------- labeling

def bfs_components(mask):
    """8-connected components by flood fill in raster order of first pixel."""
    mask = np.asarray(mask, bool)
    h, w = mask.shape
    labels = np.zeros((h, w), int)
    current = 0
    for i in range(h):
        for j in range(w):
            if mask[i, j] and labels[i, j] == 0:
                current += 1
                labels[i, j] = current
                queue = deque([(i, j)])
                while queue:
                    y, x = queue.popleft()
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            yy, xx = y + dy, x + dx
                            if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and labels[yy, xx] == 0:
                                labels[yy, xx] = current
                                queue.append((yy, xx))
    return labels, current


def pixel_loop_accuracy(mask, truth):
    correct = 0
    total = 0
    for m, t in zip(np.asarray(mask, bool).ravel(), np.asarray(truth, bool).ravel()):
        correct += int(m == t)
        total += 1
    return correct / total


def f1_support(estimate, truth):
    estimate = np.asarray(estimate, bool)
    truth = np.asarray(truth, bool)
    tp = np.count_nonzero(estimate & truth)
    denom = estimate.sum() + truth.sum()
    return 1.0 if denom == 0 else 2 * tp / denom
