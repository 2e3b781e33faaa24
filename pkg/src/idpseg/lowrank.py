"""Low-rank plus fused-lasso decomposition ``A = B + E`` by inexact ALM.

Solves ``min ||B||_* + lam * sum_k gfl(E_k)  s.t.  A = B + E`` where ``A``
is the pixels-by-frames stack. Each iteration:

* ``B <- svt(A - E + Y/mu, 1/mu)``
* ``E <- gfl_prox(A - B + Y/mu, lam/mu)`` frame by frame
* ``Y <- Y + mu (A - B - E)``
* ``mu <- rho * mu`` when ``mu ||E_new - E_old||_F / ||A||_F < epsilon_mu``

The E-step splits exactly over frames because the penalty is a sum of
per-frame terms and the quadratic coupling is elementwise.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from idpseg.core import DataError
from idpseg.gfl import GflParams, gfl_prox_batch, neighbor_weights

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlmParams:
    """ALM settings. ``lam=None`` means ``1/sqrt(max(p, n))``; ``mu0=None`` means ``1.25/sigma_max(A)``."""

    lam: float | None = None
    mu0: float | None = None
    rho: float = 1.5
    epsilon_mu: float = 1e-3
    stop_tol: float = 1e-6
    max_iters: int = 300
    gfl: GflParams = field(default_factory=GflParams)

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lam must be > 0")
        if self.mu0 is not None and not self.mu0 > 0:
            raise ValueError("mu0 must be > 0")
        if not self.rho > 1:
            raise ValueError("rho must exceed 1")
        if not self.epsilon_mu > 0:
            raise ValueError("epsilon_mu must be > 0")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class Decomposition:
    background: np.ndarray
    foreground: np.ndarray
    multiplier: np.ndarray
    iterations: int
    residual_history: list[float]
    mu_history: list[float]
    inner_iterations: list[int]
    converged: bool
    lam: float = 0.0

    @property
    def residual(self) -> float:
        return self.residual_history[-1]

    def write_csv(self, path: str | Path) -> None:
        """Per-iteration diagnostics: residual, mu used, inner iterations, final converged flag."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "residual", "mu", "inner_iters", "converged"])
            for i, (r, mu, k) in enumerate(zip(self.residual_history, self.mu_history, self.inner_iterations), 1):
                writer.writerow([i, repr(r), repr(mu), k, int(self.converged)])


def svt(m: np.ndarray, tau: float) -> np.ndarray:
    """Singular value soft-thresholding ``U diag(max(s - tau, 0)) V^T``."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise DataError("svt: matrix has non-finite entries")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (u[:, keep] * s[keep]) @ vt[keep]


def decompose(a: np.ndarray, shape: tuple[int, int], params: AlmParams | None = None) -> Decomposition:
    """Split the stacked matrix ``a`` (pixels x frames) into background and foreground.

    ``shape`` is the ``(height, width)`` of one frame. Edge weights for the
    fused term come from the columns of ``a``. On reaching ``max_iters``
    the iterate with the smallest residual is returned with
    ``converged=False``.
    """
    params = params or AlmParams()
    a = np.asarray(a, dtype=np.float64)
    height, width = shape
    if a.ndim != 2 or a.shape[0] != height * width:
        raise DataError(f"matrix of shape {a.shape} does not hold {height}x{width} frames")
    p, n = a.shape
    if n < 2:
        raise DataError("decomposition needs at least 2 frames")
    if not np.all(np.isfinite(a)):
        raise DataError("input matrix has non-finite entries")

    lam = params.lam if params.lam is not None else 1.0 / np.sqrt(max(p, n))
    norm_a = np.linalg.norm(a)
    if norm_a == 0.0:
        z = np.zeros_like(a)
        return Decomposition(z, z.copy(), z.copy(), 1, [0.0], [0.0], [0], True, lam)

    gp = params.gfl
    frames = a.T.reshape(n, height, width)
    weights = [neighbor_weights(f, gp.sigma) for f in frames]
    wh = np.stack([w.horizontal for w in weights])
    wv = np.stack([w.vertical for w in weights])

    sigma_max = np.linalg.norm(a, 2)
    mu = params.mu0 if params.mu0 is not None else 1.25 / sigma_max
    y = a / max(sigma_max, np.abs(a).max() / lam)
    e = np.zeros_like(a)
    dual = None

    residuals: list[float] = []
    mus: list[float] = []
    inner: list[int] = []
    best = None
    converged = False
    for it in range(1, params.max_iters + 1):
        b = svt(a - e + y / mu, 1.0 / mu)
        v = (a - b + y / mu).T.reshape(n, height, width)
        state = gfl_prox_batch(v, lam / mu, gp.gamma, wh, wv, gp.inner_max_iters, gp.inner_tol, dual)
        dual = state.dual
        e_new = state.e.reshape(n, p).T
        gap = a - b - e_new
        y = y + mu * gap
        residual = float(np.linalg.norm(gap) / norm_a)
        residuals.append(residual)
        mus.append(float(mu))
        inner.append(state.iterations)
        grow = mu * np.linalg.norm(e_new - e) / norm_a < params.epsilon_mu
        e = e_new
        if best is None or residual < best[0]:
            best = (residual, b, e, y.copy(), it)
        if residual <= params.stop_tol:
            converged = True
            break
        if grow:
            mu *= params.rho
            if dual is not None:
                # the dual box scales with lam/mu
                dual = (dual[0] / params.rho, dual[1] / params.rho)

    if converged:
        return Decomposition(b, e, y, it, residuals, mus, inner, True, lam)
    logger.warning("decompose: residual %.3g above stop_tol after %d iterations", best[0], params.max_iters)
    return Decomposition(best[1], best[2], best[3], params.max_iters, residuals, mus, inner, False, lam)
