"""Client-side DMP fitting, matching the server's algorithm and constants.

The fit reconstructs derivatives with the same semi-implicit Euler
discretization the server's rollout integrator uses, so identical demos fit
to identical weights on both sides (documented constants: alpha = 25,
beta = alpha/4, alpha_x = 8/3, ridge 1e-9).
"""
from __future__ import annotations

import numpy as np

DEFAULT_ALPHA = 25.0
DEFAULT_BETA = DEFAULT_ALPHA / 4.0
DEFAULT_ALPHA_X = 8.0 / 3.0
MIN_BASIS = 2
MAX_BASIS = 64
FIT_REGULARIZATION = 1e-9


class DegenerateDemo(ValueError):
    pass


def basis_centers_widths(n_basis: int, alpha_x: float):
    c = np.exp(-alpha_x * np.linspace(0.0, 1.0, n_basis))
    h = np.empty(n_basis)
    diffs = np.diff(c)
    h[:-1] = np.log(2.0) / diffs**2
    h[-1] = h[-2]
    return c, h


def _features(x, centers, widths):
    psi = np.exp(-widths[None, :] * (x[:, None] - centers[None, :])**2)
    return x[:, None] * psi / np.sum(psi, axis=1, keepdims=True)


def fit_dmp_weights(demo: np.ndarray, dt: float, n_basis: int = 10,
                    alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
                    alpha_x: float = DEFAULT_ALPHA_X,
                    goal: np.ndarray | None = None):
    """Returns (weights n_basis x n_dof, goal, tau) for a uniform demo."""
    demo = np.asarray(demo, dtype=np.float64)
    if demo.ndim == 1:
        demo = demo[:, None]
    n, dof = demo.shape
    if n < 10:
        raise DegenerateDemo(f"demo needs >= 10 samples, got {n}")
    if not dt > 0:
        raise DegenerateDemo("demo sample period must be > 0")
    if not np.all(np.isfinite(demo)):
        raise DegenerateDemo("demo has non-finite samples")
    if not (MIN_BASIS <= n_basis <= MAX_BASIS):
        raise DegenerateDemo(f"n_basis must be in [{MIN_BASIS}, {MAX_BASIS}]")
    tau = (n - 1) * dt

    y = demo
    g = y[-1] if goal is None else np.asarray(goal, dtype=np.float64)
    if g.shape != (dof,):
        raise DegenerateDemo(f"goal shape {g.shape} != ({dof},)")
    y0 = y[0]

    z = np.vstack([np.zeros(dof), tau * np.diff(y, axis=0) / dt])
    f_target = (tau * np.diff(z, axis=0) / dt
                - alpha * (beta * (g - y[:-1]) - z[:-1]))

    decay = 1.0 - alpha_x * dt / tau
    x = decay ** np.arange(n - 1)
    centers, widths = basis_centers_widths(n_basis, alpha_x)
    Phi = _features(x, centers, widths)

    weights = np.zeros((n_basis, dof))
    A = Phi.T @ Phi + FIT_REGULARIZATION * np.eye(n_basis)
    for j in range(dof):
        scale = g[j] - y0[j]
        if abs(scale) < 1e-12:
            continue
        weights[:, j] = np.linalg.solve(A, Phi.T @ (f_target[:, j] / scale))
    return weights, g, tau
