"""Dynamic movement primitives: second-order goal attractor with a learned,
phase-decaying forcing term; fitting from demonstrations and rollout.

Formulation (per joint):
    phase      x' = -alpha_x * x / tau,  x(0) = 1
    transform  tau * z' = alpha * (beta * (g - y) - z) + f(x)
               tau * y' = z
    forcing    f(x) = x * (g - y0) * sum_i(w_i * psi_i(x)) / sum_i(psi_i(x))
with Gaussian basis psi_i(x) = exp(-h_i * (x - c_i)^2), centers log-spaced
in phase and widths chosen so neighbouring bases overlap at 0.5.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_ALPHA = 25.0
DEFAULT_BETA = DEFAULT_ALPHA / 4.0
DEFAULT_ALPHA_X = 8.0 / 3.0
MIN_BASIS = 2
MAX_BASIS = 64
FIT_REGULARIZATION = 1e-9


class DegenerateDemo(ValueError):
    pass


def basis_centers_widths(n_basis: int, alpha_x: float) -> tuple[np.ndarray, np.ndarray]:
    """Centers at the phase values of equally spaced times; 0.5-overlap widths."""
    c = np.exp(-alpha_x * np.linspace(0.0, 1.0, n_basis))
    h = np.empty(n_basis)
    diffs = np.diff(c)
    h[:-1] = np.log(2.0) / diffs**2
    h[-1] = h[-2]
    return c, h


def _features(x: np.ndarray, centers: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """Normalized, phase-gated basis activations: rows = samples, cols = bases."""
    psi = np.exp(-widths[None, :] * (x[:, None] - centers[None, :])**2)
    return x[:, None] * psi / np.sum(psi, axis=1, keepdims=True)


@dataclass(frozen=True)
class DmpParams:
    """Fitted DMP for an n-dof joint trajectory."""

    weights: np.ndarray            # n_basis x n_dof
    goal: np.ndarray               # n_dof
    tau: float
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    alpha_x: float = DEFAULT_ALPHA_X
    n_basis: int = 10

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        g = np.asarray(self.goal, dtype=np.float64).reshape(-1)
        if not (MIN_BASIS <= self.n_basis <= MAX_BASIS):
            raise ValueError(f"n_basis must be in [{MIN_BASIS}, {MAX_BASIS}]")
        if w.shape != (self.n_basis, g.shape[0]):
            raise ValueError(f"weights shape {w.shape} != ({self.n_basis}, {g.shape[0]})")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(g))):
            raise ValueError("non-finite DMP parameters")
        object.__setattr__(self, "weights", w.copy())
        object.__setattr__(self, "goal", g.copy())


def fit_dmp(demo: np.ndarray, dt: float, n_basis: int = 10,
            alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
            alpha_x: float = DEFAULT_ALPHA_X,
            goal: np.ndarray | None = None) -> DmpParams:
    """Fit weights to a uniformly sampled demonstration (n_samples x n_dof).

    By default the goal is the demo's final sample. When the true attractor is
    known (e.g. the demo was cut short of convergence), pass it via ``goal`` so
    the regression does not have to absorb the terminal gap into the weights.

    Per joint, solves a ridge-regularized least squares of the target forcing
    f_target = tau^2 * ydd - alpha * (beta * (g - y) - tau * yd)
    against the phase-gated basis features. The derivatives are reconstructed
    with the same semi-implicit Euler discretization the rollout uses, so a
    demo produced by the unforced rollout fits to (numerically) zero weights.
    """
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
    tau = (n - 1) * dt
    if tau <= 0:
        raise DegenerateDemo("demo duration is zero")

    y = demo
    if goal is None:
        g = y[-1]
    else:
        g = np.asarray(goal, dtype=np.float64)
        if g.shape != (dof,):
            raise DegenerateDemo(f"goal shape {g.shape} != ({dof},)")
    y0 = y[0]

    # discrete inverse of the rollout integrator: z_k = tau*(y_k - y_{k-1})/dt
    # (z_0 = 0 at rest), then the forcing each step must have supplied
    z = np.vstack([np.zeros(dof), tau * np.diff(y, axis=0) / dt])
    f_target = (tau * np.diff(z, axis=0) / dt
                - alpha * (beta * (g - y[:-1]) - z[:-1]))

    # phase at each step start, from the same Euler recursion as rollout
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
    return DmpParams(weights=weights, goal=g, tau=tau, alpha=alpha, beta=beta,
                     alpha_x=alpha_x, n_basis=n_basis)


@dataclass
class DmpState:
    """Integration state for rollout; semi-implicit Euler."""

    params: DmpParams
    y: np.ndarray
    z: np.ndarray = field(init=False)
    x: float = field(init=False, default=1.0)
    _centers: np.ndarray = field(init=False)
    _widths: np.ndarray = field(init=False)
    _y0: np.ndarray = field(init=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64).copy()
        if self.y.shape != self.params.goal.shape:
            raise ValueError("start shape does not match DMP goal")
        self.z = np.zeros_like(self.y)
        self._y0 = self.y.copy()
        self._centers, self._widths = basis_centers_widths(
            self.params.n_basis, self.params.alpha_x)

    def forcing(self) -> np.ndarray:
        psi = np.exp(-self._widths * (self.x - self._centers)**2)
        gate = self.x * psi / np.sum(psi)
        return (gate @ self.params.weights) * (self.params.goal - self._y0)

    def step(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """Advance one period; returns (y_d, dy_d)."""
        p = self.params
        f = self.forcing()
        zd = (p.alpha * (p.beta * (p.goal - self.y) - self.z) + f) / p.tau
        self.z = self.z + zd * dt
        yd = self.z / p.tau
        self.y = self.y + yd * dt
        self.x = self.x + (-p.alpha_x * self.x / p.tau) * dt
        return self.y.copy(), yd.copy()


def rollout(params: DmpParams, start: np.ndarray, dt: float,
            duration: float | None = None) -> np.ndarray:
    """Integrate the DMP from start; returns n_steps x n_dof positions."""
    state = DmpState(params, start)
    n = int(round((duration if duration is not None else params.tau) / dt))
    out = np.empty((n, params.goal.shape[0]))
    for i in range(n):
        out[i], _ = state.step(dt)
    return out
