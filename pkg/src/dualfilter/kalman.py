"""Linear-Gaussian benchmark: Kalman-Bucy filter and its dual LQ problem.

Model, in the transposed convention used throughout the package::

    dX = A^T X dt + dB,    Cov(B) = Q t
    dZ = H^T X dt + dW,    Cov(W) = R t,    X_0 ~ N(x0, Sigma0)

The filter covariance obeys ``dSigma/dt = A^T Sigma + Sigma A + Q - Sigma H R^-1 H^T Sigma``.
The dual problem steers ``dy/dt = -A y - H u`` backward from ``y_T = f`` and
minimises ``1/2 y_0^T Sigma0 y_0 + int 1/2 (y^T Q y + u^T R u) dt``. Its
Riccati equation, run with the time arrow reversed, is the covariance
equation above.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .dual_control import _rk4_maps
from .grid import TimeGrid
from .montecarlo import trial_streams

__all__ = [
    "LinearModel",
    "CovariancePath",
    "DualLQSolution",
    "DualityReport",
    "LinearMSEResult",
    "riccati_rhs",
    "filter_covariance",
    "kalman_bucy",
    "dual_riccati",
    "dual_lq_solve",
    "solve_dual_linear",
    "lq_cost",
    "duality_check",
    "simulate_linear",
    "linear_estimator_mse",
]

SYM_TOL = 1e-10


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(S)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def _check_psd(name: str, S: np.ndarray, strict: bool = False):
    if not np.allclose(S, S.T, atol=SYM_TOL, rtol=0):
        raise ValueError(f"{name} must be symmetric")
    low = np.linalg.eigvalsh(S).min()
    if strict and low <= 0:
        raise ValueError(f"{name} must be positive definite")
    if low < -SYM_TOL:
        raise ValueError(f"{name} must be positive semidefinite (min eigenvalue {low:.3g})")


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Drift ``A`` (d x d), ``H`` (d x m), covariances ``Q``, ``R``, prior ``x0``, ``Sigma0``."""

    A: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x0: np.ndarray
    Sigma0: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        H = np.array(self.H, dtype=float)
        H = np.atleast_2d(H) if H.ndim == 0 else (H[:, None] if H.ndim == 1 else H)
        Q = np.atleast_2d(np.array(self.Q, dtype=float))
        R = np.atleast_2d(np.array(self.R, dtype=float))
        x0 = np.atleast_1d(np.array(self.x0, dtype=float))
        S0 = np.atleast_2d(np.array(self.Sigma0, dtype=float))
        d = A.shape[0]
        if A.shape != (d, d):
            raise ValueError(f"A must be square, got {A.shape}")
        if H.shape[0] != d:
            raise ValueError(f"H must have {d} rows, got {H.shape}")
        m = H.shape[1]
        for name, val, shape in (("Q", Q, (d, d)), ("R", R, (m, m)), ("Sigma0", S0, (d, d)), ("x0", x0, (d,))):
            if val.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {val.shape}")
        _check_psd("Q", Q)
        _check_psd("Sigma0", S0)
        _check_psd("R", R, strict=True)
        for name, val in (("A", A), ("H", H), ("Q", Q), ("R", R), ("x0", x0), ("Sigma0", S0)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def dim_state(self) -> int:
        return self.A.shape[0]

    @property
    def dim_obs(self) -> int:
        return self.H.shape[1]

    @property
    def R_inv(self) -> np.ndarray:
        return np.linalg.inv(self.R)


@dataclass(frozen=True, eq=False)
class CovariancePath:
    """Symmetric PSD matrix per grid time, ``(n+1, d, d)``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.values, dtype=float)
        if S.shape[0] != len(self.grid) or S.shape[1] != S.shape[2]:
            raise ValueError(f"covariance path shape {S.shape} does not fit the grid")
        if not np.all(np.isfinite(S)):
            raise ValueError("covariance path is not finite; the step is too large for the model")
        if np.max(np.abs(S - np.swapaxes(S, 1, 2)), initial=0.0) > SYM_TOL:
            raise ValueError("covariance path is not symmetric")
        low = np.linalg.eigvalsh(S).min()
        if low < -SYM_TOL:
            raise ValueError(f"covariance path is not PSD (min eigenvalue {low:.3g})")
        object.__setattr__(self, "values", S)

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def reversed(self) -> np.ndarray:
        return self.values[::-1]


def riccati_rhs(model: LinearModel, S: np.ndarray) -> np.ndarray:
    """``A^T S + S A + Q - S H R^-1 H^T S``."""
    SH = S @ model.H
    return model.A.T @ S + S @ model.A + model.Q - SH @ model.R_inv @ np.swapaxes(SH, -1, -2)


def _rk4_matrix(rhs, S0: np.ndarray, n: int, h: float) -> np.ndarray:
    """``n`` RK4 steps of signed size ``h`` for ``dS/ds = rhs(S)``, symmetrised each step."""
    out = np.empty((n + 1,) + S0.shape)
    out[0] = S0
    S = S0
    for k in range(n):
        k1 = rhs(S)
        k2 = rhs(S + h / 2 * k1)
        k3 = rhs(S + h / 2 * k2)
        k4 = rhs(S + h * k3)
        S = S + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        S = 0.5 * (S + S.T)
        out[k + 1] = S
    return out


def filter_covariance(model: LinearModel, grid: TimeGrid) -> CovariancePath:
    """Riccati solution ``Sigma_t`` forward from ``Sigma0`` (RK4, symmetrised each step)."""
    rhs = lambda S: riccati_rhs(model, S)  # noqa: E731
    return CovariancePath(grid, _rk4_matrix(rhs, model.Sigma0, grid.n_steps, grid.dt))


def dual_riccati(model: LinearModel, grid: TimeGrid) -> CovariancePath:
    """Control Riccati solution ``P`` indexed by dual time ``s = T - t``.

    In dual time the problem is a standard LQ regulator with dynamics
    ``dy/ds = A y + H u`` from ``y = f`` at ``s = 0`` and terminal weight
    ``Sigma0`` at ``s = T``. So ``dP/ds = -(A^T P + P A + Q - P H R^-1 H^T P)``
    with ``P_T = Sigma0``, integrated backward in ``s``. Entry ``k`` is
    ``P`` at ``s = t_k``.
    """
    G = model.H @ model.R_inv @ model.H.T

    def rhs(P):
        return P @ G @ P - model.A.T @ P - P @ model.A - model.Q

    backward = _rk4_matrix(rhs, model.Sigma0, grid.n_steps, -grid.dt)
    return CovariancePath(grid, backward[::-1])


def kalman_bucy(model: LinearModel, Z, grid: TimeGrid):
    """Kalman-Bucy mean for observation path(s) ``Z`` of shape ``(..., n+1, m)``.

    The covariance comes from :func:`filter_covariance`; the mean takes
    Euler steps ``x += A^T x dt + Sigma H R^-1 (dZ - H^T x dt)``.

    Returns:
        ``(mean, CovariancePath)`` with mean of shape ``(..., n+1, d)``.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.shape[-2] != len(grid) or Z.shape[-1] != model.dim_obs:
        raise ValueError(f"Z shape {Z.shape} does not match grid and model")
    cov = filter_covariance(model, grid)
    gain = cov.values @ model.H @ model.R_inv
    dZ = np.diff(Z, axis=-2)
    dt = grid.dt
    mean = np.empty(Z.shape[:-1] + (model.dim_state,))
    x = np.broadcast_to(model.x0, mean[..., 0, :].shape)
    mean[..., 0, :] = x
    for k in range(grid.n_steps):
        innov = dZ[..., k, :] - (x @ model.H) * dt
        x = x + (x @ model.A) * dt + innov @ gain[k].T
        mean[..., k + 1, :] = x
    return mean, cov


@dataclass(frozen=True, eq=False)
class DualLQSolution:
    """Dual state ``y`` ``(n+1, d)``, control ``u`` ``(n+1, m)`` and cost ``J``."""

    grid: TimeGrid
    y: np.ndarray
    u: np.ndarray
    cost: float
    P: CovariancePath | None = None


def lq_cost(model: LinearModel, y, u, grid: TimeGrid) -> float:
    """``1/2 y_0^T Sigma0 y_0 + int 1/2 (y^T Q y + u^T R u) dt`` by Simpson's rule."""
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    running = 0.5 * (np.einsum("ki,ij,kj->k", y, model.Q, y) + np.einsum("ki,ij,kj->k", u, model.R, u))
    return float(0.5 * y[0] @ model.Sigma0 @ y[0] + simpson(running, x=grid.times))


def solve_dual_linear(model: LinearModel, u, f, grid: TimeGrid) -> np.ndarray:
    """Backward solution of ``dy/dt = -A y - H u`` for a given open-loop ``u``.

    ``u`` is held at its left-endpoint value on each cell, which makes each
    RK4 step an exact matrix polynomial.
    """
    u = np.asarray(u, dtype=float)
    f = np.atleast_1d(np.asarray(f, dtype=float))
    if u.shape != (len(grid), model.dim_obs):
        raise ValueError(f"u must have shape {(len(grid), model.dim_obs)}, got {u.shape}")
    E, G = _rk4_maps(-model.A, -grid.dt)
    # h G c with h = -dt and c = -H u
    drive = grid.dt * (u[:-1] @ model.H.T) @ G.T
    y = np.empty((len(grid), model.dim_state))
    y[-1] = f
    for k in range(grid.n_steps - 1, -1, -1):
        y[k] = E @ y[k + 1] + drive[k]
    return y


def dual_lq_solve(model: LinearModel, f, grid: TimeGrid) -> DualLQSolution:
    """Optimal dual control by the sweep method.

    The reversed-time Riccati solution gives ``Sigma_t = P_{T-t}``; the
    feedback ``u*_t = -R^-1 H^T Sigma_t y_t`` closes the loop and ``y`` is
    integrated backward by RK4, with ``Sigma`` at cell midpoints taken from
    the cubic Hermite interpolant through the grid values and slopes.
    """
    f = np.atleast_1d(np.asarray(f, dtype=float))
    if f.shape != (model.dim_state,):
        raise ValueError(f"f must have length {model.dim_state}")
    P = dual_riccati(model, grid)
    Sigma = P.reversed()
    slope = riccati_rhs(model, Sigma)
    dt = grid.dt
    mid = 0.5 * (Sigma[1:] + Sigma[:-1]) + dt / 8 * (slope[:-1] - slope[1:])
    HRH = model.H @ model.R_inv @ model.H.T
    M = HRH @ Sigma - model.A
    M_mid = HRH @ mid - model.A

    y = np.empty((len(grid), model.dim_state))
    y[-1] = f
    h = -dt
    for k in range(grid.n_steps - 1, -1, -1):
        v = y[k + 1]
        k1 = M[k + 1] @ v
        k2 = M_mid[k] @ (v + h / 2 * k1)
        k3 = M_mid[k] @ (v + h / 2 * k2)
        k4 = M[k] @ (v + h * k3)
        y[k] = v + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    u = -np.einsum("ij,kjl,kl->ki", model.R_inv @ model.H.T, Sigma, y)
    return DualLQSolution(grid, y, u, lq_cost(model, y, u, grid), P)


@dataclass(frozen=True, eq=False)
class DualityReport:
    """Frobenius gap ``|P_{T-t} - Sigma_t|`` per grid time."""

    grid: TimeGrid
    gap: np.ndarray
    tol: float

    @property
    def max_gap(self) -> float:
        return float(self.gap.max())

    @property
    def passed(self) -> bool:
        return self.max_gap <= self.tol


def duality_check(model: LinearModel, grid: TimeGrid, tol_factor: float = 10.0) -> DualityReport:
    """Compare the reversed dual Riccati path with the filter covariance.

    The tolerance is ``tol_factor * dt`` times the covariance scale, so it
    shrinks at first order in the step.
    """
    Sigma = filter_covariance(model, grid).values
    P = dual_riccati(model, grid).values
    gap = np.linalg.norm(P[::-1] - Sigma, axis=(1, 2))
    scale = max(1.0, float(np.abs(Sigma).max()))
    return DualityReport(grid, gap, tol_factor * grid.dt * scale)


def _trial_noise(model: LinearModel, grid: TimeGrid, trials, seed: int):
    d, m, n = model.dim_state, model.dim_obs, grid.n_steps
    S0, Qh, Rh = _psd_sqrt(model.Sigma0), _psd_sqrt(model.Q), _psd_sqrt(model.R)
    X0 = np.empty((len(trials), d))
    dB = np.empty((len(trials), n, d))
    dW = np.empty((len(trials), n, m))
    for i, t in enumerate(trials):
        sig, noise = trial_streams(seed, t)
        X0[i] = model.x0 + sig.standard_normal(d) @ S0
        dB[i] = sig.standard_normal((n, d)) @ Qh
        dW[i] = noise.standard_normal((n, m)) @ Rh
    root = np.sqrt(grid.dt)
    return X0, dB * root, dW * root


def _rowmul(x, M):
    # x @ M without BLAS, so a trial's path does not depend on the batch it is in
    return (x[:, :, None] * M).sum(axis=1)


def simulate_linear(model: LinearModel, grid: TimeGrid, trials, seed: int):
    """Euler paths of signal and observation for the listed trial indices.

    Returns:
        ``(X, Z, W)`` of shapes ``(N, n+1, d)``, ``(N, n+1, m)`` and ``(N, n+1, m)``.
    """
    trials = np.atleast_1d(np.asarray(trials, dtype=np.int64))
    X0, dB, dW = _trial_noise(model, grid, trials, seed)
    X = np.empty((len(trials), len(grid), model.dim_state))
    Z = np.zeros((len(trials), len(grid), model.dim_obs))
    W = np.zeros_like(Z)
    W[:, 1:] = np.cumsum(dW, axis=1)
    X[:, 0] = X0
    for k in range(grid.n_steps):
        x = X[:, k]
        X[:, k + 1] = x + _rowmul(x, model.A) * grid.dt + dB[:, k]
        Z[:, k + 1] = Z[:, k] + _rowmul(x, model.H) * grid.dt + dW[:, k]
    return X, Z, W


@dataclass(frozen=True, eq=False)
class LinearMSEResult:
    """Per-trial errors ``S_T - f^T X_T`` with the dual cost of the control used."""

    errors: np.ndarray
    cost: float

    @property
    def mse(self) -> float:
        return float(np.mean(self.errors ** 2))

    @property
    def stderr(self) -> float:
        return float(np.std(self.errors ** 2, ddof=1) / np.sqrt(len(self.errors)))


def linear_estimator_mse(model: LinearModel, f, grid: TimeGrid, n_trials: int, seed: int,
                         u=None, batch_size: int = 1024) -> LinearMSEResult:
    """Monte Carlo error of ``S_T = y_0^T x0 - sum u_k^T dZ_k``.

    With ``u=None`` the optimal feedback control from :func:`dual_lq_solve`
    is used; otherwise ``u`` is an open-loop control path ``(n+1, m)``.
    Trials share noise streams across calls with the same ``seed``.
    """
    f = np.atleast_1d(np.asarray(f, dtype=float))
    if u is None:
        sol = dual_lq_solve(model, f, grid)
        y, u, cost = sol.y, sol.u, sol.cost
    else:
        u = np.asarray(u, dtype=float)
        y = solve_dual_linear(model, u, f, grid)
        cost = lq_cost(model, y, u, grid)
    errors = np.empty(n_trials)
    for start in range(0, n_trials, batch_size):
        trials = np.arange(start, min(start + batch_size, n_trials))
        X0, dB, dW = _trial_noise(model, grid, trials, seed)
        x = X0
        S = np.full(len(trials), float(y[0] @ model.x0))
        for k in range(grid.n_steps):
            dZ = _rowmul(x, model.H) * grid.dt + dW[:, k]
            S -= dZ @ u[k]
            x = x + _rowmul(x, model.A) * grid.dt + dB[:, k]
        errors[trials] = S - x @ f
    return LinearMSEResult(errors, cost)
