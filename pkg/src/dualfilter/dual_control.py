"""Dual optimal control for minimum-variance estimation of ``f^T X_T``.

The dual state solves the backward ODE

    dY/dt = -A Y - H U,    Y_T = f,    U_t = K_t^T Y_t + V_t,

with ``K``, ``V`` adapted to the observations. Its value at ``t = 0``
defines the estimator ``S_T = Y_0^T pi_0 - int U^T dZ``. Because ``Y`` and
``U`` look into the future of ``Z``, they are carried in the split form
``Y_t = Phi_t Y_0 + eta_t``, ``U_t = kappa_t^T Y_0 + gamma_t`` and every
stochastic integral goes through :mod:`dualfilter.stochint`.

Gains and offsets are held at their left-endpoint grid values on each cell.
On a cell the ODE is then linear with constant coefficients and one
classical RK4 step reduces to the matrix polynomials in :func:`_rk4_maps`.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import expm

from .ctmc import _as_rate_matrix, check_simplex, expected_q
from .grid import TimeGrid
from .observation import ObservationModel
from .stochint import SplitProcess, cumulative_forward_integral, forward_integral
from .wonham import conditional_covariance

__all__ = [
    "ControlSchedule",
    "DualPath",
    "DualDecomposition",
    "ErrorPath",
    "CostBreakdown",
    "solve_backward",
    "transition_matrix",
    "decompose",
    "solve_and_decompose",
    "estimator",
    "error_process",
    "quadratic_variation_term",
    "cost_terms",
    "deterministic_cost",
]


@dataclass(frozen=True, eq=False)
class ControlSchedule:
    """Gain ``K`` of shape ``(..., n+1, d, m)`` and offset ``V`` of ``(..., n+1, m)``."""

    grid: TimeGrid
    K: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        V = np.asarray(self.V, dtype=float)
        n = len(self.grid)
        if K.shape[-3] != n or V.shape[-2] != n:
            raise ValueError(f"control schedule must have {n} grid points")
        if K.shape[-1] != V.shape[-1]:
            raise ValueError("K and V disagree on the observation dimension")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(V))):
            raise ValueError("control schedule must be finite")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "V", V)

    @classmethod
    def constant(cls, grid: TimeGrid, k, v) -> "ControlSchedule":
        k = np.atleast_2d(np.asarray(k, dtype=float))
        v = np.atleast_1d(np.asarray(v, dtype=float))
        n = len(grid)
        return cls(grid, np.broadcast_to(k, (n,) + k.shape), np.broadcast_to(v, (n,) + v.shape))

    @classmethod
    def zero(cls, grid: TimeGrid, d: int, m: int) -> "ControlSchedule":
        return cls.constant(grid, np.zeros((d, m)), np.zeros(m))


@dataclass(frozen=True, eq=False)
class DualPath:
    grid: TimeGrid
    Y: np.ndarray
    U: np.ndarray
    f: np.ndarray

    @property
    def Y0(self) -> np.ndarray:
        return self.Y[..., 0, :]


@dataclass(frozen=True, eq=False)
class DualDecomposition:
    """``Y_k = Phi_k Y_0 + eta_k`` and ``U_k = kappa_k^T Y_0 + gamma_k``."""

    grid: TimeGrid
    Phi: np.ndarray
    eta: np.ndarray
    kappa: np.ndarray
    gamma: np.ndarray

    def Y_split(self, Y0) -> SplitProcess:
        return SplitProcess(alpha=self.eta, F=Y0, xi=np.swapaxes(self.Phi, -1, -2))

    def U_split(self, Y0) -> SplitProcess:
        return SplitProcess(alpha=self.gamma, F=Y0, xi=self.kappa)

    def reconstruction_error(self, dual: DualPath) -> float:
        """Largest relative mismatch against a directly solved dual path."""
        Y0 = dual.Y0
        Y = self.Y_split(Y0).values()
        U = self.U_split(Y0).values()
        scale_y = max(1.0, float(np.max(np.abs(dual.Y))))
        scale_u = max(1.0, float(np.max(np.abs(dual.U))))
        return max(float(np.max(np.abs(Y - dual.Y))) / scale_y,
                   float(np.max(np.abs(U - dual.U))) / scale_u)


@dataclass(frozen=True, eq=False)
class ErrorPath:
    grid: TimeGrid
    values: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.values[..., -1]


@dataclass(frozen=True, eq=False)
class CostBreakdown:
    """The four additive terms of the dual objective, per trial or averaged."""

    initial_term: np.ndarray | float
    control_energy: np.ndarray | float
    quadratic_variation_term: np.ndarray | float
    martingale_term: np.ndarray | float

    @property
    def total(self):
        return (self.initial_term + self.control_energy
                + self.quadratic_variation_term + self.martingale_term)

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["J"] = self.total
        return out


def _rk4_maps(M: np.ndarray, h: float):
    """RK4 on ``y' = M y + c`` over a step ``h`` gives ``y + = E y + h G c``.

    ``E = I + x + x^2/2 + x^3/6 + x^4/24`` and ``G = I + x/2 + x^2/6 + x^3/24``
    with ``x = h M``. Returns ``(E, G)``.
    """
    eye = np.eye(M.shape[-1])
    x = h * M
    x2 = x @ x
    x3 = x2 @ x
    return eye + x + x2 / 2 + x3 / 6 + (x2 @ x2) / 24, eye + x / 2 + x2 / 6 + x3 / 24


def _cell_generators(A, model: ObservationModel, K: np.ndarray) -> np.ndarray:
    """``-(A + H K_k^T)`` for every cell, ``(..., n, d, d)``."""
    return -(A.entries + model.H @ np.swapaxes(K[..., :-1, :, :], -1, -2))


def _matvec(M, v):
    return (M @ v[..., None])[..., 0]


def _backward_sweep(E, G, ctrl: ControlSchedule, model, f, dt):
    n = ctrl.grid.n_steps
    drive = dt * _matvec(G, ctrl.V[..., :-1, :] @ model.H.T)
    batch = np.broadcast_shapes(E.shape[:-3], ctrl.V.shape[:-2], f.shape[:-1])
    Y = np.empty(batch + (n + 1, len(f)))
    Y[..., n, :] = f
    for k in range(n - 1, -1, -1):
        Y[..., k, :] = _matvec(E[..., k, :, :], Y[..., k + 1, :]) + drive[..., k, :]
    U = (np.swapaxes(ctrl.K, -1, -2) @ Y[..., None])[..., 0] + ctrl.V
    return DualPath(ctrl.grid, Y, U, f)


def _forward_sweep(E, G, ctrl: ControlSchedule, model, dt):
    """Run the backward cell maps ``Y_k = E_k Y_{k+1} + c_k`` in reverse.

    Inverting the same maps makes ``Y_k = Phi_k Y_0 + eta_k`` hold for the
    discrete scheme up to rounding, rather than to the local RK4 error.
    """
    n = ctrl.grid.n_steps
    d = E.shape[-1]
    E_inv = np.linalg.inv(E)
    Phi = np.empty(E.shape[:-3] + (n + 1, d, d))
    Phi[..., 0, :, :] = np.eye(d)
    drive = dt * _matvec(G, ctrl.V[..., :-1, :] @ model.H.T)
    eta = np.zeros(np.broadcast_shapes(E.shape[:-3], ctrl.V.shape[:-2]) + (n + 1, d))
    for k in range(n):
        Phi[..., k + 1, :, :] = E_inv[..., k, :, :] @ Phi[..., k, :, :]
        eta[..., k + 1, :] = _matvec(E_inv[..., k, :, :], eta[..., k, :] - drive[..., k, :])
    kappa = np.swapaxes(Phi, -1, -2) @ ctrl.K
    gamma = (np.swapaxes(ctrl.K, -1, -2) @ eta[..., None])[..., 0] + ctrl.V
    return DualDecomposition(ctrl.grid, Phi, eta, kappa, gamma)


def solve_backward(A, model: ObservationModel, ctrl: ControlSchedule, f) -> DualPath:
    """Integrate the dual ODE backward from ``Y_T = f`` (set exactly)."""
    A = _as_rate_matrix(A)
    dt = ctrl.grid.dt
    E, G = _rk4_maps(_cell_generators(A, model, ctrl.K), -dt)
    return _backward_sweep(E, G, ctrl, model, np.asarray(f, dtype=float), dt)


def transition_matrix(A, model: ObservationModel, K, grid: TimeGrid) -> np.ndarray:
    """Forward ``Phi(t_k, 0)`` for ``dPhi/dt = -(A + H K^T) Phi``, ``Phi_0 = I``.

    Each cell uses the inverse of the backward RK4 map, so this agrees with
    :func:`decompose` exactly.
    """
    A = _as_rate_matrix(A)
    K = np.asarray(K, dtype=float)
    E = np.linalg.inv(_rk4_maps(_cell_generators(A, model, K), -grid.dt)[0])
    Phi = np.empty(E.shape[:-3] + (grid.n_steps + 1, A.dim, A.dim))
    Phi[..., 0, :, :] = np.eye(A.dim)
    for k in range(grid.n_steps):
        Phi[..., k + 1, :, :] = E[..., k, :, :] @ Phi[..., k, :, :]
    return Phi


def decompose(dual: DualPath, ctrl: ControlSchedule, A, model: ObservationModel) -> DualDecomposition:
    """Adapted factors ``Phi, eta, kappa, gamma`` of the dual solution ``dual``.

    ``eta`` solves ``d eta/dt = -(A + H K^T) eta - H V`` forward from zero,
    which is the variation-of-constants term ``-int Phi(t, s) H V_s ds``;
    then ``kappa = Phi^T K`` and ``gamma = K^T eta + V``. The factors depend
    on ``ctrl`` only; ``dual`` fixes the grid they must share.
    """
    if dual.grid != ctrl.grid:
        raise ValueError("dual path and control schedule live on different grids")
    A = _as_rate_matrix(A)
    dt = ctrl.grid.dt
    E, G = _rk4_maps(_cell_generators(A, model, ctrl.K), -dt)
    return _forward_sweep(E, G, ctrl, model, dt)


def solve_and_decompose(A, model: ObservationModel, ctrl: ControlSchedule, f):
    """:func:`solve_backward` and :func:`decompose` sharing one set of cell maps."""
    A = _as_rate_matrix(A)
    dt = ctrl.grid.dt
    E, G = _rk4_maps(_cell_generators(A, model, ctrl.K), -dt)
    dual = _backward_sweep(E, G, ctrl, model, np.asarray(f, dtype=float), dt)
    return dual, _forward_sweep(E, G, ctrl, model, dt)


def estimator(Y0, pi0, decomp: DualDecomposition, Z) -> np.ndarray:
    """``S_T = Y_0^T pi_0 - Y_0^T sum kappa_k dZ_k - sum gamma_k^T dZ_k``."""
    Y0 = np.asarray(Y0, dtype=float)
    integral = forward_integral(decomp.U_split(Y0), SplitProcess.adapted(Z))
    return Y0 @ np.asarray(pi0, dtype=float) - integral


def error_process(Y0, X, pi0, decomp: DualDecomposition, W, B) -> ErrorPath:
    """``E_t = Y_0^T (X_0 - pi_0) + int_0^t U^T dW + int_0^t Y^T dB`` on the grid.

    ``X``, ``W`` and ``B`` are gridded paths ``(..., n+1, .)``; ``B`` is the
    martingale part of ``X``.
    """
    Y0 = np.asarray(Y0, dtype=float)
    X = np.asarray(X, dtype=float)
    e0 = np.einsum("...d,...d->...", Y0, X[..., 0, :] - np.asarray(pi0, dtype=float))
    values = (e0[..., None]
              + cumulative_forward_integral(decomp.U_split(Y0), SplitProcess.adapted(W))
              + cumulative_forward_integral(decomp.Y_split(Y0), SplitProcess.adapted(B)))
    return ErrorPath(decomp.grid, values)


def quadratic_variation_term(Y, qv) -> np.ndarray:
    """``1/2 sum_k Y_k^T (QV_{k+1} - QV_k) Y_k`` from a cumulative ``(..., n+1, d, d)`` path."""
    Y = np.asarray(Y, dtype=float)
    dqv = np.diff(np.asarray(qv, dtype=float), axis=-3)
    return 0.5 * np.einsum("...ki,...kij,...kj->...", Y[..., :-1, :], dqv, Y[..., :-1, :])


def cost_terms(dual: DualPath, err: ErrorPath, model: ObservationModel, W, B, qv_term) -> CostBreakdown:
    """Per-trial terms of ``J``, every integral evaluated at left endpoints.

    ``qv_term`` is the already evaluated ``1/2 int Y^T d<X, X^T> Y`` (see
    :func:`quadratic_variation_term`), since it can be assembled from a
    dense path or from a sparse list of jumps.
    """
    dt = dual.grid.dt
    U, Y, E = dual.U[..., :-1, :], dual.Y[..., :-1, :], err.values[..., :-1]
    energy = 0.5 * dt * np.einsum("...ki,ij,...kj->...", U, model.R, U)
    dW = np.diff(np.asarray(W, dtype=float), axis=-2)
    dB = np.diff(np.asarray(B, dtype=float), axis=-2)
    mart = np.einsum("...k,...k->...", E, np.einsum("...ki,...ki->...k", U, dW)
                     + np.einsum("...ki,...ki->...k", Y, dB))
    return CostBreakdown(0.5 * err.values[..., 0] ** 2, energy, np.asarray(qv_term, dtype=float), mart)


def deterministic_cost(A, model: ObservationModel, ctrl: ControlSchedule, f, pi0) -> CostBreakdown:
    """Closed-form cost of an observation-independent control.

    For deterministic ``K``, ``V`` the cross terms have zero mean and

        J = 1/2 Y_0^T Sigma_0 Y_0 + int 1/2 U^T R U + 1/2 Y^T E[Q(X_t)] Y dt,

    with ``E[Q(X_t)]`` taken under ``exp(A^T t) pi_0``; trapezoidal quadrature.
    """
    A = _as_rate_matrix(A)
    pi0 = check_simplex(pi0)
    if ctrl.K.ndim != 3 or ctrl.V.ndim != 2:
        raise ValueError("deterministic_cost needs a single, observation-free schedule")
    grid = ctrl.grid
    dual = solve_backward(A, model, ctrl, f)
    step = expm(A.entries.T * grid.dt)
    rho = np.empty((len(grid), A.dim))
    rho[0] = pi0
    for k in range(grid.n_steps):
        rho[k + 1] = step @ rho[k]
    Y, U = dual.Y, dual.U
    energy = 0.5 * np.einsum("ki,ij,kj->k", U, model.R, U)
    jumps = 0.5 * np.einsum("ki,kij,kj->k", Y, expected_q(A, rho), Y)
    Y0 = dual.Y0
    return CostBreakdown(
        0.5 * float(Y0 @ conditional_covariance(pi0) @ Y0),
        float(trapezoid(energy, dx=grid.dt)),
        float(trapezoid(jumps, dx=grid.dt)),
        0.0,
    )
