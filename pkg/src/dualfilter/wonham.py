"""Wonham filter for a finite-state chain observed in Gaussian noise.

The filter integrates

    d pi = A^T pi dt - K dI,         dI = dZ - H^T pi dt,
    K    = -(diag(pi) - pi pi^T) H R^{-1},

with Euler-Maruyama steps followed by a clamp-and-renormalise projection
onto the simplex. ``bayes_oracle`` is an exact discrete-time HMM recursion
for the same gridded observations and serves as an independent reference.

All routines accept leading batch axes on ``Z`` (and on ``pi`` for the
pointwise helpers), so many trials can be filtered at once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.special import logsumexp

from .ctmc import _as_rate_matrix, check_simplex
from .grid import TimeGrid
from .observation import ObservationModel

__all__ = [
    "FilterBlowUpError",
    "FilterPath",
    "GainSchedule",
    "conditional_covariance",
    "optimal_gain",
    "wonham_step",
    "run_wonham",
    "bayes_oracle",
]

log = logging.getLogger(__name__)

BLOWUP_MASS = 1e-12


def _collapsed(mass):
    # the Euler update conserves total mass, so after clamping only overflow
    # (non-finite values) can drive the normaliser out of range
    return ~np.isfinite(mass) | (mass < BLOWUP_MASS)


class FilterBlowUpError(FloatingPointError):
    """The projected Euler step lost (almost) all probability mass."""


@dataclass(frozen=True, eq=False)
class FilterPath:
    """Simplex-valued path ``(..., n+1, d)`` with per-trial projection counts."""

    grid: TimeGrid
    values: np.ndarray
    clamp_count: np.ndarray | int = 0
    failed: np.ndarray | bool = False

    @property
    def terminal(self) -> np.ndarray:
        return self.values[..., -1, :]


@dataclass(frozen=True, eq=False)
class GainSchedule:
    """Gain ``K_t`` (d x m) per grid time, shape ``(..., n+1, d, m)``."""

    grid: TimeGrid
    values: np.ndarray


def conditional_covariance(pi) -> np.ndarray:
    """``diag(pi) - pi pi^T``, the covariance of ``X`` when ``X ~ pi``."""
    pi = np.asarray(pi, dtype=float)
    return pi[..., :, None] * np.eye(pi.shape[-1]) - pi[..., :, None] * pi[..., None, :]


def optimal_gain(pi, model: ObservationModel) -> np.ndarray:
    return -conditional_covariance(pi) @ model.H @ model.R_inv


def _euler(pi, dZ, dt, At, H, HRi):
    innov = dZ - (pi @ H) * dt
    cov = conditional_covariance(pi)
    raw = pi + (pi @ At.T) * dt + np.einsum("...ij,...j->...i", cov @ HRi, innov)
    clamped = np.any(raw < 0, axis=-1)
    raw = np.maximum(raw, 0.0)
    mass = raw.sum(axis=-1)
    return raw, clamped, mass


def wonham_step(pi, dZ, dt: float, A, model: ObservationModel) -> np.ndarray:
    """One projected Euler-Maruyama step of the filter.

    Raises:
        FilterBlowUpError: if the renormalising mass drops below 1e-12 or
            is not finite.
    """
    A = _as_rate_matrix(A)
    pi = check_simplex(pi)
    if not dt > 0:
        raise ValueError("dt must be positive")
    with np.errstate(over="ignore", invalid="ignore"):
        raw, _, mass = _euler(pi, np.asarray(dZ, dtype=float), dt, A.T, model.H, model.H @ model.R_inv)
    if _collapsed(mass):
        raise FilterBlowUpError(f"filter normaliser {mass:.3g} after step (dt={dt})")
    return raw / mass


def run_wonham(Z, grid: TimeGrid, pi0, A, model: ObservationModel, on_failure: str = "raise"):
    """Filter the observation path(s) ``Z`` of shape ``(..., n+1, m)``.

    The gain at ``t_k`` is computed from ``pi_k`` before the step, so the
    returned schedule is piecewise constant and adapted to ``Z``.

    Args:
        on_failure: ``"raise"`` to raise :class:`FilterBlowUpError`, or
            ``"flag"`` to mark the trial as failed and hold its last state.

    Returns:
        ``(FilterPath, GainSchedule)``.
    """
    A = _as_rate_matrix(A)
    pi0 = check_simplex(pi0)
    Z = np.asarray(Z, dtype=float)
    if Z.shape[-2] != len(grid):
        raise ValueError(f"Z has {Z.shape[-2]} grid points, grid has {len(grid)}")
    if on_failure not in ("raise", "flag"):
        raise ValueError(f"unknown on_failure mode {on_failure!r}")
    dZ = np.diff(Z, axis=-2)
    batch = Z.shape[:-2]
    dt = grid.dt
    At, H, HRi = A.T, model.H, model.H @ model.R_inv

    pis = np.empty(batch + (len(grid), A.dim))
    pis[..., 0, :] = pi0
    clamps = np.zeros(batch, dtype=np.int64)
    failed = np.zeros(batch, dtype=bool)
    pi = pis[..., 0, :]
    for k in range(grid.n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            raw, clamped, mass = _euler(pi, dZ[..., k, :], dt, At, H, HRi)
        bad = _collapsed(mass)
        if np.any(bad):
            if on_failure == "raise":
                raise FilterBlowUpError(f"filter mass collapsed at t={(k + 1) * dt:.6g}")
            failed |= bad
        clamps += clamped & ~failed
        new = raw / np.where(bad, 1.0, mass)[..., None]
        pi = np.where(failed[..., None], pi, new)
        pis[..., k + 1, :] = pi
    if np.any(clamps):
        log.debug("simplex projection active on %d of %d steps", int(clamps.sum()),
                  grid.n_steps * max(1, int(np.prod(batch))))
    gains = optimal_gain(pis, model)
    if not batch:
        clamps, failed = int(clamps), bool(failed)
    return FilterPath(grid, pis, clamps, failed), GainSchedule(grid, gains)


def bayes_oracle(Z, grid: TimeGrid, pi0, A, model: ObservationModel) -> FilterPath:
    """Exact conditional law of the gridded model.

    Each step predicts with ``expm(A^T dt)`` and then weights state ``i`` by
    the Gaussian likelihood of ``dZ_k`` with mean ``H[i] dt`` and covariance
    ``R dt``. Computed in log space.
    """
    A = _as_rate_matrix(A)
    pi0 = check_simplex(pi0)
    Z = np.asarray(Z, dtype=float)
    if Z.shape[-2] != len(grid):
        raise ValueError(f"Z has {Z.shape[-2]} grid points, grid has {len(grid)}")
    dt = grid.dt
    dZ = np.diff(Z, axis=-2)
    P = expm(A.T * dt)
    Ri = model.R_inv / dt
    mean = model.H * dt
    # state-dependent part of the log-likelihood; the dZ^T R^-1 dZ term cancels
    loglik = dZ @ (Ri @ mean.T) - 0.5 * np.einsum("ij,jk,ik->i", mean, Ri, mean)

    out = np.empty(Z.shape[:-2] + (len(grid), A.dim))
    out[..., 0, :] = pi0
    logp = np.log(np.maximum(np.broadcast_to(pi0, out[..., 0, :].shape), 0.0))
    with np.errstate(divide="ignore"):
        for k in range(grid.n_steps):
            pred = np.exp(logp) @ P.T
            logp = np.log(pred) + loglik[..., k, :]
            logp = logp - logsumexp(logp, axis=-1, keepdims=True)
            out[..., k + 1, :] = np.exp(logp)
    return FilterPath(grid, out)
