"""Noisy linear observations ``dZ = H^T X dt + dW`` of a jump path."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctmc import JumpPath, _as_rng, occupation_times
from .grid import TimeGrid

__all__ = ["ObservationModel", "Observation", "simulate_observation", "brownian_increments"]


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """Observation map ``H`` (d x m, row i is ``h(e_i)``) and noise covariance ``R``."""

    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        if H.ndim == 1:
            H = H[:, None]
        R = np.atleast_2d(np.array(self.R, dtype=float))
        if R.shape != (H.shape[1], H.shape[1]):
            raise ValueError(f"R must be {H.shape[1]}x{H.shape[1]}, got {R.shape}")
        if not np.allclose(R, R.T, atol=1e-12):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        for name, val in (("H", H), ("R", R)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def dim_state(self) -> int:
        return self.H.shape[0]

    @property
    def dim_obs(self) -> int:
        return self.H.shape[1]

    @property
    def R_inv(self) -> np.ndarray:
        return np.linalg.inv(self.R)

    @property
    def noise_factor(self) -> np.ndarray:
        """Symmetric square root ``L`` with ``L L = R``."""
        w, v = np.linalg.eigh(self.R)
        return (v * np.sqrt(w)) @ v.T


@dataclass(frozen=True, eq=False)
class Observation:
    """Observation path ``Z`` and its noise ``W`` on a grid, both ``(n+1, m)``."""

    grid: TimeGrid
    Z: np.ndarray
    W: np.ndarray


def brownian_increments(model: ObservationModel, grid: TimeGrid, rng, substeps: int = 1) -> np.ndarray:
    """Increments of ``W`` with covariance ``R dt``, shape ``(n, m)``.

    With ``substeps > 1`` the increments are drawn on the grid refined by
    that factor and summed, so paths on nested grids can share one draw.
    """
    fine = rng.standard_normal((grid.n_steps * substeps, model.dim_obs))
    fine = fine @ model.noise_factor * np.sqrt(grid.dt / substeps)
    if substeps == 1:
        return fine
    return fine.reshape(grid.n_steps, substeps, model.dim_obs).sum(axis=1)


def simulate_observation(path: JumpPath, model: ObservationModel, grid: TimeGrid, seed=None,
                         substeps: int = 1) -> Observation:
    """Observe ``path`` on ``grid``; the drift integral over each cell is exact."""
    if abs(grid.horizon - path.horizon) > 1e-9:
        raise ValueError(f"grid horizon {grid.horizon} != path horizon {path.horizon}")
    if model.dim_state != path.dim:
        raise ValueError("observation model and path dimensions differ")
    rng = _as_rng(seed)
    dW = brownian_increments(model, grid, rng, substeps)
    W = np.vstack([np.zeros(model.dim_obs), np.cumsum(dW, axis=0)])
    Z = occupation_times(path, grid) @ model.H + W
    return Observation(grid, Z, W)
