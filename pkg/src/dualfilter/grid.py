"""Uniform time grids shared by every gridded path in the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["TimeGrid", "uniform_grid"]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_n = T`` with step ``T / n``."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        # k * dt rather than cumulative sums keeps the endpoint exact
        return np.arange(self.n_steps + 1) * self.dt

    def __len__(self) -> int:
        return self.n_steps + 1

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon, self.n_steps * factor)


def uniform_grid(horizon: float, dt: float, tol: float = 1e-9) -> TimeGrid:
    """Build the grid of step ``dt`` on ``[0, horizon]``.

    Raises:
        ValueError: if ``dt`` does not divide ``horizon`` within ``tol``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = round(horizon / dt)
    if n < 1 or abs(n * dt - horizon) > tol:
        raise ValueError(f"dt={dt} does not divide horizon T={horizon}")
    return TimeGrid(float(horizon), int(n))
