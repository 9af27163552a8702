"""Finite-state continuous-time Markov chains.

The chain lives on the canonical basis ``e_1, ..., e_d`` of R^d and obeys
``dX = A^T X dt + dB`` where ``A`` is the rate matrix (row ``i`` holds the
jump rates out of state ``i``). Paths are simulated exactly with the
Gillespie algorithm and are right-continuous with left limits.

States are 0-based integers throughout the library.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import TimeGrid

__all__ = [
    "RateMatrix",
    "JumpPath",
    "check_simplex",
    "simulate_ctmc",
    "state_vector",
    "states_on_grid",
    "occupation_times",
    "jump_cells",
    "quadratic_variation",
    "martingale_part",
    "q_of_state",
    "expected_q",
]

ROW_SUM_TOL = 1e-12
SIMPLEX_TOL = 1e-10


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_simplex(p, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Return ``p`` as a float array after checking it is a probability vector."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise ValueError(f"expected a 1-d probability vector, got shape {p.shape}")
    if np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise ValueError(f"not a probability vector: {p}")
    return p


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Generator of a finite-state chain; ``entries[i, j]`` is the rate i -> j."""

    entries: np.ndarray

    def __post_init__(self):
        raw = np.array(self.entries, dtype=float)
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
            raise ValueError(f"rate matrix must be square, got shape {raw.shape}")
        if raw.shape[0] < 2:
            raise ValueError("rate matrix needs at least two states")
        off = raw - np.diag(np.diag(raw))
        if np.any(off < 0):
            raise ValueError("off-diagonal rates must be non-negative")
        if np.any(np.abs(raw.sum(axis=1)) > 1e-8):
            raise ValueError("rows of a rate matrix must sum to zero")
        # diagonal is re-derived so rows sum to zero to machine precision
        a = off - np.diag(off.sum(axis=1))
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def T(self) -> np.ndarray:
        return self.entries.T

    @property
    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.entries)

    def stationary(self) -> np.ndarray:
        """Stationary law solving ``pi^T A = 0``; assumes irreducibility."""
        d = self.dim
        lhs = np.vstack([self.entries.T, np.ones(d)])
        rhs = np.zeros(d + 1)
        rhs[-1] = 1.0
        pi, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
        return pi


def _as_rate_matrix(A) -> RateMatrix:
    return A if isinstance(A, RateMatrix) else RateMatrix(A)


@dataclass(frozen=True, eq=False)
class JumpPath:
    """Piecewise-constant state trajectory on ``[0, horizon]``.

    ``states[k]`` is held on ``[jump_times[k-1], jump_times[k])`` with the
    conventions ``jump_times[-1] = 0`` and ``jump_times[len] = horizon``.
    """

    horizon: float
    jump_times: np.ndarray
    states: np.ndarray
    dim: int
    _bounds: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        times = np.asarray(self.jump_times, dtype=float)
        states = np.asarray(self.states, dtype=np.int64)
        if states.ndim != 1 or len(states) != len(times) + 1:
            raise ValueError("need exactly one more state than jump times")
        if np.any(states < 0) or np.any(states >= self.dim):
            raise ValueError(f"state indices must lie in 0..{self.dim - 1}")
        if np.any(states[1:] == states[:-1]):
            raise ValueError("consecutive states must differ")
        if len(times) and (times[0] <= 0 or times[-1] >= self.horizon or np.any(np.diff(times) <= 0)):
            raise ValueError("jump times must be strictly increasing inside (0, T)")
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "_bounds", np.concatenate([[0.0], times, [self.horizon]]))

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def state_at(self, t) -> np.ndarray:
        """State index (or indices) at time(s) ``t``; right-continuous."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.horizon):
            raise ValueError(f"time outside [0, {self.horizon}]")
        return self.states[np.searchsorted(self.jump_times, t, side="right")]


def simulate_ctmc(A, pi0, T: float, seed=None) -> JumpPath:
    """Exact Gillespie sample of the chain on ``[0, T]``.

    Random numbers are consumed in a fixed order: one uniform for the
    initial state, then per jump an exponential holding time followed by a
    uniform for the destination. An absorbing state simply holds until T.
    """
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    A = _as_rate_matrix(A)
    pi0 = check_simplex(pi0)
    if len(pi0) != A.dim:
        raise ValueError("initial law and rate matrix dimensions differ")
    rng = _as_rng(seed)
    rates = A.entries
    exit_rates = A.exit_rates
    cum0 = np.cumsum(pi0)
    state = int(np.searchsorted(cum0, rng.random() * cum0[-1], side="right"))
    times, states = [], [state]
    t = 0.0
    while exit_rates[state] > 0:
        t += rng.exponential(1.0 / exit_rates[state])
        if t >= T:
            break
        jump = rates[state].copy()
        jump[state] = 0.0
        cum = np.cumsum(jump)
        state = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        times.append(t)
        states.append(state)
    return JumpPath(float(T), np.array(times), np.array(states), A.dim)


def state_vector(path: JumpPath, t: float) -> np.ndarray:
    """Canonical basis vector ``e_i`` of the state occupied at time ``t``."""
    e = np.zeros(path.dim)
    e[int(path.state_at(t))] = 1.0
    return e


def _grid_times(path: JumpPath, grid) -> np.ndarray:
    times = grid.times if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    if abs(times[0]) > 1e-12 or abs(times[-1] - path.horizon) > 1e-9:
        raise ValueError("grid must span [0, T] of the path")
    return times


def states_on_grid(path: JumpPath, grid) -> np.ndarray:
    times = _grid_times(path, grid)
    return path.state_at(np.clip(times, 0.0, path.horizon))


def occupation_times(path: JumpPath, grid) -> np.ndarray:
    """Cumulative time spent in each state up to each grid time, ``(n+1, d)``.

    Exact: jump times inside a grid cell are honoured.
    """
    times = np.clip(_grid_times(path, grid), 0.0, path.horizon)
    bounds = path._bounds
    spent = np.zeros((len(path.states), path.dim))
    spent[np.arange(len(path.states)), path.states] = np.diff(bounds)
    before = np.vstack([np.zeros(path.dim), np.cumsum(spent, axis=0)[:-1]])
    seg = np.searchsorted(path.jump_times, times, side="right")
    occ = before[seg].copy()
    occ[np.arange(len(times)), path.states[seg]] += times - bounds[seg]
    return occ


def jump_cells(path: JumpPath, grid) -> np.ndarray:
    """Index ``k`` of the grid cell ``(t_k, t_{k+1}]`` holding each jump."""
    times = _grid_times(path, grid)
    return np.searchsorted(times, path.jump_times, side="left") - 1


def quadratic_variation(path: JumpPath, grid) -> np.ndarray:
    """Pathwise ``<X, X^T>_t`` sampled on the grid, shape ``(n+1, d, d)``.

    Each jump ``i -> j`` contributes ``(e_j - e_i)(e_j - e_i)^T``, counted
    from the first grid time at or after the jump.
    """
    times = _grid_times(path, grid)
    d = path.dim
    incr = np.zeros((len(times), d, d))
    if path.n_jumps:
        cells = jump_cells(path, times)
        jumps = np.zeros((path.n_jumps, d))
        idx = np.arange(path.n_jumps)
        jumps[idx, path.states[1:]] += 1.0
        jumps[idx, path.states[:-1]] -= 1.0
        np.add.at(incr, cells + 1, jumps[:, :, None] * jumps[:, None, :])
    return np.cumsum(incr, axis=0)


def martingale_part(path: JumpPath, A, grid) -> np.ndarray:
    """``B_t = X_t - int_0^t A^T X ds`` on the grid, shape ``(n+1, d)``."""
    A = _as_rate_matrix(A)
    x = np.eye(path.dim)[states_on_grid(path, grid)]
    return x - occupation_times(path, grid) @ A.entries


def q_of_state(A, i: int) -> np.ndarray:
    """Jump covariance ``Q(e_i) = sum_{j != i} A_ij (e_j - e_i)(e_j - e_i)^T``."""
    A = _as_rate_matrix(A)
    d = A.dim
    if not 0 <= i < d:
        raise ValueError(f"state index {i} outside 0..{d - 1}")
    out = np.zeros((d, d))
    for j in range(d):
        if j != i and A.entries[i, j] > 0:
            v = np.zeros(d)
            v[j], v[i] = 1.0, -1.0
            out += A.entries[i, j] * np.outer(v, v)
    return out


def expected_q(A, rho) -> np.ndarray:
    """``E[Q(X)]`` for ``X`` distributed as ``rho`` (or a stack of laws)."""
    A = _as_rate_matrix(A)
    qs = np.stack([q_of_state(A, i) for i in range(A.dim)])
    return np.einsum("...i,ijk->...jk", np.asarray(rho, dtype=float), qs)
