"""Monte Carlo evaluation of the dual objective over simulated trials.

Every trial owns two generator streams derived from ``(seed, trial)``: one
for the signal and one for the observation noise. Control variants
evaluated in the same call therefore see identical signal and noise paths
(common random numbers), and any trial can be regenerated on its own.
Trials are processed in fixed-size chunks and concatenated in index order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ctmc import RateMatrix, _as_rate_matrix, check_simplex, jump_cells, occupation_times, simulate_ctmc, states_on_grid
from .dual_control import (
    ControlSchedule,
    CostBreakdown,
    cost_terms,
    error_process,
    estimator,
    solve_and_decompose,
)
from .grid import TimeGrid
from .observation import ObservationModel, simulate_observation
from .wonham import bayes_oracle, run_wonham

__all__ = [
    "FiniteStateScenario",
    "ControlVariant",
    "TrialBatch",
    "VariantTrials",
    "MonteCarloSummary",
    "trial_streams",
    "simulate_trials",
    "evaluate_variant",
    "run_experiment",
    "cost_monte_carlo",
    "summarize",
    "paired_difference",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FiniteStateScenario:
    A: RateMatrix
    model: ObservationModel
    pi0: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        object.__setattr__(self, "A", _as_rate_matrix(self.A))
        object.__setattr__(self, "pi0", check_simplex(self.pi0))
        if self.model.dim_state != self.A.dim or len(self.pi0) != self.A.dim:
            raise ValueError("scenario dimensions are inconsistent")

    @property
    def d(self) -> int:
        return self.A.dim

    @property
    def m(self) -> int:
        return self.model.dim_obs

    def with_grid(self, grid: TimeGrid) -> "FiniteStateScenario":
        return FiniteStateScenario(self.A, self.model, self.pi0, grid)


@dataclass(frozen=True, eq=False)
class ControlVariant:
    """Recipe for an admissible control ``U = K^T Y + V``.

    Attributes:
        gain: ``"zero"``, ``"fixed"`` (use ``k``) or ``"optimal"`` (filter gain).
        k: fixed gain, ``(d, m)`` or per grid time ``(n+1, d, m)``.
        v: deterministic offset, ``(m,)`` or ``(n+1, m)``.
        v_obs: ``(m, m)`` weight of the adapted offset ``v_obs @ tanh(Z_t)``.
    """

    name: str
    gain: str = "zero"
    k: np.ndarray | None = None
    v: np.ndarray | None = None
    v_obs: np.ndarray | None = None

    def __post_init__(self):
        if self.gain not in ("zero", "fixed", "optimal"):
            raise ValueError(f"unknown gain kind {self.gain!r}")
        if self.gain == "fixed" and self.k is None:
            raise ValueError("a fixed gain needs k")

    @property
    def uses_filter(self) -> bool:
        return self.gain == "optimal"

    @property
    def is_deterministic(self) -> bool:
        return self.gain != "optimal" and self.v_obs is None

    def schedule(self, grid: TimeGrid, d: int, m: int, Z=None, gains=None) -> ControlSchedule:
        n = len(grid)
        if self.gain == "optimal":
            K = gains
        elif self.gain == "fixed":
            K = np.broadcast_to(np.asarray(self.k, dtype=float), (n, d, m))
        else:
            K = np.zeros((n, d, m))
        V = np.zeros((n, m)) if self.v is None else np.broadcast_to(np.asarray(self.v, dtype=float), (n, m))
        if self.v_obs is not None:
            V = V + np.tanh(Z) @ np.asarray(self.v_obs, dtype=float).T
        if K.ndim < V.ndim + 1:
            K = np.broadcast_to(K, V.shape[:-2] + K.shape)
        elif V.ndim + 1 < K.ndim:
            V = np.broadcast_to(V, K.shape[:-3] + V.shape)
        return ControlSchedule(grid, K, V)


def trial_streams(seed: int, trial: int):
    """Independent (signal, noise) generators for one trial."""
    signal, noise = np.random.SeedSequence([int(seed), int(trial)]).spawn(2)
    return np.random.default_rng(signal), np.random.default_rng(noise)


@dataclass(frozen=True, eq=False)
class TrialBatch:
    """Gridded signal and observation data for a block of trials.

    Jumps are kept as flat arrays: jump ``r`` belongs to local trial
    ``jump_trial[r]``, falls in cell ``jump_cell[r]`` and goes from state
    ``jump_from[r]`` to ``jump_to[r]``.
    """

    grid: TimeGrid
    trials: np.ndarray
    X: np.ndarray
    B: np.ndarray
    W: np.ndarray
    Z: np.ndarray
    jump_trial: np.ndarray
    jump_cell: np.ndarray
    jump_from: np.ndarray
    jump_to: np.ndarray

    def __len__(self) -> int:
        return len(self.trials)

    def qv_term(self, Y) -> np.ndarray:
        """``1/2 sum_jumps (Y_k[j] - Y_k[i])^2`` with ``Y`` at the cell's left end."""
        Y = np.asarray(Y, dtype=float)
        t, k = self.jump_trial, self.jump_cell
        diff = Y[t, k, self.jump_to] - Y[t, k, self.jump_from]
        return 0.5 * np.bincount(t, weights=diff ** 2, minlength=len(self))


def simulate_trials(scenario: FiniteStateScenario, trials: Sequence[int], seed: int, substeps: int = 1) -> TrialBatch:
    grid, d = scenario.grid, scenario.d
    X, B, W, Z = [], [], [], []
    jt, jc, jf, jto = [], [], [], []
    for local, trial in enumerate(trials):
        sig, noise = trial_streams(seed, trial)
        path = simulate_ctmc(scenario.A, scenario.pi0, grid.horizon, sig)
        obs = simulate_observation(path, scenario.model, grid, noise, substeps)
        x = np.eye(d)[states_on_grid(path, grid)]
        X.append(x)
        B.append(x - occupation_times(path, grid) @ scenario.A.entries)
        W.append(obs.W)
        Z.append(obs.Z)
        if path.n_jumps:
            jt.append(np.full(path.n_jumps, local))
            jc.append(jump_cells(path, grid))
            jf.append(path.states[:-1])
            jto.append(path.states[1:])

    def flat(parts):
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    return TrialBatch(grid, np.asarray(trials), np.stack(X), np.stack(B), np.stack(W), np.stack(Z),
                      flat(jt), flat(jc), flat(jf), flat(jto))


@dataclass(eq=False)
class VariantTrials:
    """Per-trial outcomes of one control variant."""

    name: str
    trials: np.ndarray
    cost: CostBreakdown
    S_T: np.ndarray
    fX_T: np.ndarray
    failed: np.ndarray
    clamp_count: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def J(self) -> np.ndarray:
        return self.cost.total

    @property
    def half_sq_error(self) -> np.ndarray:
        return 0.5 * (self.S_T - self.fX_T) ** 2

    @property
    def ok(self) -> np.ndarray:
        return ~self.failed


def _filter_batch(scenario: FiniteStateScenario, batch: TrialBatch):
    filt, gains = run_wonham(batch.Z, scenario.grid, scenario.pi0, scenario.A, scenario.model, on_failure="flag")
    return filt, gains


def evaluate_variant(variant: ControlVariant, scenario: FiniteStateScenario, batch: TrialBatch, f,
                     filt=None, gains=None) -> VariantTrials:
    """Solve the dual problem for every trial in ``batch`` and tally ``J``."""
    f = np.asarray(f, dtype=float)
    if variant.uses_filter and gains is None:
        filt, gains = _filter_batch(scenario, batch)
    ctrl = variant.schedule(scenario.grid, scenario.d, scenario.m, batch.Z,
                            None if gains is None else gains.values)
    # trials whose filter blew up carry non-finite gains; they are excluded below
    quiet = variant.uses_filter and np.any(filt.failed)
    with np.errstate(**({"all": "ignore"} if quiet else {})):
        dual, dec = solve_and_decompose(scenario.A, scenario.model, ctrl, f)
        # observation-free controls are solved once and shared by every trial
        Y = np.broadcast_to(dual.Y, (len(batch),) + dual.Y.shape[-2:])
        U = np.broadcast_to(dual.U, (len(batch),) + dual.U.shape[-2:])
        Y0 = Y[:, 0, :]
        dual = type(dual)(dual.grid, Y, U, f)
        S_T = estimator(Y0, scenario.pi0, dec, batch.Z)
        err = error_process(Y0, batch.X, scenario.pi0, dec, batch.W, batch.B)
        cost = cost_terms(dual, err, scenario.model, batch.W, batch.B, batch.qv_term(Y))
    if variant.uses_filter:
        failed = np.asarray(filt.failed, dtype=bool)
        clamps = np.asarray(filt.clamp_count)
    else:
        failed = np.zeros(len(batch), dtype=bool)
        clamps = np.zeros(len(batch), dtype=np.int64)
    return VariantTrials(variant.name, batch.trials, cost, S_T, batch.X[:, -1, :] @ f, failed, clamps)


def _concat(parts: list[VariantTrials]) -> VariantTrials:
    cost = CostBreakdown(*(np.concatenate([getattr(p.cost, name) for p in parts])
                           for name in ("initial_term", "control_energy", "quadratic_variation_term",
                                        "martingale_term")))
    extras = {key: np.concatenate([p.extras[key] for p in parts]) for key in parts[0].extras}
    return VariantTrials(parts[0].name, np.concatenate([p.trials for p in parts]), cost,
                         np.concatenate([p.S_T for p in parts]), np.concatenate([p.fX_T for p in parts]),
                         np.concatenate([p.failed for p in parts]),
                         np.concatenate([p.clamp_count for p in parts]), extras)


def run_experiment(variants: Sequence[ControlVariant], scenario: FiniteStateScenario, f, n_trials: int,
                   seed: int, batch_size: int = 256, with_oracle: bool = False,
                   substeps: int = 1) -> dict[str, VariantTrials]:
    """Evaluate several control variants on common trials ``0 .. n_trials-1``.

    With ``with_oracle`` each result carries ``extras["f_pi_wonham"]`` and
    ``extras["f_pi_oracle"]``, the filter and oracle estimates of ``f^T X_T``,
    and ``extras["oracle_gap"]``, the largest l1 distance between the two
    filter paths. ``substeps`` is passed to :func:`simulate_trials`.
    """
    if n_trials < 2:
        raise ValueError("need at least two trials")
    names = [v.name for v in variants]
    if len(set(names)) != len(names):
        raise ValueError(f"variant names must be unique: {names}")
    f = np.asarray(f, dtype=float)
    parts: dict[str, list[VariantTrials]] = {v.name: [] for v in variants}
    need_filter = with_oracle or any(v.uses_filter for v in variants)
    for start in range(0, n_trials, batch_size):
        batch = simulate_trials(scenario, range(start, min(start + batch_size, n_trials)), seed, substeps)
        filt = gains = None
        if need_filter:
            filt, gains = _filter_batch(scenario, batch)
        extras = {}
        if with_oracle:
            oracle = bayes_oracle(batch.Z, scenario.grid, scenario.pi0, scenario.A, scenario.model)
            extras = {"f_pi_wonham": filt.terminal @ f, "f_pi_oracle": oracle.terminal @ f,
                      "oracle_gap": np.abs(filt.values - oracle.values).sum(axis=-1).max(axis=-1)}
        for v in variants:
            res = evaluate_variant(v, scenario, batch, f, filt, gains)
            res.extras.update(extras)
            parts[v.name].append(res)
    out = {name: _concat(p) for name, p in parts.items()}
    for name, res in out.items():
        if np.any(res.failed):
            log.warning("%s: %d of %d trials excluded after filter blow-up", name, int(res.failed.sum()), n_trials)
    return out


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(np.mean(x)) if len(x) else float("nan"), float("nan")
    return float(np.mean(x)), float(np.std(x, ddof=1) / np.sqrt(len(x)))


@dataclass(frozen=True)
class MonteCarloSummary:
    """Means and standard errors over the trials that did not fail."""

    name: str
    n_trials: int
    n_failed: int
    clamp_count: int
    cost_mean: CostBreakdown
    cost_stderr: CostBreakdown
    J_mean: float
    J_stderr: float
    mse_mean: float
    mse_stderr: float

    @property
    def combined_stderr(self) -> float:
        return float(np.hypot(self.J_stderr, self.mse_stderr))

    def row(self) -> dict:
        out = {"variant": self.name, "n_trials": self.n_trials, "n_failed": self.n_failed,
               "clamp_count": self.clamp_count}
        for key, value in self.cost_mean.as_dict().items():
            out[f"{key}_mean"] = value
            out[f"{key}_stderr"] = self.cost_stderr.as_dict()[key] if key != "J" else self.J_stderr
        out["mse_mean"] = self.mse_mean
        out["mse_stderr"] = self.mse_stderr
        return out


def summarize(res: VariantTrials) -> MonteCarloSummary:
    ok = res.ok
    names = ("initial_term", "control_energy", "quadratic_variation_term", "martingale_term")
    stats = {n: _mean_se(getattr(res.cost, n)[ok]) for n in names}
    J = _mean_se(res.J[ok])
    mse = _mean_se(res.half_sq_error[ok])
    return MonteCarloSummary(
        res.name, len(res.trials), int(res.failed.sum()), int(res.clamp_count.sum()),
        CostBreakdown(*(stats[n][0] for n in names)), CostBreakdown(*(stats[n][1] for n in names)),
        J[0], J[1], mse[0], mse[1])


def cost_monte_carlo(variant: ControlVariant, scenario: FiniteStateScenario, f, n_trials: int, seed: int,
                     batch_size: int = 256) -> MonteCarloSummary:
    """Monte Carlo estimate of ``J(U)`` and of ``1/2 E|S_T - f^T X_T|^2``."""
    return summarize(run_experiment([variant], scenario, f, n_trials, seed, batch_size)[variant.name])


def paired_difference(a: VariantTrials, b: VariantTrials, attr: str = "J") -> tuple[float, float]:
    """Mean and standard error of ``a - b`` over trials valid in both."""
    if not np.array_equal(a.trials, b.trials):
        raise ValueError("paired comparison needs the same trials")
    ok = a.ok & b.ok
    return _mean_se(getattr(a, attr)[ok] - getattr(b, attr)[ok])
