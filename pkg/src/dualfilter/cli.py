"""Command-line front end: ``dualfilter <subcommand> --config FILE``.

Exit codes: 0 on success, 1 for configuration errors, 2 when every trial
failed numerically.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, Scenario, load_scenario
from .ctmc import simulate_ctmc
from .export import (
    provenance,
    write_covariance,
    write_filter_path,
    write_gains,
    write_jump_path,
    write_observation,
    write_rows,
)
from .grid import uniform_grid
from .kalman import (
    dual_lq_solve,
    dual_riccati,
    duality_check,
    filter_covariance,
    kalman_bucy,
    linear_estimator_mse,
    simulate_linear,
)
from .montecarlo import run_experiment, simulate_trials, summarize, trial_streams
from .observation import simulate_observation
from .wonham import bayes_oracle, run_wonham

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


class AllTrialsFailed(RuntimeError):
    pass


def _need(sc: Scenario, kind: str, command: str):
    if sc.kind != kind:
        raise ConfigError(f"'{command}' needs model = \"{kind}\", got {sc.kind!r}")


def cmd_simulate(sc: Scenario, out: Path) -> list[Path]:
    prov = provenance(sc.seed, sc.grid, trials=sc.trials)
    if sc.kind == "linear":
        X, Z, W = simulate_linear(sc.linear, sc.grid, np.arange(sc.trials), sc.seed)
        return [write_observation(out / "observation.csv", sc.grid, Z, W, prov, X=X)]
    fs = sc.finite
    paths, Z, W = [], [], []
    for trial in range(sc.trials):
        sig, noise = trial_streams(sc.seed, trial)
        path = simulate_ctmc(fs.A, fs.pi0, sc.grid.horizon, sig)
        obs = simulate_observation(path, fs.model, sc.grid, noise)
        paths.append(path)
        Z.append(obs.Z)
        W.append(obs.W)
    return [write_jump_path(out / "signal.csv", paths, prov),
            write_observation(out / "observation.csv", sc.grid, np.stack(Z), np.stack(W), prov)]


def cmd_filter(sc: Scenario, out: Path) -> list[Path]:
    prov = provenance(sc.seed, sc.grid, trials=sc.trials)
    if sc.kind == "linear":
        _, Z, _ = simulate_linear(sc.linear, sc.grid, np.arange(sc.trials), sc.seed)
        mean, cov = kalman_bucy(sc.linear, Z, sc.grid)
        return [write_filter_path(out / "filter.csv", sc.grid, mean, prov, label="xhat"),
                write_covariance(out / "covariance.csv", sc.grid, {"Sigma": cov.values}, prov)]
    fs = sc.finite
    batch = simulate_trials(fs, range(sc.trials), sc.seed)
    filt, gains = run_wonham(batch.Z, sc.grid, fs.pi0, fs.A, fs.model, on_failure="flag")
    oracle = bayes_oracle(batch.Z, sc.grid, fs.pi0, fs.A, fs.model)
    gap = np.abs(filt.values - oracle.values).sum(axis=-1)
    rows = [{"trial": i, "oracle_gap_sup": gap[i].max(), "clamp_count": filt.clamp_count[i],
             "failed": filt.failed[i]} for i in range(sc.trials)]
    files = [write_filter_path(out / "filter.csv", sc.grid, filt.values, prov, oracle=oracle.values),
             write_gains(out / "gains.csv", sc.grid, gains.values, prov),
             write_rows(out / "filter_summary.csv", rows, prov)]
    if np.all(filt.failed):
        raise AllTrialsFailed("the filter failed in every trial")
    return files


def _check_failures(results: dict):
    for name, res in results.items():
        if res.failed.all():
            raise AllTrialsFailed(f"variant {name!r} failed in every trial")


def _experiment_rows(results: dict, extra: dict | None = None) -> list[dict]:
    rows = []
    for res in results.values():
        ok = res.ok
        row = dict(extra or {})
        row.update(summarize(res).row())
        oracle_mse = 0.5 * (res.extras["f_pi_oracle"][ok] - res.fX_T[ok]) ** 2
        row["oracle_mse_mean"] = float(oracle_mse.mean()) if ok.any() else float("nan")
        row["wonham_estimator_gap_max"] = (float(np.abs(res.S_T[ok] - res.extras["f_pi_wonham"][ok]).max())
                                           if ok.any() else float("nan"))
        row["oracle_gap_mean"] = float(res.extras["oracle_gap"][ok].mean()) if ok.any() else float("nan")
        rows.append(row)
    return rows


def _trial_rows(results: dict) -> list[dict]:
    rows = []
    for name, res in results.items():
        for i, trial in enumerate(res.trials):
            row = {"variant": name, "trial": int(trial)}
            row.update({k: v[i] for k, v in res.cost.as_dict().items()})
            row.update({"half_sq_error": res.half_sq_error[i], "S_T": res.S_T[i], "fX_T": res.fX_T[i],
                        "failed": res.failed[i], "clamp_count": res.clamp_count[i]})
            rows.append(row)
    return rows


def cmd_duality(sc: Scenario, out: Path) -> list[Path]:
    _need(sc, "finite", "duality")
    prov = provenance(sc.seed, sc.grid, trials=sc.trials)
    results = run_experiment(sc.controls, sc.finite, sc.f, sc.trials, sc.seed, sc.batch_size, with_oracle=True)
    rows = _experiment_rows(results)
    files = [write_rows(out / "trials.csv", _trial_rows(results), prov),
             write_rows(out / "report.csv", rows, prov)]
    for row in rows:
        print(f"{row['variant']:>16}  J={row['J_mean']:.6f} +- {row['J_stderr']:.6f}  "
              f"MSE/2={row['mse_mean']:.6f} +- {row['mse_stderr']:.6f}  failed={row['n_failed']}")
    _check_failures(results)
    return files


def cmd_sweep(sc: Scenario, out: Path) -> list[Path]:
    _need(sc, "finite", "sweep")
    if not sc.sweep_dt and not sc.sweep_trials:
        raise ConfigError("'sweep' needs sweep_dt or sweep_trials")
    rows = []
    if sc.sweep_dt:
        finest = min(sc.sweep_dt)
        prev_gap = None
        for dt in sc.sweep_dt:
            sub = dt / finest
            if abs(sub - round(sub)) > 1e-9:
                raise ConfigError(f"sweep_dt value {dt} is not a multiple of the finest step {finest}")
            grid = uniform_grid(sc.grid.horizon, dt)
            results = run_experiment(sc.controls, sc.finite.with_grid(grid), sc.f, sc.trials, sc.seed,
                                     sc.batch_size, with_oracle=True, substeps=int(round(sub)))
            _check_failures(results)
            block = _experiment_rows(results, {"sweep": "dt", "dt": dt, "trials": sc.trials})
            gap = block[0]["oracle_gap_mean"]
            for row in block:
                row["oracle_gap_ratio"] = prev_gap / gap if prev_gap is not None and gap > 0 else float("nan")
            prev_gap = gap
            rows += block
    for n in sc.sweep_trials:
        results = run_experiment(sc.controls, sc.finite, sc.f, n, sc.seed, sc.batch_size, with_oracle=True)
        _check_failures(results)
        block = _experiment_rows(results, {"sweep": "trials", "dt": sc.grid.dt, "trials": n})
        for row in block:
            row["oracle_gap_ratio"] = float("nan")
        rows += block
    prov = provenance(sc.seed, sc.grid, trials=sc.trials)
    return [write_rows(out / "sweep.csv", rows, prov)]


def cmd_kalman(sc: Scenario, out: Path) -> list[Path]:
    _need(sc, "linear", "kalman")
    model, grid = sc.linear, sc.grid
    prov = provenance(sc.seed, grid, trials=sc.trials)
    report = duality_check(model, grid)
    Sigma = filter_covariance(model, grid).values
    P = dual_riccati(model, grid).values
    lq = dual_lq_solve(model, sc.f, grid)
    mse = linear_estimator_mse(model, sc.f, grid, sc.trials, sc.seed, batch_size=sc.batch_size)
    target = float(sc.f @ Sigma[-1] @ sc.f)
    rows = [
        {"metric": "duality_max_gap", "value": report.max_gap},
        {"metric": "duality_tol", "value": report.tol},
        {"metric": "duality_passed", "value": report.passed},
        {"metric": "lq_cost", "value": lq.cost},
        {"metric": "half_f_Sigma_T_f", "value": 0.5 * target},
        {"metric": "lq_cost_gap", "value": abs(lq.cost - 0.5 * target)},
        {"metric": "mse", "value": mse.mse},
        {"metric": "mse_stderr", "value": mse.stderr},
        {"metric": "two_J", "value": 2 * mse.cost},
        {"metric": "f_Sigma_T_f", "value": target},
    ]
    d = model.dim_state
    dual_rows = [{"time": t, **{f"y_{i + 1}": lq.y[k, i] for i in range(d)},
                  **{f"u_{j + 1}": lq.u[k, j] for j in range(model.dim_obs)}} for k, t in enumerate(grid.times)]
    print(f"duality gap {report.max_gap:.3e} (tol {report.tol:.3e}); J(u*)={lq.cost:.8f}, "
          f"f'Sigma_T f/2={0.5 * target:.8f}; MSE={mse.mse:.6f} +- {mse.stderr:.6f}")
    return [write_covariance(out / "covariance.csv", grid, {"Sigma": Sigma, "P_reversed": P[::-1]}, prov,
                             {"gap": report.gap}),
            write_rows(out / "dual.csv", dual_rows, prov),
            write_rows(out / "kalman_report.csv", rows, prov)]


COMMANDS = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "duality": cmd_duality,
    "kalman": cmd_kalman,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualfilter", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__name__.removeprefix("cmd_"))
        p.add_argument("--config", required=True, type=Path, help="scenario file (key = value)")
        p.add_argument("--seed", type=int, default=None, help="master seed, overrides the config")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--trials", type=int, default=None, help="number of trials, overrides the config")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = load_scenario(args.config, seed=args.seed, trials=args.trials)
        files = COMMANDS[args.command](sc, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # invalid parameters that only surface once the run starts
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AllTrialsFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    for path in files:
        print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
