"""Scenario files: one ``key = value`` pair per line.

Values are JSON (numbers, lists, objects, quoted strings); a bare word that
is not valid JSON is read as a string. ``#`` starts a comment unless it is
inside a quoted string. Every error names the offending line.

Recognised keys::

    model        "finite" (default) or "linear"
    A, H, R      rate matrix or drift, observation map, noise covariance
    pi0          initial law (finite)
    Q, Sigma0, x0  signal covariance, prior covariance and mean (linear)
    f            terminal weight vector
    T, dt        horizon and step; dt must divide T within 1e-9
    trials, seed, batch_size
    controls     list of control variants (finite), see below
    sweep_dt     list of steps for the convergence sweep
    sweep_trials list of trial counts for the sweep

A control is ``"zero"``, ``"optimal"`` or an object with ``kind`` set to
``"zero"``, ``"deterministic"`` (``k``, ``v``), ``"optimal"`` or
``"optimal+V"`` (``v`` and/or ``v_obs``), and an optional ``name``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ctmc import RateMatrix, check_simplex
from .grid import TimeGrid, uniform_grid
from .kalman import LinearModel
from .montecarlo import ControlVariant, FiniteStateScenario
from .observation import ObservationModel

__all__ = ["ConfigError", "Scenario", "parse_config", "load_scenario"]

KNOWN_KEYS = {
    "model", "A", "H", "R", "pi0", "Q", "Sigma0", "x0", "f", "T", "dt", "trials", "seed",
    "batch_size", "controls", "sweep_dt", "sweep_trials",
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "config"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


def _strip_comment(text: str) -> str:
    quoted = False
    for i, ch in enumerate(text):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return text[:i]
    return text


def parse_config(text: str, source: str = "config") -> tuple[dict, dict]:
    """Parse ``text`` into ``(values, line_numbers)``."""
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError("expected 'key = value'", lineno, source)
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno, source)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", lineno, source)
        if not value:
            raise ConfigError(f"missing value for {key!r}", lineno, source)
        try:
            values[key] = json.loads(value)
        except json.JSONDecodeError as exc:
            if value[0] in "[{\"" or any(c in value for c in ",[]{}"):
                raise ConfigError(f"malformed value for {key!r}: {exc.msg}", lineno, source) from None
            values[key] = value
        lines[key] = lineno
    return values, lines


@dataclass(frozen=True, eq=False)
class Scenario:
    """Validated experiment description."""

    kind: str
    grid: TimeGrid
    f: np.ndarray
    trials: int
    seed: int
    batch_size: int = 256
    finite: FiniteStateScenario | None = None
    linear: LinearModel | None = None
    controls: list = field(default_factory=list)
    sweep_dt: list = field(default_factory=list)
    sweep_trials: list = field(default_factory=list)

    @property
    def d(self) -> int:
        return len(self.f)

    @property
    def m(self) -> int:
        return self.finite.m if self.finite is not None else self.linear.dim_obs


def _control(entry, index: int, d: int, m: int) -> ControlVariant:
    if isinstance(entry, str):
        entry = {"kind": entry}
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ValueError(f"control {index} must be a string or an object with 'kind'")
    kind = entry["kind"]
    unknown = set(entry) - {"kind", "name", "k", "v", "v_obs"}
    if unknown:
        raise ValueError(f"control {index}: unknown fields {sorted(unknown)}")
    name = entry.get("name", kind)
    v = None if entry.get("v") is None else np.broadcast_to(np.asarray(entry["v"], dtype=float), (m,))
    if kind == "zero":
        return ControlVariant(name, "zero", v=v)
    if kind == "deterministic":
        k = np.asarray(entry.get("k", np.zeros((d, m))), dtype=float).reshape(d, m)
        return ControlVariant(name, "fixed", k=k, v=v)
    if kind == "optimal":
        return ControlVariant(name, "optimal", v=v)
    if kind == "optimal+V":
        v_obs = entry.get("v_obs")
        if v is None and v_obs is None:
            raise ValueError(f"control {index}: optimal+V needs 'v' or 'v_obs'")
        if v_obs is not None:
            v_obs = np.asarray(v_obs, dtype=float).reshape(m, m)
        return ControlVariant(name, "optimal", v=v, v_obs=v_obs)
    raise ValueError(f"control {index}: unknown kind {kind!r}")


def _build(values: dict, lines: dict, source: str, overrides: dict) -> Scenario:
    def require(key):
        if key not in values:
            raise ConfigError(f"missing required key {key!r}", None, source)
        return values[key]

    def build(key, fn):
        try:
            return fn()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{key}: {exc}", lines.get(key), source) from None

    kind = values.get("model", "finite")
    if kind not in ("finite", "linear"):
        raise ConfigError(f"model must be 'finite' or 'linear', got {kind!r}", lines.get("model"), source)
    T = build("T", lambda: float(require("T")))
    grid = build("dt", lambda: uniform_grid(T, float(require("dt"))))
    trials = overrides.get("trials")
    trials = int(trials) if trials is not None else build("trials", lambda: int(values.get("trials", 1000)))
    seed = overrides.get("seed")
    seed = int(seed) if seed is not None else build("seed", lambda: int(values.get("seed", 0)))
    if trials < 1:
        raise ConfigError("trials must be positive", lines.get("trials"), source)
    if seed < 0:
        raise ConfigError("seed must be non-negative", lines.get("seed"), source)
    batch_size = build("batch_size", lambda: int(values.get("batch_size", 256)))

    finite = linear = None
    controls = []
    if kind == "finite":
        A = build("A", lambda: RateMatrix(np.array(require("A"), dtype=float)))
        model = build("H", lambda: ObservationModel(np.array(require("H"), dtype=float),
                                                    np.array(require("R"), dtype=float)))
        pi0 = build("pi0", lambda: check_simplex(np.array(require("pi0"), dtype=float)))
        finite = build("pi0", lambda: FiniteStateScenario(A, model, pi0, grid))
        d, m = finite.d, finite.m
        specs = values.get("controls", ["zero", "optimal"])
        if not isinstance(specs, list) or not specs:
            raise ConfigError("controls must be a non-empty list", lines.get("controls"), source)
        controls = [build("controls", lambda i=i, s=s: _control(s, i, d, m)) for i, s in enumerate(specs)]
        names = [c.name for c in controls]
        if len(set(names)) != len(names):
            raise ConfigError(f"control names must be unique: {names}", lines.get("controls"), source)
    else:
        linear = build("A", lambda: LinearModel(
            np.array(require("A"), dtype=float), np.array(require("H"), dtype=float),
            np.array(require("Q"), dtype=float), np.array(require("R"), dtype=float),
            np.array(require("x0"), dtype=float), np.array(require("Sigma0"), dtype=float)))
        d = linear.dim_state

    f = build("f", lambda: np.atleast_1d(np.array(require("f"), dtype=float)))
    if f.shape != (d,):
        raise ConfigError(f"f must have length {d}", lines.get("f"), source)

    sweep_dt = build("sweep_dt", lambda: [float(x) for x in values.get("sweep_dt", [])])
    for dt in sweep_dt:
        build("sweep_dt", lambda dt=dt: uniform_grid(T, dt))
    sweep_trials = build("sweep_trials", lambda: [int(x) for x in values.get("sweep_trials", [])])
    if any(n < 2 for n in sweep_trials):
        raise ConfigError("sweep_trials entries must be at least 2", lines.get("sweep_trials"), source)
    return Scenario(kind, grid, f, trials, seed, batch_size, finite, linear, controls, sweep_dt, sweep_trials)


def load_scenario(path, seed: int | None = None, trials: int | None = None) -> Scenario:
    """Read and validate a scenario file; ``seed``/``trials`` override the file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    values, lines = parse_config(text, str(path))
    return _build(values, lines, str(path), {"seed": seed, "trials": trials})
