"""Monte-Carlo experiment harness.

Sweeps one variable (measurement length N or SNR) over a grid, runs a number
of independent trials per grid point, and records the recovery error of each
enabled method. Within a trial every method consumes the same measurement
and the same initial guesses, so per-trial differences isolate the choice of
weighting. Per-trial randomness is derived from (seed, grid index, trial)
alone, which makes results independent of worker scheduling; trials are
embarrassingly parallel across processes.

Each trial draws a fresh target signal with i.i.d. uniform [0, 1] entries
normalized to unit norm (a --fixed-signal switch reuses one draw everywhere),
places copies at density gamma, and adds noise at the requested SNR.

Outputs are a raw CSV with one row per (method, grid point, trial) and a
summary CSV of per-grid-point medians. All columns except wall_time_s are
deterministic for a fixed config; the summary file is deterministic
byte-for-byte.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .estimate import OptimizerOptions, recover
from .simulate import sigma_for_snr, spec_for_density, synthesize

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "run_experiment",
    "parse_config_text",
    "read_config_file",
    "write_rows_csv",
    "write_summary_csv",
    "summarize",
    "RAW_COLUMNS",
    "SUMMARY_COLUMNS",
]

RAW_COLUMNS = (
    "method",
    "sweep",
    "value",
    "trial",
    "seed",
    "relative_error",
    "objective",
    "gamma_hat",
    "wall_time_s",
    "converged",
    "note",
)

SUMMARY_COLUMNS = ("method", "sweep", "value", "trials", "median_error")

VALID_METHODS = ("ls", "gmm")


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep definition.

    sweep is "N" (fixed snr) or "SNR" (fixed N); grid holds the swept values
    in strictly increasing order. snr may be inf for noiseless runs.
    """

    sweep: str
    grid: tuple[float, ...]
    L: int
    gamma: float
    snr: float | None = None
    N: int | None = None
    trials: int = 50
    n_starts: int = 5
    gamma_init: float = 0.18
    seed: int = 0
    methods: tuple[str, ...] = ("ls", "gmm")
    stride: int = 1
    output: str = "results.csv"
    workers: int = 1
    fixed_signal: bool = False

    def __post_init__(self):
        if self.sweep not in ("N", "SNR"):
            raise ValueError(f"sweep must be 'N' or 'SNR', got {self.sweep!r}")
        grid = tuple(float(v) for v in self.grid)
        if not grid:
            raise ValueError("grid must be non-empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.sweep == "N" and self.snr is None:
            raise ValueError("sweep over N requires a fixed snr")
        if self.sweep == "SNR" and self.N is None:
            raise ValueError("sweep over SNR requires a fixed N")
        methods = tuple(self.methods)
        if not methods or any(m not in VALID_METHODS for m in methods):
            raise ValueError(f"methods must be a subset of {VALID_METHODS}")
        object.__setattr__(self, "methods", methods)

    def point(self, gi: int) -> tuple[int, float]:
        """(N, snr) at grid index gi."""
        if self.sweep == "N":
            return int(self.grid[gi]), float(self.snr)
        return int(self.N), float(self.grid[gi])


@dataclass(frozen=True)
class ResultRow:
    """One recovery outcome (or one diagnostic for a skipped grid point)."""

    method: str
    sweep: str
    value: float
    trial: int
    seed: int
    relative_error: float
    objective: float
    gamma_hat: float
    wall_time_s: float
    converged: bool
    note: str = ""

    def as_record(self) -> dict:
        return {
            "method": self.method,
            "sweep": self.sweep,
            "value": _format_number(self.value),
            "trial": self.trial,
            "seed": self.seed,
            "relative_error": _format_number(self.relative_error),
            "objective": _format_number(self.objective),
            "gamma_hat": _format_number(self.gamma_hat),
            "wall_time_s": f"{self.wall_time_s:.3f}",
            "converged": int(self.converged),
            "note": self.note,
        }


def _format_number(v: float) -> str:
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return repr(float(v))


def _trial_seeds(config_seed: int, gi: int, trial: int) -> tuple[int, int, int]:
    """(signal, measurement, starts) seeds for one trial, scheduling-independent."""
    keys = (1, 2, 3)  # signal / measurement / starts streams
    return tuple(
        int(np.random.SeedSequence([config_seed, gi, trial, k]).generate_state(1)[0])
        for k in keys
    )


def _draw_signal(config: ExperimentConfig, gi: int, trial: int) -> np.ndarray:
    if config.fixed_signal:
        sig_seed = int(np.random.SeedSequence([config.seed, 0]).generate_state(1)[0])
    else:
        sig_seed = _trial_seeds(config.seed, gi, trial)[0]
    x = np.random.default_rng(sig_seed).random(config.L)
    return x / np.linalg.norm(x)


def _run_trial(args: tuple[ExperimentConfig, int, int]) -> list[ResultRow]:
    config, gi, trial = args
    N, snr = config.point(gi)
    _, meas_seed, start_seed = _trial_seeds(config.seed, gi, trial)
    x = _draw_signal(config, gi, trial)
    sigma2 = sigma_for_snr(x, config.L, snr)
    spec = spec_for_density(N, config.L, config.gamma, sigma2, seed=meas_seed)
    meas = synthesize(x, spec)
    opts = OptimizerOptions(n_starts=config.n_starts, gamma_init=config.gamma_init)
    rows = []
    for method in config.methods:
        t0 = time.perf_counter()
        est = recover(meas, method, opts, stride=config.stride, rng=start_seed, truth=x)
        elapsed = time.perf_counter() - t0
        best = min(est.starts, key=lambda s: (not np.isfinite(s.objective), s.objective, s.index))
        rows.append(
            ResultRow(
                method=method,
                sweep=config.sweep,
                value=config.grid[gi],
                trial=trial,
                seed=meas_seed,
                relative_error=est.relative_error,
                objective=est.objective_value,
                gamma_hat=est.theta_hat.gamma,
                wall_time_s=elapsed,
                converged=best.converged,
            )
        )
    return rows


def run_experiment(config: ExperimentConfig) -> tuple[list[ResultRow], list[dict]]:
    """Run the full sweep and return (raw rows, summary records).

    Rows come back sorted by (grid index, trial, method order). Grid points
    whose density is infeasible under the separation constraint are skipped
    with a diagnostic row per method.
    """
    tasks: list[tuple[ExperimentConfig, int, int]] = []
    skip_rows: list[tuple[int, ResultRow]] = []
    for gi in range(len(config.grid)):
        N, snr = config.point(gi)
        try:
            spec_for_density(N, config.L, config.gamma, 0.0)
        except ValueError as exc:
            for method in config.methods:
                skip_rows.append(
                    (
                        gi,
                        ResultRow(
                            method=method,
                            sweep=config.sweep,
                            value=config.grid[gi],
                            trial=-1,
                            seed=-1,
                            relative_error=float("nan"),
                            objective=float("nan"),
                            gamma_hat=float("nan"),
                            wall_time_s=0.0,
                            converged=False,
                            note=f"skipped: {exc}",
                        ),
                    )
                )
            continue
        tasks.extend((config, gi, t) for t in range(config.trials))

    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            per_task = list(pool.map(_run_trial, tasks, chunksize=1))
    else:
        per_task = [_run_trial(t) for t in tasks]

    keyed = {(t[1], t[2]): rows for t, rows in zip(tasks, per_task)}
    rows: list[ResultRow] = []
    for gi in range(len(config.grid)):
        rows.extend(r for g, r in skip_rows if g == gi)
        for trial in range(config.trials):
            rows.extend(keyed.get((gi, trial), []))
    return rows, summarize(rows)


def summarize(rows: list[ResultRow]) -> list[dict]:
    """Per-(method, grid value) median error over completed trials."""
    summary = []
    seen: dict[tuple[str, float], list[float]] = {}
    order: list[tuple[str, float]] = []
    for r in rows:
        key = (r.method, r.value)
        if key not in seen:
            seen[key] = []
            order.append(key)
        if r.trial >= 0 and np.isfinite(r.relative_error):
            seen[key].append(r.relative_error)
    for method, value in order:
        errs = seen[(method, value)]
        summary.append(
            {
                "method": method,
                "sweep": rows[0].sweep if rows else "",
                "value": _format_number(value),
                "trials": len(errs),
                "median_error": _format_number(float(np.median(errs))) if errs else "nan",
            }
        )
    return summary


def write_rows_csv(path, rows: list[ResultRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RAW_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow(r.as_record())


def write_summary_csv(path, summary: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        for rec in summary:
            writer.writerow(rec)


_CONVERTERS = {
    "sweep": str,
    "grid": lambda s: tuple(float(v) for v in s.replace(",", " ").split()),
    "L": int,
    "gamma": float,
    "snr": float,
    "N": lambda s: int(float(s)),
    "trials": int,
    "n_starts": int,
    "gamma_init": float,
    "seed": int,
    "methods": lambda s: tuple(v for v in s.replace(",", " ").split()),
    "stride": int,
    "output": str,
    "workers": int,
    "fixed_signal": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
}


def parse_config_text(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Parse the flat key = value experiment format.

    Blank lines and # comments are ignored; later duplicates win. overrides
    (e.g. from command-line --set flags) are applied on top.
    """
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        raw[key] = value
    if overrides:
        raw.update(overrides)
    kwargs = {}
    for key, value in raw.items():
        if key not in _CONVERTERS:
            raise ValueError(f"unknown config key {key!r}")
        kwargs[key] = _CONVERTERS[key](value)
    return ExperimentConfig(**kwargs)


def read_config_file(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), overrides)
