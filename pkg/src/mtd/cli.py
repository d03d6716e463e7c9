"""Command-line front end.

Subcommands cover the full pipeline: simulate a measurement file, export its
empirical moments, estimate the window covariance and weighting matrix, run
a single recovery, drive a Monte-Carlo sweep from a config file, and render
result CSVs to SVG charts.

The MTD_OUTDIR environment variable sets the directory used for output paths
that are not given explicitly (and for relative experiment outputs); it
defaults to the working directory.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .estimate import OptimizerOptions, recover, write_estimate_json
from .experiment import (
    RAW_COLUMNS,
    SUMMARY_COLUMNS,
    read_config_file,
    run_experiment,
    write_rows_csv,
    write_summary_csv,
)
from .model import MomentLayout, MomentVector
from .moments import (
    EmpiricalMoments,
    WeightMatrix,
    empirical_moments,
    estimate_covariance,
    read_matrix_file,
    weight_matrix,
    write_matrix_file,
)
from .simulate import (
    MeasurementSpec,
    read_measurement,
    sigma_for_snr,
    spec_for_density,
    synthesize,
    write_measurement,
)

__all__ = ["main", "build_parser", "write_moments_csv", "read_moments_csv"]


def _outdir() -> str:
    return os.environ.get("MTD_OUTDIR", ".")


def _default_out(name: str) -> str:
    return os.path.join(_outdir(), name)


def _load_signal(path) -> np.ndarray:
    x = np.loadtxt(path, dtype=float, ndmin=1)
    if x.ndim != 1:
        raise ValueError(f"signal file must hold one column: {path}")
    return x


def write_moments_csv(path, emp: EmpiricalMoments) -> None:
    """Diffable CSV of the moment vector: order, shifts, value."""
    layout = emp.vector.layout
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# N={emp.N}\n# L={layout.L}\n")
        fh.write("order,l1,l2,value\n")
        fh.write(f"1,,,{emp.vector.first!r}\n")
        for l, v in enumerate(emp.vector.second):
            fh.write(f"2,{l},,{float(v)!r}\n")
        for l1, l2, v in zip(layout.pair_l1, layout.pair_l2, emp.vector.third):
            fh.write(f"3,{l1},{l2},{float(v)!r}\n")


def read_moments_csv(path) -> EmpiricalMoments:
    N = L = None
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# N="):
                N = int(line[4:])
            elif line.startswith("# L="):
                L = int(line[4:])
            elif not line or line.startswith("#") or line.startswith("order"):
                continue
            else:
                values.append(float(line.rsplit(",", 1)[1]))
    if N is None or L is None:
        raise ValueError(f"missing N/L metadata in moments file: {path}")
    layout = MomentLayout(L)
    return EmpiricalMoments(vector=MomentVector(layout, np.array(values)), N=N)


def _cmd_simulate(args) -> int:
    if (args.p is None) == (args.gamma is None):
        raise ValueError("give exactly one of --p or --gamma")
    if (args.snr is None) == (args.sigma2 is None):
        raise ValueError("give exactly one of --snr or --sigma2")
    ss = np.random.SeedSequence(args.seed)
    sig_rng, meas_rng = (np.random.default_rng(c) for c in ss.spawn(2))
    if args.signal is not None:
        x = _load_signal(args.signal)
        if x.size != args.L:
            raise ValueError(f"signal length {x.size} does not match --L {args.L}")
    else:
        x = sig_rng.random(args.L)
        x /= np.linalg.norm(x)
    sigma2 = args.sigma2 if args.sigma2 is not None else sigma_for_snr(x, args.L, args.snr)
    if args.p is not None:
        spec = MeasurementSpec(N=args.N, L=args.L, p=args.p, sigma2=sigma2, seed=args.seed)
    else:
        spec = spec_for_density(args.N, args.L, args.gamma, sigma2, seed=args.seed)
    meas = synthesize(x, spec, rng=meas_rng)
    out = args.out or _default_out("measurement.mtd")
    write_measurement(out, meas)
    if args.truth_out:
        np.savetxt(args.truth_out, x)
    print(
        f"wrote {out}: N={spec.N} L={spec.L} p={spec.p} gamma={spec.gamma:.6g} "
        f"sigma2={spec.sigma2:.6g} seed={spec.seed}"
    )
    return 0


def _cmd_moments(args) -> int:
    meas = read_measurement(args.infile)
    emp = empirical_moments(meas.y, meas.spec.L)
    out = args.out or _default_out("moments.csv")
    write_moments_csv(out, emp)
    print(f"wrote {out}: dim={emp.vector.layout.dim} N={emp.N}")
    return 0


def _cmd_covariance(args) -> int:
    meas = read_measurement(args.infile)
    L = meas.spec.L
    est = estimate_covariance(meas.y, L, args.stride)
    out_s = args.out_s or _default_out("S.mat")
    write_matrix_file(out_s, est.S, L, est.stride)
    wm = weight_matrix(est)
    out_w = args.out_w or _default_out("W.mat")
    write_matrix_file(out_w, wm.W, L, est.stride)
    lam = np.linalg.eigvalsh(est.S)
    print(
        f"wrote {out_s}, {out_w}: d={est.dim} windows={est.window_count} "
        f"stride={est.stride} eig(S)=[{lam[0]:.3e}, {lam[-1]:.3e}] "
        f"cond(W)={wm.condition_number:.3e}"
    )
    return 0


def _cmd_recover(args) -> int:
    meas = read_measurement(args.infile)
    opts = OptimizerOptions(n_starts=args.starts, gamma_init=args.gamma_init)
    weight = None
    if args.weights is not None:
        W, L_file, _ = read_matrix_file(args.weights)
        if L_file != meas.spec.L:
            raise ValueError(
                f"weight matrix was built for L={L_file}, measurement has L={meas.spec.L}"
            )
        weight = WeightMatrix(W=W, source="inverse-covariance")
    truth = _load_signal(args.truth) if args.truth else None
    est = recover(
        meas,
        args.method,
        opts,
        stride=args.stride,
        weight=weight,
        rng=args.seed,
        truth=truth,
    )
    print(f"method={est.method} objective={est.objective_value:.6e} gamma_hat={est.theta_hat.gamma:.6g}")
    if est.relative_error is not None:
        print(f"relative_error={est.relative_error:.6e}")
    if args.out:
        write_estimate_json(args.out, est)
        print(f"wrote {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    config = read_config_file(args.config, overrides)
    out = args.out or config.output
    if not os.path.isabs(out):
        out = os.path.join(_outdir(), out)
    rows, summary = run_experiment(config)
    write_rows_csv(out, rows)
    base, ext = os.path.splitext(out)
    summary_path = base + ".summary" + (ext or ".csv")
    write_summary_csv(summary_path, summary)
    print(f"wrote {out} ({len(rows)} rows) and {summary_path}")
    for rec in summary:
        print(
            f"  {rec['method']:>4} {config.sweep}={rec['value']:>12} "
            f"trials={rec['trials']:>3} median_error={rec['median_error']}"
        )
    return 0


def _read_csv_records(path) -> tuple[list[str], list[dict]]:
    import csv as _csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def _cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    header, records = _read_csv_records(args.infile)
    if tuple(header) == SUMMARY_COLUMNS:
        points = [
            (r["method"], float(r["value"]), float(r["median_error"]))
            for r in records
            if r["median_error"] != "nan"
        ]
        sweep = records[0]["sweep"] if records else "N"
    elif tuple(header) == RAW_COLUMNS:
        groups: dict[tuple[str, float], list[float]] = {}
        for r in records:
            if int(r["trial"]) < 0 or r["relative_error"] == "nan":
                continue
            groups.setdefault((r["method"], float(r["value"])), []).append(
                float(r["relative_error"])
            )
        points = [(m, v, float(np.median(errs))) for (m, v), errs in groups.items()]
        sweep = records[0]["sweep"] if records else "N"
    else:
        raise ValueError(f"unrecognized CSV schema in {args.infile}")

    fig, ax = plt.subplots(figsize=(6, 4))
    for method in sorted({m for m, _, _ in points}):
        series = sorted((v, e) for m, v, e in points if m == method)
        xs, ys = zip(*series)
        ax.plot(xs, ys, marker="o", label=method)
    ax.set_xscale("log")
    if sweep == "N":
        ax.set_yscale("log")
    ax.set_xlabel("measurement length N" if sweep == "N" else "SNR")
    ax.set_ylabel("median relative error")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    out = args.out or _default_out("plot.svg")
    fig.savefig(out, format="svg", bbox_inches="tight")
    plt.close(fig)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtd",
        description="Recover a signal from a long measurement containing many "
        "noisy translated copies of it, via autocorrelation matching.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a measurement file")
    p.add_argument("--N", type=int, required=True, help="measurement length")
    p.add_argument("--L", type=int, required=True, help="signal length")
    p.add_argument("--p", type=int, help="number of signal copies")
    p.add_argument("--gamma", type=float, help="target density (sets p = round(gamma*N/L))")
    p.add_argument("--snr", type=float, help="target SNR (inf for noiseless)")
    p.add_argument("--sigma2", type=float, help="noise variance (alternative to --snr)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--signal", help="CSV with the signal to plant (default: random unit-norm)")
    p.add_argument("--out", help="output measurement path")
    p.add_argument("--truth-out", help="also write the planted signal to this CSV")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("moments", help="export empirical moments of a measurement")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_moments)

    p = sub.add_parser("covariance", help="estimate window covariance S and weighting W")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out-s", dest="out_s", help="output path for S")
    p.add_argument("--out-w", dest="out_w", help="output path for W")
    p.set_defaults(func=_cmd_covariance)

    p = sub.add_parser("recover", help="estimate the signal from a measurement file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--method", choices=("ls", "gmm"), default="ls")
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--gamma-init", type=float, default=0.18)
    p.add_argument("--seed", type=int, default=0, help="seed for the random starts")
    p.add_argument("--stride", type=int, default=1, help="covariance stride (gmm)")
    p.add_argument("--weights", help="precomputed weighting matrix file (gmm)")
    p.add_argument("--truth", help="CSV with the true signal; prints the relative error")
    p.add_argument("--out", help="write the estimate record as JSON")
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("experiment", help="run a Monte-Carlo sweep from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="raw CSV output (overrides the config)")
    p.add_argument("--workers", type=int, help="parallel trial processes")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("plot", help="render a results CSV to an SVG chart")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
