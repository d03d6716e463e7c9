import csv
import json
import os

import numpy as np
import pytest

from mtd.cli import main, read_moments_csv
from mtd.experiment import (
    RAW_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentConfig,
    parse_config_text,
    run_experiment,
    summarize,
    write_rows_csv,
    write_summary_csv,
)
from mtd.moments import read_matrix_file
from mtd.simulate import read_measurement

TINY_CONFIG = """
# fast smoke sweep
sweep = N
grid = 2000, 4000
L = 4
gamma = 0.2
snr = 5
trials = 2
n_starts = 2
seed = 11
methods = ls
stride = 2
output = rows.csv
"""


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames), list(reader)


def strip_wall_time(path):
    header, records = read_csv(path)
    keep = [c for c in header if c != "wall_time_s"]
    return [tuple(r[c] for c in keep) for r in records]


class TestConfig:
    def test_parse_roundtrip(self):
        config = parse_config_text(TINY_CONFIG)
        assert config.sweep == "N"
        assert config.grid == (2000.0, 4000.0)
        assert config.methods == ("ls",)
        assert config.stride == 2

    def test_overrides_win(self):
        config = parse_config_text(TINY_CONFIG, {"trials": "5", "snr": "inf"})
        assert config.trials == 5
        assert np.isinf(config.snr)

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            parse_config_text("bogus = 1")

    def test_grid_must_increase(self):
        with pytest.raises(ValueError):
            ExperimentConfig(sweep="N", grid=(2.0, 2.0), L=4, gamma=0.2, snr=1.0)

    def test_sweep_needs_fixed_counterpart(self):
        with pytest.raises(ValueError):
            ExperimentConfig(sweep="N", grid=(100.0,), L=4, gamma=0.2)
        with pytest.raises(ValueError):
            ExperimentConfig(sweep="SNR", grid=(1.0,), L=4, gamma=0.2)

    def test_methods_validated(self):
        with pytest.raises(ValueError):
            ExperimentConfig(
                sweep="N", grid=(100.0,), L=4, gamma=0.2, snr=1.0, methods=("nope",)
            )


class TestRunExperiment:
    def config(self, **kw):
        base = dict(
            sweep="N",
            grid=(2000.0, 4000.0),
            L=4,
            gamma=0.2,
            snr=5.0,
            trials=2,
            n_starts=2,
            seed=11,
            methods=("ls",),
            stride=2,
        )
        base.update(kw)
        return ExperimentConfig(**base)

    def test_rows_cover_grid_and_trials(self):
        rows, summary = run_experiment(self.config())
        assert len(rows) == 2 * 2
        assert [(r.value, r.trial) for r in rows] == [
            (2000.0, 0),
            (2000.0, 1),
            (4000.0, 0),
            (4000.0, 1),
        ]
        assert all(np.isfinite(r.relative_error) for r in rows)
        assert len(summary) == 2
        assert all(rec["trials"] == 2 for rec in summary)

    def test_deterministic_across_runs_and_workers(self):
        def fingerprint(rows):
            return [
                (r.method, r.value, r.trial, r.seed, r.relative_error, r.objective, r.gamma_hat)
                for r in rows
            ]

        rows_a, summary_a = run_experiment(self.config())
        rows_b, summary_b = run_experiment(self.config())
        rows_c, summary_c = run_experiment(self.config(workers=2))
        assert fingerprint(rows_a) == fingerprint(rows_b) == fingerprint(rows_c)
        assert summary_a == summary_b == summary_c

    def test_methods_share_measurement_and_starts(self):
        rows, _ = run_experiment(self.config(methods=("ls", "gmm")))
        by_trial = {}
        for r in rows:
            by_trial.setdefault((r.value, r.trial), {})[r.method] = r
        for pair in by_trial.values():
            assert pair["ls"].seed == pair["gmm"].seed

    def test_infeasible_grid_point_gets_diagnostic_row(self):
        # at gamma = 0.55 nine copies of length 4 cannot be separated in N=64
        config = self.config(grid=(64.0, 128.0), gamma=0.55, trials=1, snr=np.inf)
        rows, summary = run_experiment(config)
        skipped = [r for r in rows if r.trial < 0]
        assert len(skipped) == 1
        assert skipped[0].value == 64.0
        assert "skipped" in skipped[0].note
        ran = [r for r in rows if r.trial >= 0]
        assert {r.value for r in ran} == {128.0}
        assert summarize(rows)[0]["median_error"] == "nan"

    def test_noiseless_end_to_end_accuracy(self):
        # noiseless single-trial run recovers the signal to well under 1e-3
        config = ExperimentConfig(
            sweep="N",
            grid=(100_000.0,),
            L=8,
            gamma=0.2,
            snr=np.inf,
            trials=1,
            n_starts=5,
            seed=3,
            methods=("ls", "gmm"),
        )
        rows, _ = run_experiment(config)
        assert len(rows) == 2
        for r in rows:
            assert r.relative_error <= 1e-3, r.method

    def test_csv_files_and_schema(self, tmp_path):
        rows, summary = run_experiment(self.config())
        raw = tmp_path / "rows.csv"
        write_rows_csv(raw, rows)
        header, records = read_csv(raw)
        assert tuple(header) == RAW_COLUMNS
        assert len(records) == len(rows)
        med = tmp_path / "summary.csv"
        write_summary_csv(med, summary)
        header2, recs2 = read_csv(med)
        assert tuple(header2) == SUMMARY_COLUMNS
        # medians recomputable from the raw rows
        for rec in recs2:
            errs = [
                float(r["relative_error"])
                for r in records
                if r["method"] == rec["method"] and r["value"] == rec["value"]
            ]
            assert float(rec["median_error"]) == pytest.approx(float(np.median(errs)))


class TestCli:
    def test_simulate_example_measurement(self, tmp_path, capsys):
        out = tmp_path / "m.mtd"
        rc = main(
            [
                "simulate",
                "--N", "120", "--L", "8", "--p", "6",
                "--snr", "0.5", "--seed", "1",
                "--out", str(out),
            ]
        )
        assert rc == 0
        assert "gamma=0.4" in capsys.readouterr().out
        meas = read_measurement(out)
        assert meas.spec.gamma == pytest.approx(0.4)
        assert meas.spec.p == 6

    def test_simulate_requires_one_density_flag(self, capsys):
        rc = main(["simulate", "--N", "100", "--L", "4", "--snr", "1"])
        assert rc != 0
        assert "error" in capsys.readouterr().err

    def test_pipeline_moments_covariance_recover(self, tmp_path, capsys):
        meas_path = tmp_path / "m.mtd"
        truth_path = tmp_path / "x.csv"
        assert main(
            [
                "simulate",
                "--N", "40000", "--L", "5", "--gamma", "0.2",
                "--snr", "10", "--seed", "3",
                "--out", str(meas_path), "--truth-out", str(truth_path),
            ]
        ) == 0

        mom_path = tmp_path / "mom.csv"
        assert main(["moments", "--in", str(meas_path), "--out", str(mom_path)]) == 0
        emp = read_moments_csv(mom_path)
        assert emp.vector.layout.L == 5

        s_path, w_path = tmp_path / "S.mat", tmp_path / "W.mat"
        assert main(
            [
                "covariance", "--in", str(meas_path),
                "--stride", "2", "--out-s", str(s_path), "--out-w", str(w_path),
            ]
        ) == 0
        S, L_file, stride = read_matrix_file(s_path)
        assert (L_file, stride) == (5, 2)
        assert S.shape == (21, 21)

        est_path = tmp_path / "est.json"
        capsys.readouterr()
        rc = main(
            [
                "recover", "--in", str(meas_path), "--method", "gmm",
                "--weights", str(w_path), "--truth", str(truth_path),
                "--seed", "5", "--out", str(est_path),
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "relative_error=" in out
        record = json.loads(est_path.read_text())
        assert record["method"] == "gmm"
        assert record["relative_error"] < 0.5

    def test_recover_missing_file_fails(self, capsys):
        rc = main(["recover", "--in", "/nonexistent.mtd"])
        assert rc != 0

    def test_unknown_flag_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["simulate", "--bogus", "1"])
        assert err.value.code == 2

    def test_experiment_and_plot(self, tmp_path, capsys, monkeypatch):
        config_path = tmp_path / "cfg.txt"
        config_path.write_text(TINY_CONFIG)
        monkeypatch.setenv("MTD_OUTDIR", str(tmp_path))
        assert main(["experiment", "--config", str(config_path)]) == 0
        raw = tmp_path / "rows.csv"
        summary = tmp_path / "rows.summary.csv"
        assert raw.exists() and summary.exists()

        first_raw = strip_wall_time(raw)
        first_summary = summary.read_bytes()
        assert main(["experiment", "--config", str(config_path)]) == 0
        assert strip_wall_time(raw) == first_raw
        assert summary.read_bytes() == first_summary

        svg = tmp_path / "plot.svg"
        assert main(["plot", "--in", str(raw), "--out", str(svg)]) == 0
        assert svg.read_text().lstrip().startswith("<?xml")
        svg2 = tmp_path / "plot2.svg"
        assert main(["plot", "--in", str(summary), "--out", str(svg2)]) == 0
        assert svg2.exists()

    def test_experiment_set_overrides(self, tmp_path, capsys):
        config_path = tmp_path / "cfg.txt"
        config_path.write_text(TINY_CONFIG)
        out = tmp_path / "o.csv"
        rc = main(
            [
                "experiment", "--config", str(config_path),
                "--out", str(out), "--set", "trials=1", "--set", "grid=2000",
            ]
        )
        assert rc == 0
        _, records = read_csv(out)
        assert len(records) == 1
