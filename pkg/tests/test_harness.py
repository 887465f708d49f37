"""Configuration, persistence, sweep orchestration, and the CLI."""

import dataclasses
import math
import os

import numpy as np
import pytest

from qstab import cli, harness
from qstab.harness import (
    ConfigError,
    PRESETS,
    config_lines,
    export_plotdata,
    load_config,
    load_record,
    parse_config,
    refinement_check,
    run_experiment,
    run_sweep,
)

DESK = {"T": "1", "stride": "100"}


def desk_cfg(tmp_path, name="run.csv", **extra):
    overrides = dict(DESK)
    overrides["output"] = str(tmp_path / name)
    overrides.update(extra)
    return load_config("fig1", overrides)


class TestParsing:
    def test_comments_and_blank_lines(self):
        cfg = parse_config("# full line comment\n\nM = 3  # inline\nN = 40\n")
        assert cfg.n_modes == 3 and cfg.n_sine == 40

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_config("frobnicate = 1")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError):
            parse_config("M = 3\nM = 4")

    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_config("just some words")

    def test_complex_state_syntax(self):
        cfg = parse_config("initial_state = 1, 1j, 0.5+0.5i, -2")
        assert cfg.initial_state == (1 + 0j, 1j, 0.5 + 0.5j, -2 + 0j)

    def test_epsilon_list(self):
        cfg = parse_config("epsilon = 1e-3, 2e-4, 1e-4\ndt_per_epsilon = 0.1")
        assert cfg.epsilon == (1e-3, 2e-4, 1e-4)
        assert cfg.dt_per_epsilon == 0.1

    def test_overrides_win(self):
        cfg = parse_config("M = 3", overrides={"M": "4"})
        assert cfg.n_modes == 4

    def test_bad_values(self):
        for text in ("M = x", "dt = -1", "k = 0", "g_kind = banana", "method = rk4",
                     "M = 60", "stride = 0", "initial_state = 0, 0",
                     "potential = nosuch", "gamma = -2", "T = 0"):
            with pytest.raises(ConfigError):
                parse_config(text)

    def test_initial_state_longer_than_m(self):
        with pytest.raises(ConfigError):
            parse_config("M = 2\ninitial_state = 1, 1, 1")

    def test_presets_all_parse(self):
        for name in PRESETS:
            cfg = load_config(name)
            assert cfg.n_sine == 50
        fig1 = load_config("fig1")
        assert fig1.n_modes == 5 and fig1.t_final == 1000.0 and fig1.s_order == 1.8

    def test_unknown_source(self):
        with pytest.raises(ConfigError):
            load_config("not-a-preset-or-file")

    def test_config_lines_round_trip(self):
        cfg = load_config("fig3-4")
        again = parse_config("\n".join(config_lines(cfg)))
        assert again == cfg


class TestRunExperiment:
    def test_writes_csv_and_meta(self, tmp_path, validation_setup):
        cfg = desk_cfg(tmp_path)
        record = run_experiment(cfg, setup=validation_setup)
        assert record.csv_path.is_file() and record.meta_path.is_file()
        nsteps = math.floor(cfg.t_final / cfg.dt + 1e-9)
        assert record.data.shape[0] == nsteps // cfg.stride + 1
        assert record.header["schema_version"] == "1"
        assert "gamma" in record.header and "lambda" in record.header
        assert not record.aborted
        assert np.all(np.diff(record.column("t")) > 0)
        leftovers = [p for p in os.listdir(tmp_path) if p.endswith(".tmp")]
        assert leftovers == []

    def test_deterministic_bytes(self, tmp_path, validation_setup):
        cfg_a = desk_cfg(tmp_path, name="a.csv")
        cfg_b = desk_cfg(tmp_path, name="b.csv")
        ra = run_experiment(cfg_a, setup=validation_setup)
        rb = run_experiment(cfg_b, setup=validation_setup)
        assert ra.csv_path.read_bytes() == rb.csv_path.read_bytes()

    def test_sweep_config_rejected(self, tmp_path):
        cfg = desk_cfg(tmp_path, epsilon="1e-3, 1e-4")
        with pytest.raises(ConfigError):
            run_experiment(cfg)

    def test_dt_above_epsilon_rejected(self, tmp_path):
        cfg = desk_cfg(tmp_path, dt="1e-2")
        with pytest.raises(ConfigError):
            run_experiment(cfg)

    def test_outdir_env_var(self, tmp_path, monkeypatch, validation_setup):
        monkeypatch.setenv(harness.OUTDIR_ENV, str(tmp_path / "redirected"))
        cfg = load_config("fig1", dict(DESK, output="env.csv"))
        record = run_experiment(cfg, setup=validation_setup)
        assert record.csv_path == tmp_path / "redirected" / "env.csv"
        assert record.csv_path.is_file()

    def test_load_record_round_trip(self, tmp_path, validation_setup):
        record = run_experiment(desk_cfg(tmp_path), setup=validation_setup)
        loaded = load_record(record.csv_path)
        np.testing.assert_allclose(loaded.data, record.data, rtol=0, atol=0)
        assert loaded.header["gamma"] == record.header["gamma"]

    def test_aborted_run_keeps_partial_output(self, tmp_path):
        cfg = desk_cfg(tmp_path, k="12.0", T="5")
        record = run_experiment(cfg)
        assert record.aborted and record.abort_reason == "ki2"
        assert record.csv_path.is_file()
        assert record.data.shape[0] >= 1
        assert record.header["aborted"] == "true"


class TestSweep:
    def test_duplicate_epsilons_give_unit_ratio(self, tmp_path):
        cfg = desk_cfg(tmp_path, name="dup.csv", epsilon="1e-3, 1e-3")
        result = run_sweep(cfg)
        a, b = result.entries
        assert a.ok and b.ok
        assert a.sup_gap == b.sup_gap
        assert a.final_gap == b.final_gap
        assert result.summary_path.is_file()

    def test_distinct_epsilons_ordering(self, tmp_path):
        cfg = desk_cfg(tmp_path, name="sw.csv", T="2", epsilon="1e-3, 5e-4",
                       dt_per_epsilon="0.5")
        result = run_sweep(cfg)
        assert all(e.ok for e in result.entries)
        assert result.sup_ratio(1e-3, 5e-4) > 1.0
        text = result.summary_path.read_text()
        assert "epsilon,status,sup_gap,final_gap" in text

    def test_failure_isolation(self, tmp_path):
        """A bad per-run configuration marks that entry, others proceed."""
        cfg = desk_cfg(tmp_path, name="iso.csv", epsilon="1e-3, 1e-6")  # dt 1e-3 > 1e-6
        result = run_sweep(cfg)
        good = result.entry(1e-3)
        bad = result.entry(1e-6)
        assert good.ok
        assert not bad.ok and bad.error != ""

    def test_needs_two_epsilons(self, tmp_path):
        with pytest.raises(ConfigError):
            run_sweep(desk_cfg(tmp_path))

    def test_alignment_preset_sweep_smoke(self, tmp_path):
        cfg = load_config("fig5-6", {"T": "1", "stride": "100",
                                     "epsilon": "1e-3, 5e-4",
                                     "output": str(tmp_path / "align.csv")})
        result = run_sweep(cfg)
        assert all(e.ok for e in result.entries)
        assert result.entry(1e-3).sup_gap > 0.0


class TestInitialConditionFamilies:
    def test_alignment_single_run_smoke(self, tmp_path):
        cfg = load_config("hcn", {"T": "5", "stride": "500",
                                  "output": str(tmp_path / "hcn.csv")})
        record = run_experiment(cfg)
        assert not record.aborted
        assert record.data.shape[0] == 11

    def test_three_mode_start_stabilizes_slower(self, tmp_path):
        """The fig2 initial condition decays more slowly than the fig1 one."""
        records = {}
        for name in ("fig1", "fig2"):
            cfg = load_config(name, {"T": "50", "stride": "1000",
                                     "output": str(tmp_path / f"{name}.csv")})
            records[name] = run_experiment(cfg)
        for rec in records.values():
            assert not rec.aborted
            lyap = rec.column("lyapunov_av")
            assert lyap[0] == pytest.approx(0.75, abs=1e-12)
            assert lyap[-1] < lyap[0]
        assert records["fig2"].column("lyapunov_av")[-1] > records["fig1"].column("lyapunov_av")[-1]


class TestRefinement:
    def test_same_m_twice_is_identical(self, tmp_path):
        cfg = desk_cfg(tmp_path, name="ref.csv")
        result = refinement_check(cfg, [5, 5])
        assert result.sup_lyapunov_diff(5, 5) == 0.0

    def test_ground_state_agrees_exactly_across_m(self, tmp_path):
        # the target-solved gamma is undefined at e1, so pin it explicitly
        cfg = desk_cfg(tmp_path, name="gs.csv", initial_state="1", gamma="3e-4")
        result = refinement_check(cfg, [5, 10])
        assert result.sup_lyapunov_diff(5, 10) < 1e-12

    def test_needs_two_values(self, tmp_path):
        with pytest.raises(ConfigError):
            refinement_check(desk_cfg(tmp_path), [5])


class TestExport:
    def test_series_files(self, tmp_path, validation_setup):
        record = run_experiment(desk_cfg(tmp_path, name="exp.csv"), setup=validation_setup)
        paths = export_plotdata(record, outdir=tmp_path)
        assert len(paths) == 4
        for path in paths:
            lines = path.read_text().splitlines()
            assert lines[0].startswith("# t")
            assert len(lines) == 1 + record.data.shape[0]
            assert len(lines[1].split()) == 2

    def test_export_from_path(self, tmp_path, validation_setup):
        record = run_experiment(desk_cfg(tmp_path, name="exp2.csv"), setup=validation_setup)
        paths = export_plotdata(record.csv_path, outdir=tmp_path)
        assert all(p.is_file() for p in paths)

    def test_missing_record(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            export_plotdata(tmp_path / "nothing.csv")

    def test_malformed_record(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            load_record(bad)


class TestCli:
    def test_run_ok(self, tmp_path, capsys):
        code = cli.main(["run", "fig1", "--set", "T=1", "--set", "stride=100",
                         "--set", "output=cli.csv", "--outdir", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "cli.csv").is_file()
        assert "wrote" in capsys.readouterr().out

    def test_config_error_exit_code(self, tmp_path, capsys):
        assert cli.main(["run", "no-such-preset"]) == 1
        assert cli.main(["run", "fig1", "--set", "dt=1e-2", "--outdir", str(tmp_path)]) == 1

    def test_monitor_abort_exit_code(self, tmp_path, capsys):
        code = cli.main(["run", "fig1", "--set", "k=12.0", "--set", "T=5",
                         "--set", "stride=100", "--set", "output=abort.csv",
                         "--outdir", str(tmp_path)])
        assert code == 2

    def test_eig_prints_spectrum(self, capsys):
        assert cli.main(["eig", "fig1"]) == 0
        out = capsys.readouterr().out
        assert "lambda_1" in out and "gamma" in out

    def test_check_hypotheses(self, tmp_path, capsys):
        code = cli.main(["check-hypotheses", "fig1", "--outdir", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "coupling" in out
        assert (tmp_path / "fig1_hypotheses.txt").is_file()

    def test_refine(self, tmp_path, capsys):
        code = cli.main(["refine", "fig1", "--set", "T=1", "--set", "stride=100",
                         "--set", "output=r.csv", "--outdir", str(tmp_path),
                         "--modes", "5,5"])
        assert code == 0
        assert "M=5 vs M=5" in capsys.readouterr().out

    def test_sweep_and_export(self, tmp_path, capsys):
        code = cli.main(["sweep", "fig1", "--set", "T=1", "--set", "stride=100",
                         "--set", "epsilon=1e-3, 5e-4", "--set", "dt_per_epsilon=0.5",
                         "--set", "output=s.csv", "--outdir", str(tmp_path)])
        assert code == 0
        code = cli.main(["export", str(tmp_path / "s_eps0.001.csv"), "--outdir", str(tmp_path)])
        assert code == 0

    def test_bad_modes_argument(self, tmp_path):
        assert cli.main(["refine", "fig1", "--modes", "five"]) == 1
