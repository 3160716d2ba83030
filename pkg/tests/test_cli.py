import filecmp
import os

import numpy as np
import pytest

from riemannopt.cli import main, parse_spectrum, read_config_file, UsageError


class TestSpectrumGrammar:
    def test_descending_ramp(self):
        assert np.array_equal(parse_spectrum("21..1"),
                              np.arange(21.0, 0.0, -1.0))

    def test_ascending_ramp(self):
        assert np.array_equal(parse_spectrum("1..4"), [1.0, 2.0, 3.0, 4.0])

    def test_diag_list(self):
        assert np.array_equal(parse_spectrum("diag:3,2,1"), [3.0, 2.0, 1.0])

    def test_file(self, tmp_path):
        p = tmp_path / "spec.txt"
        p.write_text("5.0\n2.5\n")
        assert np.array_equal(parse_spectrum(f"file:{p}"), [5.0, 2.5])

    def test_bad_spec_rejected(self):
        with pytest.raises(UsageError):
            parse_spectrum("21:1")
        with pytest.raises(UsageError):
            parse_spectrum("diag:a,b")

    def test_length_checked(self):
        with pytest.raises(UsageError):
            parse_spectrum("3..1", n=5)


class TestConfigFile:
    def test_parse(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# comment\nmethod = cg\nmax-iters = 50\n\nseed = 3\n")
        cfg = read_config_file(p)
        assert cfg == {"method": "cg", "max_iters": "50", "seed": "3"}

    def test_flags_override_file(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 3\nmax-iters = 10\n")
        out = tmp_path / "a.csv"
        rc = main(["eig", "--config", str(cfg), "--seed", "4",
                   "--n", "6", "--spectrum", "6..1", "--out", str(out)])
        assert rc == 0
        text = out.read_text()
        assert "# seed = 4" in text        # flag wins
        assert "# max_iters = 10" in text  # file fills the rest

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("bogus = 1\n")
        rc = main(["eig", "--config", str(cfg)])
        assert rc == 1


class TestCliRuns:
    def test_eig_sphere_deterministic(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        args = ["eig", "--method", "cg", "--manifold", "sphere", "--n", "12",
                "--spectrum", "12..1", "--seed", "5", "--max-iters", "60"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_text().replace(str(a), "X") == \
            b.read_text().replace(str(b), "X")

    def test_csv_header_embeds_config(self, tmp_path):
        out = tmp_path / "t.csv"
        rc = main(["track", "--scenario", "first", "--n", "20", "--samples",
                   "10", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        comments = [l for l in lines if l.startswith("#")]
        assert any("scenario = first" in c for c in comments)
        header = next(l for l in lines if not l.startswith("#"))
        assert header.split(",")[:2] == ["i", "rho_gap"]

    def test_invalid_spectrum_usage_error(self, tmp_path):
        rc = main(["eig", "--spectrum", "oops", "--out",
                   str(tmp_path / "x.csv")])
        assert rc == 1

    def test_unknown_scenario_usage_error(self, tmp_path):
        rc = main(["track", "--scenario", "fourth",
                   "--out", str(tmp_path / "x.csv")])
        assert rc == 1

    def test_no_command_usage(self):
        assert main([]) == 1

    def test_flow_zero_t_end_header_only(self, tmp_path):
        out = tmp_path / "f.csv"
        rc = main(["flow", "--flow", "double-bracket", "--n", "4",
                   "--t-end", "0", "--out", str(out)])
        assert rc == 0
        rows = [l for l in out.read_text().splitlines()
                if l and not l.startswith("#")]
        assert len(rows) <= 2  # header plus at most the t=0 sample

    def test_flow_svd_rate_footer(self, tmp_path):
        out = tmp_path / "svd.csv"
        rc = main(["flow", "--flow", "svd-uv", "--n", "7", "--k", "5",
                   "--t-end", "30", "--dt", "0.01", "--out", str(out)])
        assert rc == 0
        text = out.read_text()
        assert "rate entry predicted measured" in text
        assert "# rate 12 0.24980" in text

    def test_newton_warm_so(self, tmp_path):
        out = tmp_path / "so.csv"
        rc = main(["eig", "--method", "newton", "--manifold", "so", "--n",
                   "8", "--spectrum", "8..1", "--warm", "--max-iters", "6",
                   "--out", str(out)])
        assert rc == 0
        rows = [l for l in out.read_text().splitlines()
                if l and not l.startswith("#")]
        assert len(rows) - 1 <= 7

    def test_bench_runs(self, tmp_path):
        out = tmp_path / "bench.csv"
        rc = main(["bench", "--n-grid", "16,32", "--k-grid", "2", "--reps",
                   "3", "--out", str(out)])
        assert rc == 0
        rows = [l for l in out.read_text().splitlines()
                if l and not l.startswith("#")]
        assert len(rows) == 3  # header + 2 grid points

    def test_plot_renders_png(self, tmp_path):
        out = tmp_path / "e.csv"
        rc = main(["eig", "--manifold", "sphere", "--n", "8", "--spectrum",
                   "8..1", "--max-iters", "20", "--plot",
                   "--out", str(out)])
        assert rc == 0
        png = tmp_path / "e.png"
        assert png.exists() and png.stat().st_size > 1000
