import subprocess
import sys


from dseir.cli import main
from dseir.io import read_chain, read_rows

FAST = ["--config", "synthetic_sir"]


def _csv(path, counts, spacing=1.0):
    path.write_text("time,count\n" + "".join(f"{spacing * (i + 1):g},{c}\n"
                                             for i, c in enumerate(counts)))
    return str(path)


def test_simulate_writes_headers(tmp_path):
    assert main(["simulate", *FAST, "--out", str(tmp_path)]) == 0
    cols, rows = read_rows(tmp_path / "trajectory.csv")
    assert cols == ["time", "S", "I", "infection", "removal", "log_beta"]
    assert len(rows) == 10_001
    first = (tmp_path / "observations.csv").read_text().splitlines()[0]
    assert first.startswith("# config_sha256=") and first.endswith("seed=1")


def test_filter_is_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / str(k)
        assert main(["filter", *FAST, "--particles", "300", "--workers", "1", "--out", str(out),
                     "--dump-particles"]) == 0
        outs.append((out / "filter_summary.csv").read_bytes())
        assert (out / "particles.npz").exists()
    assert outs[0] == outs[1]
    cols, rows = read_rows(tmp_path / "0" / "filter_summary.csv")
    assert cols[:3] == ["time", "quantity", "mean"] and "ess" in cols
    assert {r[1] for r in rows} >= {"gamma", "rho", "lambda_beta", "beta_t", "S", "I"}


def test_filter_blind_differs(tmp_path):
    main(["filter", *FAST, "--particles", "300", "--workers", "1", "--out", str(tmp_path / "a")])
    main(["filter", *FAST, "--particles", "300", "--workers", "1", "--blind",
          "--out", str(tmp_path / "b")])
    assert ((tmp_path / "a" / "filter_summary.csv").read_bytes()
            != (tmp_path / "b" / "filter_summary.csv").read_bytes())


def test_forecast(tmp_path):
    assert main(["forecast", *FAST, "--particles", "300", "--workers", "1", "--windows", "2",
                 "--out", str(tmp_path)]) == 0
    cols, rows = read_rows(tmp_path / "forecast.csv")
    assert cols[:8] == ["time", "observed", "min", "q1", "median", "q3", "max", "mean"]
    assert [float(r[0]) for r in rows] == [9.0, 10.0]
    cols, rows = read_rows(tmp_path / "forecast_samples.csv")
    assert cols == ["time", "sample"] and len(rows) == 600


def test_pmmh_with_pilot(tmp_path):
    assert main(["pmmh", *FAST, "--iters", "6", "--particles", "20",
                 "--out", str(tmp_path / "pilot")]) == 0
    chain = read_chain(tmp_path / "pilot" / "pmmh_chain.csv")
    assert chain.names == ["gamma", "lambda_beta", "rho"] and len(chain.samples) == 7
    assert main(["pmmh", *FAST, "--iters", "3", "--particles", "20", "--out", str(tmp_path),
                 "--pilot", str(tmp_path / "pilot" / "pmmh_chain.csv")]) == 0


def test_lna_fit_and_forecast(tmp_path):
    data = _csv(tmp_path / "e.csv", [3, 5, 8, 12, 9, 7])
    assert main(["lna-fit", "--config", "ebola", "--data", data, "--iters", "30",
                 "--forecast", "--windows", "1", "--set", "algorithm.lna.forecast_samples=50",
                 "--out", str(tmp_path)]) == 0
    assert read_chain(tmp_path / "lna_chain.csv").names == ["beta", "kappa", "gamma", "rho", "nu"]
    cols, rows = read_rows(tmp_path / "lna_forecast.csv")
    assert len(rows) == 1 and int(rows[0][1]) == 7


def test_bench(tmp_path):
    assert main(["bench", *FAST, "--particles-list", "200", "--workers-list", "1,2",
                 "--out", str(tmp_path)]) == 0
    cols, rows = read_rows(tmp_path / "bench.csv")
    assert cols == ["particles", "workers", "seconds", "speedup", "identical", "cores"]
    assert [r[4] for r in rows] == ["1", "1"]


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["filter", *FAST, "--set", "algorithm.dtau=0.3", "--out", str(tmp_path)]) == 2
    assert "algorithm.dtau" in capsys.readouterr().err
    assert main(["filter", *FAST, "--data", str(tmp_path / "none.csv")]) == 2
    assert main(["lna-fit", *FAST, "--iters", "2", "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_code(tmp_path, capsys):
    data = _csv(tmp_path / "bad.csv", [5, 5000])
    assert main(["filter", *FAST, "--data", data, "--particles", "100", "--workers", "1",
                 "--out", str(tmp_path)]) == 3
    assert "index 1" in capsys.readouterr().err


def test_console_script_runs(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dseir.cli", "--version"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and "dseir" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "dseir.cli", "filter", "--config", "nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
