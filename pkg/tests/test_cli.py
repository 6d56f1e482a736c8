"""Command line behavior: config resolution, subcommands, and artifacts."""
import json
import subprocess
import sys

import numpy as np
import pytest

from amlpf import __version__
from amlpf.bench import BenchRecord, read_dataset, simulate_data, write_records
from amlpf.cli import DEFAULT_CONFIG, config_hash, main, resolve_config
from amlpf.errors import UsageError
from amlpf.filters import pf_run
from amlpf.models import builtin_model
from amlpf.streams import DOMAIN_DATA, DOMAIN_LEVEL, derive_seed


def write_config(tmp_path, payload):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return str(path)


# ---------------------------------------------------------------- config


def test_minimal_config_fills_defaults(tmp_path):
    path = write_config(tmp_path, {"model": "gbm", "method": "amlpf",
                                   "levels": [3, 7], "seed": 1})
    cfg = resolve_config(path, {})
    assert cfg["model"]["name"] == "gbm"
    assert cfg["method"]["name"] == "amlpf"
    assert cfg["method"]["levels"] == [3, 7]
    assert cfg["policy"] == {"mode": "adaptive", "threshold_fraction": 0.5}
    assert cfg["data"]["horizon"] == 10
    assert cfg["seed"] == 1


def test_levels_must_increase():
    with pytest.raises(UsageError, match="L_min < L_max required"):
        resolve_config(None, {"method": {"levels": [5, 3]}})


def test_flag_seed_beats_file_seed(tmp_path):
    path = write_config(tmp_path, {"seed": 1})
    assert resolve_config(path, {"seed": 7})["seed"] == 7
    assert resolve_config(path, {})["seed"] == 1


def test_unknown_keys_are_named():
    with pytest.raises(UsageError, match="modle"):
        resolve_config(None, {"modle": {"name": "gbm"}})
    with pytest.raises(UsageError, match="method.particels"):
        resolve_config(None, {"method": {"particels": 5}})


def test_shorthand_keys_route_into_blocks():
    cfg = resolve_config(None, {"model": "nlm", "eps": 0.05, "particles": 77,
                                "horizon": 3, "level": 6})
    assert cfg["model"]["name"] == "nlm"
    assert cfg["method"]["eps"] == 0.05
    assert cfg["method"]["particles"] == 77
    assert cfg["method"]["level"] == 6
    assert cfg["data"]["horizon"] == 3


def test_defaults_are_never_mutated():
    resolve_config(None, {"seed": 9, "model": {"params": {"mu": 0.5}}})
    assert DEFAULT_CONFIG["seed"] == 1
    assert DEFAULT_CONFIG["model"]["params"] == {}


def test_config_file_problems(tmp_path):
    with pytest.raises(UsageError, match="not found"):
        resolve_config(str(tmp_path / "missing.json"), {})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(UsageError, match="not valid JSON"):
        resolve_config(str(bad), {})
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(UsageError, match="JSON object"):
        resolve_config(str(arr), {})


def test_validation_rejects_bad_values():
    with pytest.raises(UsageError, match="unknown method"):
        resolve_config(None, {"method": {"name": "ekf"}})
    with pytest.raises(UsageError, match="eps"):
        resolve_config(None, {"eps": 1.5})
    with pytest.raises(UsageError, match="threads"):
        resolve_config(None, {"threads": 0})
    with pytest.raises(UsageError, match="particle_counts"):
        resolve_config(None, {"method": {"particle_counts": [10, 10]}})
    with pytest.raises(UsageError, match="repeats"):
        resolve_config(None, {"bench": {"repeats": 1}})


def test_config_hash_ignores_execution_keys():
    base = resolve_config(None, {})
    moved = resolve_config(None, {"threads": 8, "output": {"dir": "elsewhere"}})
    reseeded = resolve_config(None, {"seed": 2})
    assert config_hash(base) == config_hash(moved)
    assert config_hash(base) != config_hash(reseeded)


# ------------------------------------------------------------ subcommands


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_unknown_subcommand_is_usage(capsys):
    assert main(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand_is_usage(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_simulate_writes_reproducible_dataset(tmp_path):
    rc = main(["simulate", "--model", "gbm", "--horizon", "5",
               "--seed", "3", "--out", str(tmp_path)])
    assert rc == 0
    path = tmp_path / "dataset.csv"
    first = path.read_text().splitlines()[0]
    assert first.startswith("# manifest ")
    manifest = json.loads(first[len("# manifest "):])
    assert manifest["seed"] == 3 and manifest["version"] == __version__

    ys, xs = read_dataset(path)
    expect_ys, expect_xs = simulate_data(builtin_model("gbm"), 5,
                                         seed=derive_seed(3, DOMAIN_DATA))
    assert ys.shape == (5, 1) and xs.shape == (5, 1)
    assert np.array_equal(ys, expect_ys)
    assert np.array_equal(xs, expect_xs)


def test_simulate_param_override_reaches_model(tmp_path):
    rc = main(["simulate", "--model", "gbm", "--param", "sigma=1e-12",
               "--param", "mu=0.5", "--horizon", "4", "--seed", "2",
               "--out", str(tmp_path)])
    assert rc == 0
    _, xs = read_dataset(tmp_path / "dataset.csv")
    ratios = xs[1:, 0] / xs[:-1, 0]
    assert np.allclose(ratios, np.exp(0.5), rtol=1e-9)


def test_unknown_model_param_is_usage(tmp_path, capsys):
    rc = main(["simulate", "--model", "gbm", "--param", "bogus=1",
               "--out", str(tmp_path)])
    assert rc == 2
    assert "error: code=usage" in capsys.readouterr().err


def test_malformed_flags_are_usage(tmp_path, capsys):
    assert main(["filter", "--param", "noequals"]) == 2
    assert main(["filter", "--levels", "3"]) == 2
    assert main(["filter", "--levels", "a,b"]) == 2
    err = capsys.readouterr().err
    assert err.count("error: code=usage") == 3


def test_levels_error_line_format(capsys):
    rc = main(["filter", "--model", "gbm", "--method", "amlpf",
               "--levels", "5,3"])
    assert rc == 2
    err = capsys.readouterr().err.strip()
    assert err == 'error: code=usage message="L_min < L_max required, got [5, 3]"'


def test_filter_pf_matches_library_call(tmp_path):
    rc = main(["filter", "--model", "gbm", "--method", "pf", "--level", "3",
               "--particles", "64", "--horizon", "4", "--seed", "5",
               "--out", str(tmp_path)])
    assert rc == 0
    payload = json.loads((tmp_path / "filter_output.json").read_text())

    ssm = builtin_model("gbm")
    ys, _ = simulate_data(ssm, 4, seed=derive_seed(5, DOMAIN_DATA))
    expect = pf_run(ssm, ys, 3, 64, seed=derive_seed(5, DOMAIN_LEVEL, 3))
    assert np.array_equal(payload["estimates"]["x1"], expect.estimates["x1"])
    assert np.array_equal(payload["log_nc"], expect.log_nc)
    assert payload["cost"] == expect.cost == 4 * 64 * 8
    assert payload["manifest"]["seed"] == 5

    lines = (tmp_path / "filter_output.csv").read_text().splitlines()
    assert lines[0].startswith("# manifest ")
    assert lines[1] == "k,phi_name,estimate,log_nc,cumulative_cost,resampled"


def test_filter_amlpf_writes_ml_output(tmp_path):
    rc = main(["filter", "--model", "gbm", "--method", "amlpf",
               "--levels", "3,5", "--eps", "0.1", "--horizon", "3",
               "--seed", "6", "--out", str(tmp_path)])
    assert rc == 0
    payload = json.loads((tmp_path / "ml_output.json").read_text())
    assert payload["method"] == "amlpf"
    assert payload["L_min"] == 3 and payload["L_max"] == 5
    assert sorted(payload["levels"]) == ["4", "5"]
    assert len(payload["combined_estimates"]["x1"]) == 3
    assert payload["manifest"]["seed"] == 6


def test_filter_consumes_dataset_file(tmp_path):
    sim_dir = tmp_path / "sim"
    out_dir = tmp_path / "run"
    assert main(["simulate", "--model", "gbm", "--horizon", "4",
                 "--seed", "9", "--out", str(sim_dir)]) == 0
    data = sim_dir / "dataset.csv"
    assert main(["filter", "--model", "gbm", "--method", "pf", "--level", "3",
                 "--particles", "32", "--data", str(data), "--seed", "9",
                 "--out", str(out_dir)]) == 0
    payload = json.loads((out_dir / "filter_output.json").read_text())
    ys, _ = read_dataset(data)
    expect = pf_run(builtin_model("gbm"), ys, 3, 32,
                    seed=derive_seed(9, DOMAIN_LEVEL, 3))
    assert np.array_equal(payload["estimates"]["x1"], expect.estimates["x1"])


def test_missing_dataset_is_usage(tmp_path, capsys):
    rc = main(["filter", "--model", "gbm", "--data",
               str(tmp_path / "nope.csv"), "--out", str(tmp_path)])
    assert rc == 2
    assert 'error: code=usage message="data.path does not exist' \
        in capsys.readouterr().err


def test_runtime_failure_exits_1(tmp_path, capsys):
    with np.errstate(over="ignore", invalid="ignore"):
        rc = main(["filter", "--model", "gbm", "--param", "mu=1e308",
                   "--method", "pf", "--level", "3", "--particles", "8",
                   "--horizon", "2", "--seed", "1", "--out", str(tmp_path)])
    assert rc == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: code=")
    code = err.split("code=")[1].split()[0]
    assert code in ("scheme.propagation", "filter.collapse")
    assert "\n" not in err


def test_env_threads_must_be_integer(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("AMLPF_THREADS", "abc")
    rc = main(["simulate", "--model", "gbm", "--out", str(tmp_path)])
    assert rc == 2
    assert "AMLPF_THREADS must be an integer" in capsys.readouterr().err


# ------------------------------------------------------------------ bench


BENCH_ARGS = ["bench", "--model", "linear_gaussian", "--methods", "pf,amlpf",
              "--budget-points", "3", "--repeats", "2", "--horizon", "5",
              "--seed", "11"]


def test_bench_outputs_are_thread_invariant(tmp_path, monkeypatch):
    dirs = [tmp_path / name for name in ("a", "b", "c")]
    assert main(BENCH_ARGS + ["--threads", "1", "--out", str(dirs[0])]) == 0
    assert main(BENCH_ARGS + ["--threads", "3", "--out", str(dirs[1])]) == 0
    monkeypatch.setenv("AMLPF_THREADS", "2")
    assert main(BENCH_ARGS + ["--out", str(dirs[2])]) == 0

    for name in ("bench_records.csv", "rates.json"):
        blobs = [(d / name).read_bytes() for d in dirs]
        assert blobs[0] == blobs[1] == blobs[2]

    payload = json.loads((dirs[0] / "rates.json").read_text())
    assert sorted(payload["rates"]) == ["amlpf:filter", "amlpf:nc",
                                       "pf:filter", "pf:nc"]
    for fit in payload["rates"].values():
        assert fit["points"] == 3 and np.isfinite(fit["slope"])
    assert payload["reference"]["provenance"] == "kalman_exact"


# ------------------------------------------------------------------ rates


def power_law_records():
    return [BenchRecord("pf", "gbm", "filter", i, 10.0 ** (-i), 10 ** i, 20,
                        3, 3) for i in range(4)]


def test_rates_refit_power_law(tmp_path):
    csv = tmp_path / "records.csv"
    write_records(csv, power_law_records())
    out = tmp_path / "out"
    assert main(["rates", str(csv), "--out", str(out)]) == 0
    payload = json.loads((out / "rates.json").read_text())
    fit = payload["rates"]["pf:filter"]
    assert fit["slope"] == pytest.approx(-1.0, abs=1e-12)
    assert fit["points"] == 4


def test_rates_need_three_budget_points(tmp_path, capsys):
    csv = tmp_path / "records.csv"
    write_records(csv, power_law_records()[:2])
    rc = main(["rates", str(csv), "--out", str(tmp_path)])
    assert rc == 2
    assert ">= 3 budget points" in capsys.readouterr().err


def test_module_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "amlpf", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert __version__ in proc.stdout
