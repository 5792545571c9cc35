import json
import os

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from kdelf import io
from kdelf.cli import EXIT_CONFIG, EXIT_NUMERIC, ConfigError, load_config, main, parse_grid
from kdelf.simulate import Sample
from kdelf.survey import SurveyWindow

SMALL = {"seed": 11, "simulate": {"n": 200, "exact_n": True},
         "batch": {"count": 2, "size_range": [150, 250]},
         "fit": {"grid": "z=0.5:3:6,logL=25:28:7", "max_evals": 3000},
         "mcmc": {"chains": 2, "burn_in": 100, "keep": 200, "band": True, "band_draws": 20},
         "compare": {"estimators": ["binned", "t"]}}


def write_config(path, cfg):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh)
    return str(path)


def files(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d))}


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    cfg = write_config(d / "run.yaml", SMALL)
    res = CliRunner().invoke(main, ["simulate", "--config", cfg, "--out", str(d / "a")])
    assert res.exit_code == 0, res.output
    return d


def test_csv_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(0)
    w = SurveyWindow()
    s = Sample(z=rng.uniform(0, 6, 20), L=rng.uniform(22, 30, 20), window=w,
               weights=1 + rng.random(20))
    io.write_sample(tmp_path / "s.csv", s)
    back = io.read_sample(tmp_path / "s.csv", w)
    assert np.array_equal(back.z, s.z) and np.array_equal(back.L, s.L)
    assert np.array_equal(back.weights, s.weights)


def test_json_has_schema_version(tmp_path):
    io.write_json(tmp_path / "x.json", {"a": np.float64(1.5), "b": np.arange(3), "c": np.inf})
    doc = io.read_json(tmp_path / "x.json")
    assert doc["schema_version"] == io.SCHEMA_VERSION
    assert doc["b"] == [0, 1, 2] and doc["c"] == "inf"


def test_parse_grid():
    zg, Lg = parse_grid("z=0:6:61,logL=22:30:81")
    assert zg.size == 61 and Lg.size == 81
    assert zg[0] == 0 and zg[-1] == 6
    for bad in ("z=0:6", "z=0:6:0,logL=1:2:3", "z=0:1:2", "q=0:1:2,logL=1:2:3"):
        with pytest.raises(ValueError):
            parse_grid(bad)


def test_config_validation(tmp_path):
    cfg = load_config(None)
    assert cfg.seed == 1
    bad = write_config(tmp_path / "bad.yaml", {"window": {"z_min": 3.0, "z_max": 1.0}})
    with pytest.raises(ConfigError):
        load_config(bad)


def test_simulate_writes_sample_and_manifest(sim_dir):
    out = sim_dir / "a"
    assert sorted(os.listdir(out)) == ["manifest.json", "sample.csv"]
    man = io.read_json(out / "manifest.json")
    assert man["schema_version"] == io.SCHEMA_VERSION
    assert man["surveys"][0]["n"] == 200
    header, rows = io.read_csv(out / "sample.csv")
    assert header == ["z", "L"] and len(rows) == 200


def test_simulate_is_deterministic(sim_dir, runner):
    cfg = str(sim_dir / "run.yaml")
    res = runner.invoke(main, ["simulate", "--config", cfg, "--out", str(sim_dir / "b")])
    assert res.exit_code == 0
    assert files(sim_dir / "a") == files(sim_dir / "b")


def test_bad_config_exits_2_without_output(tmp_path, runner):
    cfg = write_config(tmp_path / "bad.yaml", {"cosmology": {"omega_m": -1}})
    res = runner.invoke(main, ["simulate", "--config", cfg, "--out", str(tmp_path / "o")])
    assert res.exit_code == EXIT_CONFIG
    assert not (tmp_path / "o").exists()
    res = runner.invoke(main, ["simulate", "--config", str(tmp_path / "none.yaml"),
                               "--out", str(tmp_path / "o")])
    assert res.exit_code == EXIT_CONFIG


def test_fit_binned_and_kde(sim_dir, runner):
    cfg = str(sim_dir / "run.yaml")
    sample = str(sim_dir / "a" / "sample.csv")
    out = sim_dir / "fit"
    res = runner.invoke(main, ["fit", "--config", cfg, "--sample", sample, "--method", "binned",
                               "--scheme", "flim-anchored", "--out", str(out)])
    assert res.exit_code == 0, res.output
    header, rows = io.read_csv(out / "binned_flim-anchored.csv")
    assert header == ["z_lo", "z_hi", "logL_lo", "logL_hi", "z_c", "logL_c", "N", "phi",
                      "phi_err", "flag"]
    assert sum(int(r[6]) for r in rows) == 200
    res = runner.invoke(main, ["fit", "--config", cfg, "--sample", sample, "--method", "t",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    doc = io.read_json(out / "fit_t.json")
    assert doc["schema_version"] == io.SCHEMA_VERSION
    assert set(doc["params"]) == {"h1", "h2", "delta1", "delta2"}
    _, grid = io.read_csv(out / "phi_t.csv")
    assert len(grid) == 6 * 7


def test_fit_nonconvergence_exits_3(sim_dir, runner, tmp_path):
    cfg = dict(SMALL, fit=dict(SMALL["fit"], max_evals=3))
    path = write_config(tmp_path / "tight.yaml", cfg)
    res = runner.invoke(main, ["fit", "--config", path, "--sample",
                               str(sim_dir / "a" / "sample.csv"), "--method", "t",
                               "--out", str(tmp_path / "o")])
    assert res.exit_code == EXIT_NUMERIC
    assert (tmp_path / "o" / "trace_t.csv").exists()


def test_mcmc_outputs(sim_dir, runner):
    out = sim_dir / "mc"
    res = runner.invoke(main, ["mcmc", "--config", str(sim_dir / "run.yaml"), "--sample",
                               str(sim_dir / "a" / "sample.csv"), "--method", "t",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    names = set(os.listdir(out))
    assert {"chain_t_0.csv", "chain_t_1.csv", "summary_t.json", "band_t.csv"} <= names
    summ = io.read_json(out / "summary_t.json")
    assert "rhat" in json.dumps(summ)


def test_compare_batch(tmp_path, runner):
    cfg = write_config(tmp_path / "run.yaml", SMALL)
    res = runner.invoke(main, ["simulate", "--config", cfg, "--batch", "2", "--exact-n",
                               "--out", str(tmp_path / "batch")])
    assert res.exit_code == 0, res.output
    assert {"sample_000.csv", "sample_001.csv"} <= set(os.listdir(tmp_path / "batch"))
    res = runner.invoke(main, ["compare", "--config", cfg, "--batch", str(tmp_path / "batch"),
                               "--estimators", "binned", "--out", str(tmp_path / "cmp")])
    assert res.exit_code == 0, res.output
    rep = io.read_json(tmp_path / "cmp" / "dlf_report.json")
    vals = [s["binned"] for s in rep["per_survey"]]
    assert rep["means"]["binned"] == pytest.approx(np.mean(vals))
    _, rows = io.read_csv(tmp_path / "cmp" / "dlf_distribution.csv")
    assert len(rows) == 2


def test_compare_needs_truth(tmp_path, runner, sim_dir):
    man = io.read_json(sim_dir / "a" / "manifest.json")
    man.pop("truth", None)
    d = tmp_path / "batch"
    d.mkdir()
    with open(d / "manifest.json", "w") as fh:
        json.dump(man, fh)
    res = runner.invoke(main, ["compare", "--batch", str(d), "--out", str(tmp_path / "o")])
    assert res.exit_code == EXIT_CONFIG
