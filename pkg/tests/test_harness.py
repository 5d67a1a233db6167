import json
import subprocess
import sys

import numpy as np
import pytest

from rydplasma import cli, harness
from rydplasma.harness import (EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, Check,
                               ConfigError, ExperimentConfig, FitRecord, Outcome, ResultTable,
                               coupling_limit_density, regime_diagram, run_experiment, run_tasks,
                               screening_limit_density, task_seeds)
from rydplasma.fitting import fit_power_law
from rydplasma.integrator import IntegrationFailure
from rydplasma.units import PlasmaParams

TINY_DEBYE = {
    "experiment": "debye-check",
    "run": {"n_particles": [16, 32], "prerun_periods": 1, "window_periods": 1,
            "samples_per_period": 10},
}


def test_result_table_csv():
    t = ResultTable(["n"], ["tau"])
    t.add({"n": 4}, {"tau": (1.5, 0.25)})
    t.add({"n": 6}, {"tau": (2.0, None)})
    t.provenance["seed"] = 3
    t.fits.append(FitRecord.of("tau_vs_n", fit_power_law([1, 2, 4], [1, 0.5, 0.25])))
    text = t.to_csv()
    lines = text.splitlines()
    assert lines[0] == "# rydplasma result table"
    assert "# seed: 3" in lines
    assert any(l.startswith("# fit tau_vs_n: exponent=-1") for l in lines)
    assert lines[-3:] == ["n,tau,tau_err", "4,1.5,0.25", "6,2,exact"]
    np.testing.assert_array_equal(t.column("tau_err"), [0.25, np.nan])
    with pytest.raises(Exception):
        t.add({"n": 1}, {"tau": 1.0})


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"experiment": "nope"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"experiment": "debye-check", "extras": {}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"experiment": "lifetime-scan",
                                       "plasma": {"gamma": 0.1}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"experiment": "lifetime-scan",
                                       "plasma": {"densities": [-1.0]}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"experiment": "regime-diagram",
                                       "material": {"epsilon_rel": -2}})
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment: [unclosed\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)


def test_yaml_config_and_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("experiment: lifetime-scan\nplasma:\n  densities: [1.0e18, 1.0e19]\n"
                    "ensemble:\n  seed: 5\n")
    cfg = ExperimentConfig.load(path)
    assert cfg.seed == 5
    assert cfg.exciton["n"] == [4, 6, 8]  # from the defaults
    pts = cfg.plasma_points()
    assert [p.density for p in pts] == [1e18, 1e19]
    other = cfg.with_overrides(seed=6, workers=2)
    assert other.seed == 6 and other.workers == 2 and cfg.seed == 5
    assert other.digest() != cfg.digest()
    assert cfg.digest() == ExperimentConfig.load(path).digest()


def _square(x):
    if x == 3:
        raise IntegrationFailure("boom", 0.0, 0.0, 1.0)
    return x * x


@pytest.mark.parametrize("workers", [1, 2])
def test_run_tasks_order_and_failures(workers):
    res, fails = run_tasks(_square, range(6), workers)
    assert res == [0, 1, 4, None, 16, 25]
    assert fails[0][0] == 3 and "IntegrationFailure" in fails[0][1]


def test_task_seeds_are_counter_indexed():
    a = task_seeds(7, 3)
    b = task_seeds(7, 5)
    for x, y in zip(a, b):
        assert x.generate_state(2).tolist() == y.generate_state(2).tolist()


def test_reproducible_across_worker_counts(tmp_path):
    cfg = ExperimentConfig.from_mapping(TINY_DEBYE)
    r1 = run_experiment(cfg, tmp_path / "w1", plots=False)
    run_experiment(cfg.with_overrides(workers=2), tmp_path / "w2", plots=False)
    a = (tmp_path / "w1" / "results.csv").read_text().splitlines()
    b = (tmp_path / "w2" / "results.csv").read_text().splitlines()
    # the workers count enters the config hash only
    strip = lambda ls: [l for l in ls if not l.startswith("# config_hash")]
    assert strip(a) == strip(b)
    assert r1.exit_code in (EXIT_OK, EXIT_ACCEPTANCE)
    summary = json.loads((tmp_path / "w1" / "summary.json").read_text())
    assert summary["experiment"] == "debye-check" and summary["checks"]


def test_regime_scalings():
    T = np.array([2.0, 4.0, 8.0])
    gam = coupling_limit_density(T)
    np.testing.assert_allclose(gam[1:] / gam[:-1], 8.0)
    scr = screening_limit_density(20, T)
    np.testing.assert_allclose(scr[1:] / scr[:-1], 2.0)
    # the coupling boundary sits at Gamma = 0.2
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert PlasmaParams(float(gam[0]), temperature=2.0).gamma == pytest.approx(0.2)
    table = regime_diagram(20, T, 6.25e16, 7.0)
    obs = table.column("observable_limit_m3")
    np.testing.assert_allclose(obs, 6.25e16 * np.sqrt(7.0 / T))
    assert "exact" in table.to_csv()


def test_screening_limit_matches_debye_length():
    import warnings
    from rydplasma.units import rydberg_scales
    T = 10.0
    rho = float(screening_limit_density(20, T))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lam = PlasmaParams(rho, temperature=T).debye_length
    assert rydberg_scales(20).r_exp / lam == pytest.approx(0.5, rel=1e-10)


def _fake_runner(kind):
    def run(cfg):
        if kind == "numerical":
            raise IntegrationFailure("step underflow", 0.0, 1e-30, 1.0)
        t = ResultTable(["x"], ["y"])
        t.add({"x": 1}, {"y": (1.0, None)})
        return Outcome(t, [Check("fake", kind == "ok", 1, "1")])
    return run


@pytest.mark.parametrize("kind, code", [("ok", EXIT_OK), ("fail", EXIT_ACCEPTANCE),
                                        ("numerical", EXIT_NUMERICAL)])
def test_exit_codes(monkeypatch, tmp_path, kind, code):
    monkeypatch.setitem(harness.RUNNERS, "regime-diagram", _fake_runner(kind))
    cfg = ExperimentConfig.from_mapping({"experiment": "regime-diagram"})
    res = run_experiment(cfg, tmp_path, plots=False)
    assert res.exit_code == code
    assert (tmp_path / "results.csv").exists()


def test_cli_regime_diagram(tmp_path, capsys):
    code = cli.main(["regime-diagram", "--out-dir", str(tmp_path), "--seed", "2"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("PASS ")
    assert (tmp_path / "results.csv").read_text().count("\n") > 20
    assert (tmp_path / "plots" / "regime.svg").exists()
    assert json.loads((tmp_path / "summary.json").read_text())["seed"] == 2


def test_cli_config_errors(tmp_path):
    assert cli.main(["no-such-experiment"]) == EXIT_CONFIG
    cfg = tmp_path / "c.yaml"
    cfg.write_text("experiment: toy-benchmark\n")
    assert cli.main(["regime-diagram", "--config", str(cfg)]) == EXIT_CONFIG
    assert cli.main(["regime-diagram", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    assert cli.main(["regime-diagram", "--workers", "0"]) == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rydplasma", "regime-diagram", "--no-plots",
                           "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert not (tmp_path / "plots").exists()
