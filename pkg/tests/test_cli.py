import csv
import json

import numpy as np
import pytest
import yaml

from primo.cli import (
    SWEEP_HEADER,
    TRACE_HEADER,
    main,
    read_trace_csv,
    run_experiment,
    write_trace_csv,
)
from primo.config import DEFAULTS_TABLE, ConfigError, ExperimentConfig, load_config, parse_config
from primo.runner import RegretTrace

SMALL = {
    "seed": 3,
    "horizon": 256,
    "replications": 2,
    "elasticity": {"n_samples": 2000},
    "algorithms": [{"name": "primo"}, {"name": "uniform"}],
}


def _write(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return str(p)


class TestConfig:
    def test_defaults(self):
        cfg = parse_config({})
        assert cfg.horizon == 2**14 and cfg.replications == 20 and cfg.tail_fraction == 0.25
        env = cfg.environment
        assert (env.d_x, env.n_actions, env.lam, env.eps0, env.delta0) == (3, 4, 0.5, 0.1, 0.5)
        assert env.missingness == "mar" and list(env.reward_terms) == ["intercept", "z"]
        assert [a.name for a in cfg.algorithms] == ["primo", "primo-cal", "oracle-covariate"]
        assert cfg.algorithms[0].gamma.c == 1.0 and cfg.algorithms[0].gamma.rho == 0.5

    def test_defaults_table_covers_fields(self):
        keys = dict(DEFAULTS_TABLE)
        for k in ("seed", "horizon", "environment.eps0", "environment.tau", "algorithms[].gamma.rho"):
            assert k in keys
        assert keys["horizon"] == repr(2**14)

    def test_eps0_zero_names_field(self):
        with pytest.raises(ConfigError) as exc:
            parse_config({"environment": {"eps0": 0.0}})
        assert any(e.startswith("environment.eps0") for e in exc.value.errors)

    def test_all_violations_reported(self):
        with pytest.raises(ConfigError) as exc:
            parse_config({"horizon": 1, "environment": {"delta0": -1}})
        locs = " ".join(exc.value.errors)
        assert "horizon" in locs and "environment.delta0" in locs

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as exc:
            parse_config({"environment": {"colour": 1}})
        assert "environment.colour" in exc.value.errors[0]

    @pytest.mark.parametrize("algos", [[], [{"name": "primo"}, {"name": "primo"}], [{"name": "greedy"}]])
    def test_bad_algorithm_lists(self, algos):
        with pytest.raises(ConfigError):
            parse_config({"algorithms": algos})

    def test_parse_error_line(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("seed: 1\nhorizon: [1, 2\nreplications: 3\n")
        with pytest.raises(ConfigError) as exc:
            load_config(p)
        assert "line 3" in exc.value.errors[0]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.yaml")

    def test_yaml_round_trip(self, tmp_path):
        cfg = load_config(_write(tmp_path, SMALL))
        assert isinstance(cfg, ExperimentConfig) and cfg.horizon == 256

    def test_algorithm_override_keeps_settings(self):
        cfg = parse_config({"algorithms": [{"name": "primo", "gamma": {"c": 2.0}}]})
        new = cfg.with_algorithms(["primo", "drop-missing"])
        assert [a.name for a in new.algorithms] == ["primo", "drop-missing"]
        assert new.algorithms[0].gamma.c == 2.0


class TestTraces:
    def test_csv_round_trip(self, tmp_path):
        inst = np.array([0.1, 1 / 3, 2e-17])
        tr = RegretTrace("primo", 4, np.array([1, 2, 2]), np.array([0.0, 2.5, np.pi]), inst, np.cumsum(inst),
                         np.array([1, 0, 1], np.int8))
        p = tmp_path / "t.csv"
        write_trace_csv(p, [tr])
        assert p.read_text().splitlines()[0] == TRACE_HEADER
        rows = read_trace_csv(p)
        assert [r["round"] for r in rows] == [1, 2, 3]
        assert [r["instant_regret"] for r in rows] == inst.tolist()
        assert [r["gamma"] for r in rows] == [0.0, 2.5, np.pi]
        assert [r["cum_regret"] for r in rows] == np.cumsum(inst).tolist()
        assert [r["missing"] for r in rows] == [1, 0, 1]

    def test_run_outputs(self, tmp_path):
        summary = run_experiment(parse_config(SMALL), tmp_path / "out", workers=1)
        files = sorted(p.name for p in (tmp_path / "out").iterdir())
        assert files == ["summary.json", "trace_primo.csv", "trace_uniform.csv"]
        for algo in ("primo", "uniform"):
            with open(tmp_path / "out" / f"trace_{algo}.csv") as fh:
                rows = list(csv.DictReader(fh))
            assert len(rows) == 2 * 256
            last = [float(r["cum_regret"]) for r in rows if r["round"] == "256"]
            np.testing.assert_array_equal(last, summary["algorithms"][algo]["final_by_replication"])
        on_disk = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert on_disk["horizon"] == 256 and on_disk["missingness"] == "mar"
        assert set(on_disk["elasticity"]) >= {"value", "method", "samples_used"}


class TestMain:
    def test_validate(self, tmp_path, capsys):
        assert main(["validate", "--config", _write(tmp_path, SMALL)]) == 0
        assert capsys.readouterr().out.strip() == "valid"

    def test_validate_reports_errors(self, tmp_path, capsys):
        bad = _write(tmp_path, {"horizon": 1, "environment": {"eps0": 0}})
        assert main(["validate", "--config", bad]) == 2
        err = capsys.readouterr().err
        assert "horizon" in err and "environment.eps0" in err

    def test_elasticity_zero_for_exact_model(self, tmp_path, capsys):
        raw = SMALL | {"environment": {"perturbation_scale": 0.0, "tau": 0.0}}
        assert main(["elasticity", "--config", _write(tmp_path, raw)]) == 0
        lines = dict(line.split(" ", 1) for line in capsys.readouterr().out.splitlines())
        assert float(lines["elasticity"]) == 0.0 and float(lines["upsilon"]) == 0.0

    def test_run(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", "--config", _write(tmp_path, SMALL), "--out", str(out), "--workers", "1",
                     "--quiet"]) == 0
        assert (out / "summary.json").exists()

    def test_seed_and_algo_override(self, tmp_path):
        out = tmp_path / "o"
        argv = ["run", "--config", _write(tmp_path, SMALL), "--out", str(out), "--workers", "1", "--quiet",
                "--seed", "9", "--algo", "clairvoyant"]
        assert main(argv) == 0
        s = json.loads((out / "summary.json").read_text())
        assert s["seed"] == 9 and list(s["algorithms"]) == ["clairvoyant"]
        assert s["algorithms"]["clairvoyant"]["final_regret"]["max"] == 0.0

    def test_env_out_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PRIMO_OUT", str(tmp_path / "env_out"))
        assert main(["run", "--config", _write(tmp_path, SMALL), "--workers", "1", "--quiet"]) == 0
        assert (tmp_path / "env_out" / "summary.json").exists()

    def test_unwritable_out(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["run", "--config", _write(tmp_path, SMALL), "--out", str(blocker), "--workers", "1",
                     "--quiet"]) == 3
        assert capsys.readouterr().err.startswith("error:")

    def test_sweep(self, tmp_path):
        out = tmp_path / "sw"
        argv = ["sweep", "--config", _write(tmp_path, SMALL), "--out", str(out), "--workers", "1", "--quiet",
                "--field", "environment.perturbation_scale", "--values", "0.0,0.1,0.2", "--algo", "primo"]
        assert main(argv) == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == SWEEP_HEADER and len(lines) == 4
        els = [float(line.split(",")[3]) for line in lines[1:]]
        assert els[0] < els[1] < els[2]
        assert len(json.loads((out / "sweep.json").read_text())) == 3

    def test_sweep_unknown_field(self, tmp_path, capsys):
        argv = ["sweep", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path / "x"), "--quiet",
                "--field", "environment.nope", "--values", "1"]
        assert main(argv) == 2
        assert "environment.nope" in capsys.readouterr().err
