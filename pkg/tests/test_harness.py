import json
import math

import numpy as np
import pytest

from rareebm.errors import ConfigurationError
from rareebm.harness import (
    TABLE_ROWS,
    build_problem,
    load_config,
    run_experiment,
    run_replicate,
    summarize_estimates,
)


def tiny_ebm_config(**overrides):
    cfg = {
        "problem": {"name": "four_branch"},
        "query": {"thresholds": [0.0]},
        "method": {
            "kind": "ebm",
            "form": "grid",
            "grid": {"lo": -10.0, "hi": 100.0, "h": 0.1},
            "p_ref": {"kind": "gev", "loc": 2.0, "scale": 3.0, "shape": 0.0},
            "learning_rate": {"kind": "constant", "gamma": 6.5},
            "momentum": 0.5,
            "max_steps": 3,
            "estimate_window": 2,
            "chain": {"burn_in": 5, "thin": 2, "n_keep": 40},
            "proposal": {"kind": "random_walk", "pilot_steps": 200},
            "stopping": {"enabled": False},
        },
        "runs": {"n_runs": 2, "base_seed": 0},
    }
    for key, val in overrides.items():
        cfg[key] = val
    return cfg


class TestLoadConfig:
    def test_defaults_filled(self):
        cfg = load_config({"problem": {"name": "four_branch"}, "query": {"thresholds": [0.0]}})
        assert cfg["method"]["kind"] == "ebm"
        assert cfg["runs"]["n_runs"] == 50
        assert cfg["output"]["dir"] is None

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown config key"):
            load_config({"problem": {"name": "four_branch"}, "quary": {"thresholds": [0.0]}})
        with pytest.raises(ConfigurationError, match="unknown config key"):
            load_config({"method": {"lerning_rate": {}}})

    def test_section_must_be_object(self):
        with pytest.raises(ConfigurationError, match="must be an object"):
            load_config({"method": "ebm"})

    def test_threshold_coverage(self):
        cfg = tiny_ebm_config()
        cfg["query"]["thresholds"] = [5000.0]
        with pytest.raises(ConfigurationError, match="does not cover"):
            load_config(cfg)

    def test_estimate_average_validated(self):
        cfg = tiny_ebm_config()
        cfg["method"]["estimate_average"] = "median"
        with pytest.raises(ConfigurationError, match="estimate_average"):
            load_config(cfg)

    def test_file_source(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(tiny_ebm_config()))
        assert load_config(path)["problem"]["name"] == "four_branch"

    def test_invalid_runs_and_thresholds(self):
        with pytest.raises(ConfigurationError):
            load_config({"runs": {"n_runs": 0}})
        with pytest.raises(ConfigurationError):
            load_config({"query": {"thresholds": []}})


class TestBuildProblem:
    def test_known_problems(self):
        for name in ("contamination", "four_branch", "load_capacity"):
            bundle = build_problem({"name": name, "seed": 2024, "n_components": 10})
            assert bundle.problem.dim >= 2

    def test_unknown_problem(self):
        with pytest.raises(ConfigurationError):
            build_problem({"name": "nope", "seed": 0, "n_components": 10})


class TestSummarize:
    def test_three_value_fixture(self):
        s = summarize_estimates([1.0, 2.0, 3.0], reference=2.0, threshold=0.5)
        assert s.mean == pytest.approx(2.0)
        assert s.cov == pytest.approx(1.0 / 2.0)  # sd (ddof=1) = 1
        assert s.rmse == pytest.approx(math.sqrt(2.0 / 3.0))
        assert s.ci_low == pytest.approx(np.percentile([1, 2, 3], 2.5))
        assert s.ci_high == pytest.approx(np.percentile([1, 2, 3], 97.5))

    def test_single_run_has_no_spread_stats(self):
        s = summarize_estimates([0.5])
        assert s.cov is None and s.ci_low is None and s.ci_high is None

    def test_nan_runs_excluded(self):
        s = summarize_estimates([1.0, float("nan"), 3.0])
        assert s.mean == pytest.approx(2.0)

    def test_all_failed(self):
        s = summarize_estimates([float("nan")])
        assert math.isnan(s.mean)


class TestReplicates:
    def test_determinism(self):
        cfg = load_config(tiny_ebm_config())
        a = run_replicate(cfg, 0)
        b = run_replicate(cfg, 0)
        assert a.p_hats == b.p_hats and a.budget == b.budget
        c = run_replicate(cfg, 1)
        assert c.p_hats != a.p_hats

    def test_subset_replicate(self):
        cfg = tiny_ebm_config()
        cfg["method"]["kind"] = "subset"
        cfg["method"]["subset"] = {"n_samples": 100, "mh_steps_per_seed": 3}
        out = run_replicate(load_config(cfg), 0)
        assert out.error is None
        assert 0 <= out.p_hats[0] <= 1
        assert out.budget > 0

    def test_potential_averaging_path(self):
        cfg = tiny_ebm_config()
        cfg["method"]["estimate_average"] = "potential"
        out = run_replicate(load_config(cfg), 0)
        assert out.error is None and 0 <= out.p_hats[0] <= 1


class TestRunExperiment:
    def test_outputs_written(self, tmp_path):
        cfg = tiny_ebm_config()
        cfg["output"] = {"dir": str(tmp_path / "out"), "traces": True}
        stats = run_experiment(cfg)
        assert stats.n_runs == 2 and stats.n_failed == 0
        runs_csv = (tmp_path / "out" / "runs.csv").read_text().strip().splitlines()
        assert len(runs_csv) == 3  # header + 2 runs
        assert (tmp_path / "out" / "trace_0.csv").exists()
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["statistics"]["n_runs"] == 2
        got = summary["statistics"]["thresholds"][0]["mean"]
        assert got == pytest.approx(stats.per_threshold[0].mean, rel=1e-12)

    def test_reference_mismatch(self):
        cfg = tiny_ebm_config()
        cfg["runs"]["reference"] = [1e-3, 1e-4]
        with pytest.raises(ConfigurationError, match="reference"):
            run_experiment(cfg)

    def test_stop_reason_counts(self):
        stats = run_experiment(tiny_ebm_config())
        assert stats.stop_reasons == {"max_steps": 2}


def test_table_registry_configs_load():
    from importlib import resources

    for rows in TABLE_ROWS.values():
        for row in rows:
            with resources.as_file(
                resources.files("rareebm") / "configs" / f"{row['config']}.json"
            ) as path:
                cfg = load_config(path)
            assert cfg["runs"]["n_runs"] == 50
