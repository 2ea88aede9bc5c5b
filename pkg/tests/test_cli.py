import json

from rareebm.cli import main


def _tiny_config():
    return {
        "problem": {"name": "four_branch"},
        "query": {"thresholds": [0.0]},
        "method": {
            "kind": "subset",
            "subset": {"n_samples": 100, "mh_steps_per_seed": 3},
        },
        "runs": {"n_runs": 2, "base_seed": 0},
    }


def test_oracle_commands(capsys):
    assert main(["oracle", "four_branch"]) == 0
    out = capsys.readouterr().out
    assert "4.46" in out
    assert main(["oracle", "load_capacity"]) == 0
    out = capsys.readouterr().out
    assert "n_components=10" in out and "n_components=100" in out


def test_run_missing_config(tmp_path):
    assert main(["run", str(tmp_path / "missing.json")]) == 2


def test_run_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["run", str(path)]) == 2


def test_run_unknown_key(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"problm": {}}))
    assert main(["run", str(path)]) == 2


def test_run_subset_experiment(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(_tiny_config()))
    code = main(["--out-dir", str(tmp_path / "out"), "--seed", "5", "run", str(path)])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["n_runs"] == 2
    assert (tmp_path / "out" / "runs.csv").exists()


def test_traces_rejects_subset(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(_tiny_config()))
    assert main(["traces", str(path)]) == 2
