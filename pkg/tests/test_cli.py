import json

import pytest

from advquery.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_OK, main


def write_train_config(root, **overrides):
    cfg = {
        "dataset": {"kind": "synthetic", "n": 300, "classes": 3, "dim": 6,
                    "separation": 1.8, "rng_seed": 1},
        "target": {"hidden_sizes": [10], "epochs": 8},
        "local_models": [{"hidden_sizes": [8], "epochs": 5}],
        "master_seed": 2,
    }
    cfg.update(overrides)
    path = root / "train.json"
    path.write_text(json.dumps(cfg))
    return path


def test_train_then_attack_in_process(tmp_path, capsys):
    cfg = write_train_config(tmp_path)
    assert main(["train", "-c", str(cfg), "--run-root", str(tmp_path),
                 "--run-name", "t"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["summary"]["n_local_models"] == 1

    attack_cfg = tmp_path / "attack.json"
    attack_cfg.write_text(json.dumps({
        "models_dir": str(tmp_path / "t"),
        "per_class": 6, "samples": 8, "max_queries": 200, "pgd_steps": 20,
    }))
    code = main(["attack", "-c", str(attack_cfg), "--run-root", str(tmp_path),
                 "--run-name", "a", "--estimator", "nes", "--start", "seed",
                 "--tune", "off", "--epsilon", "0.35", "--max-queries", "150",
                 "--seed", "9"])
    assert code == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    summary = out["summary"]
    # flag overrides took precedence over the config file
    assert summary["estimator"] == "nes"
    assert summary["start"] == "seed"
    assert summary["epsilon"] == 0.35
    assert summary["max_queries"] == 150
    assert summary["master_seed"] == 9
    frozen = json.loads((tmp_path / "a" / "config.json").read_text())
    assert frozen["max_queries"] == 150

    # queries_per_ae = ledger total / AEs, exactly
    if summary["aes_found"]:
        assert summary["queries_per_ae"] == pytest.approx(
            summary["queries_total"] / summary["aes_found"])


def test_report_command(tmp_path, capsys):
    cfg = write_train_config(tmp_path)
    main(["train", "-c", str(cfg), "--run-root", str(tmp_path),
          "--run-name", "t"])
    attack_cfg = tmp_path / "attack.json"
    attack_cfg.write_text(json.dumps({
        "models_dir": str(tmp_path / "t"), "per_class": 6, "samples": 8,
        "max_queries": 200, "pgd_steps": 20,
    }))
    main(["attack", "-c", str(attack_cfg), "--run-root", str(tmp_path),
          "--run-name", "a1", "--seed", "1"])
    main(["attack", "-c", str(attack_cfg), "--run-root", str(tmp_path),
          "--run-name", "a2", "--seed", "2"])
    capsys.readouterr()
    code = main(["report", str(tmp_path / "a1"), str(tmp_path / "a2"),
                 "--run-root", str(tmp_path), "--run-name", "rep"])
    assert code == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    table = out["summary"]["attack_table"]
    assert len(table) == 1
    assert table[0]["runs"] == 2
    assert (tmp_path / "rep" / "report.md").exists()

    # independent recomputation of the mean/std columns from the raw summaries
    import numpy as np
    vals = [json.loads((tmp_path / d / "summary.json").read_text())
            ["queries_per_seed"] for d in ("a1", "a2")]
    assert table[0]["queries_per_seed_mean"] == pytest.approx(np.mean(vals))
    assert table[0]["queries_per_seed_std"] == pytest.approx(
        np.std(vals, ddof=1))


def test_missing_config_file_exit_3(tmp_path, capsys):
    assert main(["train", "-c", str(tmp_path / "nope.json")]) == EXIT_MISSING


def test_invalid_json_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["train", "-c", str(bad)]) == EXIT_CONFIG


def test_invalid_field_exit_2(tmp_path, capsys):
    cfg = write_train_config(tmp_path, train_fraction=2.0)
    assert main(["train", "-c", str(cfg),
                 "--run-root", str(tmp_path)]) == EXIT_CONFIG


def test_missing_models_dir_exit_3(tmp_path, capsys):
    attack_cfg = tmp_path / "attack.json"
    attack_cfg.write_text(json.dumps({"models_dir": str(tmp_path / "ghost")}))
    assert main(["attack", "-c", str(attack_cfg),
                 "--run-root", str(tmp_path)]) == EXIT_MISSING


def test_run_root_env_var(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ADVQUERY_RUN_ROOT", str(tmp_path / "envroot"))
    cfg = write_train_config(tmp_path)
    assert main(["train", "-c", str(cfg), "--run-name", "t"]) == EXIT_OK
    assert (tmp_path / "envroot" / "t" / "manifest.json").exists()


def test_cli_over_http(tmp_path, capsys, monkeypatch):
    # thin-client HTTP path, exercised against an in-process test server
    import httpx
    from fastapi.testclient import TestClient

    from advquery.service.app import create_app

    client = TestClient(create_app(run_root=tmp_path))

    def post_via_test_server(url, **kwargs):
        kwargs.pop("timeout", None)
        return client.post(url.replace("http://service", ""), **kwargs)

    monkeypatch.setattr(httpx, "post", post_via_test_server)
    cfg = write_train_config(tmp_path)
    code = main(["train", "-c", str(cfg), "--server", "http://service",
                 "--run-name", "remote"])
    assert code == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["run_dir"] == str(tmp_path / "remote")
    assert (tmp_path / "remote" / "report.json").exists()
