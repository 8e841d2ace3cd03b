import json

from click.testing import CliRunner

from parksearch.cli import main
from parksearch.engine import read_results


def test_cli_end_to_end(tmp_path):
    runner = CliRunner()
    graph_path = tmp_path / "grid.json"
    result = runner.invoke(main, ["gen-scenario", "grid-demo", "--rows", "4", "--cols", "4",
                                  "--resources", "8", "--out", str(graph_path)])
    assert result.exit_code == 0, result.output
    assert graph_path.exists()

    cfg_path = tmp_path / "demo.json"
    result = runner.invoke(main, [
        "gen-scenario", "single",
        "--graph", str(graph_path),
        "--destination", "0.0005", "0.0005",
        "--start-node", "n0000",
        "--agents", "3",
        "--planner", "rpl",
        "--seed", "2",
        "--out", str(cfg_path),
    ])
    assert result.exit_code == 0, result.output
    config = json.loads(cfg_path.read_text())
    assert config["destinations"]["agents"] == 3

    out_dir = tmp_path / "results"
    result = runner.invoke(main, ["simulate", str(cfg_path), "--out", str(out_dir)])
    assert result.exit_code == 0, result.output
    results_file = out_dir / "demo.results.csv"
    assert results_file.exists()
    records = read_results(results_file)
    assert len(records) == 3

    result = runner.invoke(main, ["summarize", str(out_dir)])
    assert result.exit_code == 0, result.output
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["agents"] == 3
    assert "rpl" in summary["per_planner"]


def test_cli_batch(tmp_path):
    runner = CliRunner()
    graph_path = tmp_path / "grid.json"
    runner.invoke(main, ["gen-scenario", "grid-demo", "--rows", "4", "--cols", "4",
                         "--resources", "8", "--out", str(graph_path)])
    cfg_dir = tmp_path / "configs"
    cfg_dir.mkdir()
    for seed in (1, 2):
        runner.invoke(main, [
            "gen-scenario", "single",
            "--graph", str(graph_path),
            "--destination", "0.0005", "0.0005",
            "--start-node", "n0000",
            "--agents", "2",
            "--seed", str(seed),
            "--out", str(cfg_dir / f"s{seed}.json"),
        ])
    out_dir = tmp_path / "batch-out"
    result = runner.invoke(main, ["batch", str(cfg_dir), "--out", str(out_dir)])
    assert result.exit_code == 0, result.output
    assert (out_dir / "summary.json").exists()
    assert len(list(out_dir.glob("*.results.csv"))) == 2


def test_cli_batch_reports_failures(tmp_path):
    runner = CliRunner()
    cfg_dir = tmp_path / "configs"
    cfg_dir.mkdir()
    (cfg_dir / "broken.json").write_text(json.dumps({"graph": "missing.json"}))
    out_dir = tmp_path / "out"
    result = runner.invoke(main, ["batch", str(cfg_dir), "--out", str(out_dir)])
    assert result.exit_code == 1
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["failed"]


def test_cli_rejects_bad_config(tmp_path):
    runner = CliRunner()
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"graph": "missing.json"}))
    result = runner.invoke(main, ["simulate", str(bad)])
    assert result.exit_code != 0


def test_cli_gen_data_driven(tmp_path):
    runner = CliRunner()
    graph_path = tmp_path / "grid.json"
    runner.invoke(main, ["gen-scenario", "grid-demo", "--out", str(graph_path)])
    trace_path = tmp_path / "trace.csv"
    trace_path.write_text("resource_id,time_s,state\nr000,10,occupied\n")
    cfg_path = tmp_path / "dd.json"
    result = runner.invoke(main, [
        "gen-scenario", "data-driven",
        "--graph", str(graph_path),
        "--trace", str(trace_path),
        "--start-node", "n0000",
        "--out", str(cfg_path),
    ])
    assert result.exit_code == 0, result.output
    config = json.loads(cfg_path.read_text())
    assert config["destinations"]["mode"] == "data_driven"
