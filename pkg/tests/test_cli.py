import csv
import json
import subprocess
import sys

import pytest

from aptshield import cli, gae, intrusion_graph as ig
from aptshield.config import RunConfig

PIPELINE = ["scenario", "preprocess", "train-ae", "encode", "train-clf", "detect", "graph", "eval", "report"]


def run(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("out")
    codes = {cmd: run(cmd, "--calibrated", "--seed", "7", "--out", str(out)) for cmd in PIPELINE}
    run_dir = cli.run_dir_for(RunConfig().with_overrides(seed=7, scenario__calibrated=True), out)
    return out, run_dir, codes


def test_pipeline_exit_codes(pipeline):
    _, _, codes = pipeline
    assert codes == {cmd: 0 for cmd in PIPELINE}


def test_scenario_writes_four_files(pipeline):
    _, run_dir, _ = pipeline
    for name in ("flows.csv", "alerts.jsonl", "topology.json", "ground_truth.json"):
        assert (run_dir / name).is_file()


def test_model_and_logs(pipeline):
    _, run_dir, _ = pipeline
    assert (run_dir / "ae.model").read_text().startswith("APTSHIELD-AE")
    cfg = RunConfig()
    with open(run_dir / "ae_log.csv") as fh:
        assert len(list(csv.DictReader(fh))) == cfg.ae.epochs
    with open(run_dir / "clf_log.csv") as fh:
        assert len(list(csv.DictReader(fh))) == cfg.classifier.epochs


def test_detect_report(pipeline):
    _, run_dir, _ = pipeline
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert "accuracy" in metrics and metrics["accuracy"] > 0.9
    rows = (run_dir / "roc.csv").read_text().splitlines()
    assert rows[1].startswith("0.0,0.0,") and rows[-1].startswith("1.0,1.0,")


def test_graph_outputs(pipeline, capsys):
    out, run_dir, _ = pipeline
    red = json.loads((run_dir / "reduction.json").read_text())
    assert (red["node_reduction_pct"], red["edge_reduction_pct"]) == (16.67, 26.92)
    chain = json.loads((run_dir / "chain.json").read_text())
    starts = [s["start"] for s in chain["stages"]]
    assert starts == sorted(starts) and len(starts) == 5
    assert run("graph", "--calibrated", "--out", str(out)) == 0
    printed = [line.split()[1] for line in capsys.readouterr().out.splitlines() if line.startswith("stage:")]
    assert printed == starts


def test_report_outputs(pipeline):
    _, run_dir, _ = pipeline
    summary = json.loads((run_dir / "summary.json").read_text())
    assert set(summary) >= {"detection", "graph_reduction"}
    for fig in ("roc.png", "confusion.png", "reduction.png", "losses.png"):
        assert (run_dir / fig).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert (run_dir / "summary.csv").read_text().startswith("metric,value\n")


def test_eval_chain_recovery(pipeline):
    _, run_dir, _ = pipeline
    ev = json.loads((run_dir / "eval.json").read_text())
    assert ev["chain"]["exact"] and ev["chain"]["recovered"] == 5


def test_graph_with_gae_scores(pipeline):
    out, run_dir, _ = pipeline
    assert run("graph", "--calibrated", "--gae", "--out", str(out)) == 0
    with open(run_dir / "node_scores.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12
    assert (run_dir / "gae.model").read_text().startswith("APTSHIELD-GAE")


def test_missing_out_dir_is_data_error(tmp_path):
    assert run("scenario", "--out", str(tmp_path / "missing")) == 2


def test_unknown_target_is_data_error(pipeline):
    out, _, _ = pipeline
    assert run("graph", "--calibrated", "--out", str(out), "--target", "nosuch") == 2


def test_usage_and_config_errors(tmp_path):
    assert run("frobnicate") == 1
    assert run("scenario", "--seed", "x") == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[ae]\nepochs = 0\n")
    assert run("scenario", "--config", str(bad), "--out", str(tmp_path)) == 1


def test_missing_model_is_data_error(tmp_path):
    assert run("detect", "--out", str(tmp_path)) == 2


def test_numeric_failure_exit_code(tmp_path):
    cfg = tmp_path / "hot.ini"
    cfg.write_text("[scenario]\nn_background_flows = 50\n[ae]\nlearning_rate = 1e308\nepochs = 3\n")
    for cmd in ("scenario", "preprocess"):
        assert run(cmd, "--config", str(cfg), "--out", str(tmp_path)) == 0
    assert run("train-ae", "--config", str(cfg), "--out", str(tmp_path)) == 3


def test_empty_detect_input(pipeline, tmp_path, caplog):
    out, run_dir, _ = pipeline
    header = (run_dir / "flows.csv").read_text().splitlines()[0]
    empty = tmp_path / "empty.csv"
    empty.write_text(header + "\n")
    assert run("detect", "--calibrated", "--out", str(out), "--flows", str(empty)) == 0
    assert (run_dir / "predictions.csv").read_text().splitlines() == ["row,true,predicted,intrusion_score"]
    assert not (run_dir / "metrics.json").exists()
    assert "no flows" in caplog.text
    # restore the held-out metrics for later tests in this module
    assert run("detect", "--calibrated", "--out", str(out)) == 0


def test_train_gae_on_edgeless_graph(tmp_path):
    run_dir = cli.run_dir_for(RunConfig(), tmp_path)
    run_dir.mkdir()
    g = ig.IntrusionGraph((ig.Node("host:a", "host", "a"), ig.Node("host:b", "host", "b")))
    g.write_json(run_dir / "attribute_graph.json")
    assert run("train-gae", "--out", str(tmp_path)) == 2


def test_train_gae_command(pipeline):
    out, run_dir, _ = pipeline
    assert run("train-gae", "--calibrated", "--out", str(out)) == 0
    assert gae.load_gae(run_dir / "gae.model").a_norm.shape == (12, 12)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "aptshield", "scenario", "--out", str(tmp_path / "nope")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "does not exist" in proc.stderr
