"""Command-line pipeline: scenario -> preprocess -> train -> detect -> graph -> report.

All artifacts of one configuration live in ``<out>/run-<hash>/``, where the
hash covers the effective settings after flag overrides. Each command reads
what earlier commands wrote there, so a full run is just the commands in
order with the same config and seed.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import detect, gae, ingest, intrusion_graph, scenario, sparse_ae
from .config import RunConfig, load_config, resolve_path
from .errors import AptShieldError, ConfigError, DataError, NotFoundError

log = logging.getLogger("aptshield")

FEATURES_CSV = "features.csv"
PREPROCESS_JSON = "preprocess.json"
AE_MODEL = "ae.model"
AE_LOG = "ae_log.csv"
CODES_CSV = "codes.csv"
CLF_JSON = "classifier.json"
CLF_LOG = "clf_log.csv"
PREDICTIONS_CSV = "predictions.csv"
METRICS_JSON = "metrics.json"
ROC_CSV = "roc.csv"
GRAPH_JSON = "attribute_graph.json"
GRAPH_EDGES = "attribute_graph.edges"
CHAIN_JSON = "chain.json"
SUBGRAPH_JSON = "chain_subgraph.json"
SUBGRAPH_EDGES = "chain_subgraph.edges"
REDUCTION_JSON = "reduction.json"
NODE_SCORES_CSV = "node_scores.csv"
GAE_MODEL = "gae.model"
GAE_LOG = "gae_log.csv"
EVAL_JSON = "eval.json"
SUMMARY_JSON = "summary.json"
SUMMARY_CSV = "summary.csv"


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- file helpers


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise NotFoundError(f"{path} does not exist; run the command that produces it first")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from None


def _write_log(rows, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for epoch, loss in rows:
            w.writerow([epoch, repr(float(loss))])


def _read_log(path: Path) -> list[tuple[int, float]]:
    if not path.exists():
        return []
    with open(path, encoding="utf-8", newline="") as fh:
        return [(int(r["epoch"]), float(r["loss"])) for r in csv.DictReader(fh)]


def _write_matrix_csv(path: Path, prefix: str, split: list[str], labels: list[str], m: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "split", "label"] + [f"{prefix}{j}" for j in range(m.shape[1])])
        for i in range(m.shape[0]):
            w.writerow([i, split[i], labels[i]] + [repr(float(x)) for x in m[i]])


def _read_matrix_csv(path: Path) -> tuple[list[str], list[str], np.ndarray]:
    if not path.exists():
        raise NotFoundError(f"{path} does not exist; run the command that produces it first")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path} is empty")
    width = len(rows[0]) - 3
    split, labels, values = [], [], []
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != width + 3:
            raise DataError(f"{path}:{lineno}: expected {width + 3} fields, got {len(r)}")
        split.append(r[1])
        labels.append(r[2])
        try:
            values.append([float(x) for x in r[3:]])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric feature value") from None
    return split, labels, np.array(values, dtype=np.float64).reshape(len(values), width)


def _select(split: list[str], which: str) -> np.ndarray:
    return np.array([i for i, s in enumerate(split) if s == which], dtype=int)


def _load_ae(run: Path) -> sparse_ae.SparseAEModel:
    path = run / AE_MODEL
    if not path.exists():
        raise NotFoundError(f"no autoencoder model at {path}; run train-ae first")
    return sparse_ae.load_ae(path)


def _load_classifier(run: Path) -> detect.LinearClassifier:
    return detect.LinearClassifier.from_json(_read_json(run / CLF_JSON))


def _schema(cfg: RunConfig) -> ingest.FlowSchema:
    return ingest.FlowSchema.load(cfg.paths.schema) if cfg.paths.schema else scenario.FLOW_SCHEMA


# -------------------------------------------------------------------- commands


def cmd_scenario(cfg: RunConfig, run: Path, args) -> int:
    sc = scenario.generate(cfg.scenario_config())
    paths = scenario.write_scenario(sc, run)
    for key in scenario.SCENARIO_FILES:
        print(paths[key])
    return 0


def cmd_preprocess(cfg: RunConfig, run: Path, args) -> int:
    ds = ingest.load_flow_csv(resolve_path(cfg.paths.flows, run, scenario.SCENARIO_FILES["flows"]), _schema(cfg))
    if len(ds) < 2:
        raise DataError("preprocessing needs at least two flows to split")
    train_idx, test_idx = detect.stratified_split(ds.labels, cfg.preprocess.test_fraction, cfg.seed)
    fm_train = ingest.fit_normalize(ingest.encode_features(ds.subset(train_idx)))
    fm_all = ingest.apply_normalize(ingest.encode_features(ds, fm_train.column_meta), fm_train.norm_params)
    split = ["train"] * len(ds)
    for i in test_idx:
        split[i] = "test"
    _write_matrix_csv(run / FEATURES_CSV, "f", split, ds.labels, fm_all.matrix)
    _dump_json(
        {
            "layout": [{"source": m.source, "category": m.category} for m in fm_train.column_meta],
            "norm_params": fm_train.norm_params.tolist(),
            "n_train": int(train_idx.size),
            "n_test": int(test_idx.size),
            "test_fraction": cfg.preprocess.test_fraction,
        },
        run / PREPROCESS_JSON,
    )
    print(f"{len(ds)} flows -> {fm_all.matrix.shape[1]} features ({train_idx.size} train, {test_idx.size} test)")
    return 0


def cmd_train_ae(cfg: RunConfig, run: Path, args) -> int:
    split, _, X = _read_matrix_csv(run / FEATURES_CSV)
    meta = _read_json(run / PREPROCESS_JSON)
    Xtr = X[_select(split, "train")]
    if cfg.ae.d_hidden >= X.shape[1]:
        log.warning("d_hidden=%d is not smaller than the input width %d", cfg.ae.d_hidden, X.shape[1])
    model = sparse_ae.train_ae(Xtr, cfg.sparsity_config(), cfg.ae.d_hidden, cfg.ae.epochs,
                               cfg.ae.batch_size or None, cfg.ae.learning_rate, cfg.seed)
    model.norm_params = np.array(meta["norm_params"], dtype=np.float64)
    sparse_ae.save_ae(model, run / AE_MODEL)
    _write_log(model.training_log, run / AE_LOG)
    print(f"autoencoder {model.d_in}->{model.d_hidden}, final loss {model.training_log[-1][1]:.6f}")
    return 0


def cmd_encode(cfg: RunConfig, run: Path, args) -> int:
    split, labels, X = _read_matrix_csv(run / FEATURES_CSV)
    model = _load_ae(run)
    codes = sparse_ae.encode(model, X) if X.shape[0] else np.zeros((0, model.d_hidden))
    _write_matrix_csv(run / CODES_CSV, "z", split, labels, codes)
    print(f"encoded {codes.shape[0]} rows into {codes.shape[1]} latent features")
    return 0


def cmd_train_clf(cfg: RunConfig, run: Path, args) -> int:
    split, labels, Z = _read_matrix_csv(run / CODES_CSV)
    tr = _select(split, "train")
    clf = detect.train_classifier(Z[tr], [labels[i] for i in tr], cfg.classifier.epochs,
                                  cfg.classifier.learning_rate, cfg.seed)
    _dump_json(clf.to_json(), run / CLF_JSON)
    _write_log(clf.training_log, run / CLF_LOG)
    print(f"classifier over {len(clf.class_labels)} classes, final loss {clf.training_log[-1][1]:.6f}")
    return 0


def _detect_inputs(cfg: RunConfig, run: Path, args, model) -> tuple[list[str], np.ndarray]:
    """Held-out rows of the preprocessed features, or an external flow file."""
    if args.flows:
        ds = ingest.load_flow_csv(args.flows, _schema(cfg))
        if len(ds) == 0:
            return [], np.zeros((0, model.d_in))
        meta = _read_json(run / PREPROCESS_JSON)
        layout = [ingest.ColumnMeta(m["source"], m["category"]) for m in meta["layout"]]
        fm = ingest.apply_normalize(ingest.encode_features(ds, layout), model.norm_params)
        return ds.labels, fm.matrix
    split, labels, X = _read_matrix_csv(run / FEATURES_CSV)
    te = _select(split, "test")
    return [labels[i] for i in te], X[te]


def cmd_detect(cfg: RunConfig, run: Path, args) -> int:
    model = _load_ae(run)
    clf = _load_classifier(run)
    true, X = _detect_inputs(cfg, run, args, model)
    with open(run / PREDICTIONS_CSV, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "true", "predicted", "intrusion_score"])
        if X.shape[0] == 0:
            log.warning("no flows to classify; wrote empty predictions and skipped metrics")
            for stale in (METRICS_JSON, ROC_CSV):
                (run / stale).unlink(missing_ok=True)
            return 0
        pred, probs = detect.predict(clf, sparse_ae.encode(model, X))
        scores = detect.intrusion_scores(clf, probs)
        for i, (t, p, s) in enumerate(zip(true, pred, scores)):
            w.writerow([i, t, p, repr(float(s))])
    report = detect.evaluate(pred, true, scores)
    report.write_json(run / METRICS_JSON)
    if report.roc_points is None:
        log.warning("held-out flows contain only one side of normal/intrusion; ROC omitted")
    report.write_roc_csv(run / ROC_CSV)
    auc = "n/a" if report.auc is None else f"{report.auc:.4f}"
    print(f"accuracy {report.accuracy:.4f}  auc {auc}  ({report.n_samples} flows)")
    return 0


def _build_graph(cfg: RunConfig, run: Path) -> intrusion_graph.IntrusionGraph:
    alerts = ingest.load_alerts(resolve_path(cfg.paths.alerts, run, scenario.SCENARIO_FILES["alerts"]))
    topo_path = resolve_path(cfg.paths.topology, run, scenario.SCENARIO_FILES["topology"])
    topo = intrusion_graph.Topology.load(topo_path)
    return intrusion_graph.build_attribute_graph(
        alerts, topo, window_seconds=cfg.graph.window_seconds, with_permissions=cfg.graph.with_permissions,
        link_max_severity=cfg.graph.link_max_severity,
    )


def _target_host(cfg: RunConfig, run: Path, args) -> str:
    if args.target:
        return args.target
    if cfg.graph.target:
        return cfg.graph.target
    truth = resolve_path(cfg.paths.truth, run, scenario.SCENARIO_FILES["truth"])
    if truth.exists():
        return scenario.GroundTruth.load(truth).target_host
    raise ConfigError("no target host: pass --target, set [graph] target, or provide ground truth")


def _train_graph_gae(cfg: RunConfig, run: Path, g: intrusion_graph.IntrusionGraph) -> gae.GAEModel:
    data = intrusion_graph.graph_to_gae_input(g)
    model = gae.train_gae(data, cfg.gae.hidden, cfg.gae.embedding, cfg.gae.epochs, cfg.gae.learning_rate, cfg.seed)
    gae.save_gae(model, run / GAE_MODEL)
    _write_log(model.training_log, run / GAE_LOG)
    return model


def cmd_graph(cfg: RunConfig, run: Path, args) -> int:
    g = _build_graph(cfg, run)
    target = _target_host(cfg, run, args)
    chain = intrusion_graph.extract_evidence_chain(g, target)
    sub = intrusion_graph.chain_subgraph(g, chain)
    report = intrusion_graph.reduction_report(g, sub)
    g.write_json(run / GRAPH_JSON)
    (run / GRAPH_EDGES).write_text(g.edge_list(), encoding="utf-8")
    _dump_json(chain.to_json(), run / CHAIN_JSON)
    sub.write_json(run / SUBGRAPH_JSON)
    (run / SUBGRAPH_EDGES).write_text(sub.edge_list(), encoding="utf-8")
    _dump_json(report.to_json(), run / REDUCTION_JSON)

    if args.gae or cfg.graph.gae:
        model = _train_graph_gae(cfg, run, g)
        data = intrusion_graph.graph_to_gae_input(g)
        scores = gae.node_anomaly_scores(model, data)
        with open(run / NODE_SCORES_CSV, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node", "kind", "anomaly_score"])
            for node, s in zip(g.nodes, scores):
                w.writerow([node.id, node.kind, repr(float(s))])

    for s in chain.stages:
        print(f"{s.node_id}  {ingest.format_timestamp(s.start)}  {s.category}: {s.src_host} -> {s.dst_host}")
    r = report.to_json()
    print(f"nodes {r['nodes_before']} -> {r['nodes_after']} ({r['node_reduction_pct']:.2f}%), "
          f"edges {r['edges_before']} -> {r['edges_after']} ({r['edge_reduction_pct']:.2f}%)")
    return 0


def cmd_train_gae(cfg: RunConfig, run: Path, args) -> int:
    path = run / GRAPH_JSON
    g = intrusion_graph.IntrusionGraph.from_json(_read_json(path)) if path.exists() else _build_graph(cfg, run)
    model = _train_graph_gae(cfg, run, g)
    print(f"graph autoencoder on {len(g.nodes)} nodes, final loss {model.training_log[-1][1]:.6f}")
    return 0


def _read_predictions(path: Path) -> tuple[list[str], list[str], list[float]]:
    if not path.exists():
        raise NotFoundError(f"{path} does not exist; run detect first")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [r["true"] for r in rows], [r["predicted"] for r in rows], [float(r["intrusion_score"]) for r in rows]


def cmd_eval(cfg: RunConfig, run: Path, args) -> int:
    """Score detections and the evidence chain against ground truth."""
    out: dict = {}
    pred_path = run / PREDICTIONS_CSV
    if pred_path.exists():
        true, pred, scores = _read_predictions(pred_path)
        if true:
            out["detection"] = detect.evaluate(pred, true, scores).to_json()
    truth_path = resolve_path(cfg.paths.truth, run, scenario.SCENARIO_FILES["truth"])
    chain_path = run / CHAIN_JSON
    if truth_path.exists() and chain_path.exists():
        truth = scenario.GroundTruth.load(truth_path)
        chain = _read_json(chain_path)
        want = [(s.category, s.src, s.dst) for s in truth.stages]
        got = [(s["category"], s["src_host"], s["dst_host"]) for s in chain["stages"]]
        it = iter(got)
        in_order = all(any(w == g for g in it) for w in want)
        out["chain"] = {
            "truth_stages": len(want),
            "chain_stages": len(got),
            "recovered": sum(1 for w in want if w in got),
            "in_order": in_order,
            "exact": got == want,
        }
    if not out:
        raise NotFoundError("nothing to evaluate: run detect and/or graph first")
    _dump_json(out, run / EVAL_JSON)
    if "detection" in out:
        print(f"detection accuracy {out['detection']['accuracy']:.4f}")
    if "chain" in out:
        c = out["chain"]
        print(f"chain recovered {c['recovered']}/{c['truth_stages']} stages, in order: {c['in_order']}")
    return 0


def cmd_report(cfg: RunConfig, run: Path, args) -> int:
    from . import plotting

    metrics_path, reduction_path = run / METRICS_JSON, run / REDUCTION_JSON
    if not metrics_path.exists() and not reduction_path.exists():
        raise NotFoundError(f"neither {METRICS_JSON} nor {REDUCTION_JSON} exists in {run}")
    summary: dict = {"run": run.name, "seed": cfg.seed}
    rows: list[tuple[str, object]] = []
    if metrics_path.exists():
        metrics = _read_json(metrics_path)
        summary["detection"] = metrics
        rows += [("accuracy", metrics["accuracy"]), ("auc", metrics["auc"]), ("n_samples", metrics["n_samples"])]
        if metrics.get("roc_points"):
            plotting.plot_roc(metrics["roc_points"], metrics["auc"], run / "roc.png")
        plotting.plot_confusion(metrics["labels"], metrics["confusion"], run / "confusion.png")
    if reduction_path.exists():
        red = _read_json(reduction_path)
        summary["graph_reduction"] = red
        rows += [(k, red[k]) for k in sorted(red)]
        plotting.plot_reduction((red["nodes_before"], red["nodes_after"]),
                                (red["edges_before"], red["edges_after"]), run / "reduction.png")
    logs = {"autoencoder": _read_log(run / AE_LOG), "classifier": _read_log(run / CLF_LOG),
            "graph autoencoder": _read_log(run / GAE_LOG)}
    if any(logs.values()):
        plotting.plot_losses(logs, run / "losses.png")
    _dump_json(summary, run / SUMMARY_JSON)
    with open(run / SUMMARY_CSV, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for key, value in rows:
            w.writerow([key, "" if value is None else (repr(value) if isinstance(value, float) else value)])
    print(run / SUMMARY_JSON)
    return 0


COMMANDS = {
    "scenario": cmd_scenario,
    "preprocess": cmd_preprocess,
    "train-ae": cmd_train_ae,
    "encode": cmd_encode,
    "train-clf": cmd_train_clf,
    "detect": cmd_detect,
    "train-gae": cmd_train_gae,
    "graph": cmd_graph,
    "eval": cmd_eval,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aptshield", description="Flow-based intrusion detection and APT evidence chains.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int, help="overrides [run] seed")
        p.add_argument("--out", default=".", help="existing directory that holds run directories")
        p.add_argument("--calibrated", action="store_true", default=None,
                       help="overrides [scenario] calibrated; part of the run hash, so pass it to every command")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "detect":
            p.add_argument("--flows", help="classify this flow CSV instead of the held-out split")
        if name == "graph":
            p.add_argument("--target", help="host the evidence chain must reach")
            p.add_argument("--gae", action="store_true", help="also score nodes with a graph autoencoder")
    return parser


def _effective_config(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, scenario__calibrated=args.calibrated)


def run_dir_for(cfg: RunConfig, out) -> Path:
    return Path(out) / f"run-{cfg.digest()}"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"aptshield: usage error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _effective_config(args)
        out = Path(args.out)
        if not out.is_dir():
            raise NotFoundError(f"output directory {out} does not exist")
        run = run_dir_for(cfg, out)
        run.mkdir(exist_ok=True)
        (run / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
        return COMMANDS[args.command](cfg, run, args)
    except AptShieldError as exc:
        print(f"aptshield: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"aptshield: DataError: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
