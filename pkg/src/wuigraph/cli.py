"""Command-line interface.

Exit status: 0 on success, 1 when an input, flag or config fails validation,
2 when a stage fails at run time. ``--threads`` only changes how graph
construction is scheduled, never its output.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diagnostics, ensemble, gat, gbdt, io, pipeline, plotting, synth
from .config import ConfigError, ScenarioConfig, load_config, write_config
from .graph import build_graph, split_dataset

log = logging.getLogger("wuigraph")

FIGURES = ("confusion_matrix.png", "feature_importance.png", "triage_map.png",
           "training_history.png")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- shared helpers ---------------------------------------------------------------

def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    return cfg.with_seed(args.seed) if args.seed is not None else cfg


def _threads(args) -> int:
    if args.threads < 1:
        raise UsageError(f"--threads: must be >= 1, got {args.threads}")
    return args.threads


def _graph_from_scenario(directory, cfg: ScenarioConfig, threads: int):
    catalogs = cfg.resolved_catalogs()
    scenario = io.load_scenario(directory, catalogs)
    nodes = pipeline.prepare_nodes(scenario, cfg.graph, catalogs)
    return build_graph(nodes, cfg.physics, cfg.graph, catalogs, threads, cfg.config_hash())


def _with_masks(graph, cfg: ScenarioConfig):
    if graph.masks:
        return graph
    return graph.with_masks(split_dataset(graph, cfg.split.ratios, cfg.split.seed))


def _read_bundle_or_empty(path, cfg: ScenarioConfig) -> io.ModelBundle:
    if path.exists():
        return io.read_bundle(path, cfg.config_hash())
    return io.ModelBundle(None, None, None, cfg.config_hash())


def _require(bundle: io.ModelBundle, path, *parts):
    missing = [p for p in parts if getattr(bundle, p) is None]
    if missing:
        raise UsageError(f"{path}: bundle lacks {', '.join(missing)}; train it first")


def _predict(graph, bundle: io.ModelBundle):
    p_gnn = pipeline.gnn_node_probabilities(graph, bundle.gat)
    p_xgb = pipeline.gbdt_node_probabilities(graph, bundle.gbdt)
    p_stack = np.asarray(ensemble.stack_predict(bundle.stacker, p_gnn, p_xgb), dtype=float)
    return p_gnn, p_xgb, p_stack


def graph_summary(graph, prune: float) -> dict:
    p = graph.p_total
    return {
        "nodes": graph.n_nodes,
        "buildings": int(len(graph.building_idx)),
        "edges": graph.n_edges,
        "candidate_pairs": graph.n_candidates,
        "min_p_total": float(p.min()) if len(p) else None,
        "max_p_total": float(p.max()) if len(p) else None,
        "prune_threshold": prune,
        "all_edges_above_threshold": bool(np.all(p >= prune)),
    }


def _print_kv(d: dict) -> None:
    for k, v in d.items():
        print(f"{k}\t{v}")


# --- subcommands --------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _config(args)
    scfg = synth.SynthConfig(seed=args.seed if args.seed is not None else 0)
    if args.n_buildings is not None:
        scfg = replace(scfg, n_buildings=args.n_buildings)
    truth = synth.generate(scfg, args.out, cfg.physics, cfg.graph, _threads(args))
    _print_kv({"out": args.out, "buildings": scfg.n_buildings,
               "prevalence": round(truth["prevalence"], 4),
               "bayes_auc": round(truth["bayes_auc"], 4)})
    return 0


def cmd_build_graph(args) -> int:
    cfg = _config(args)
    graph = _graph_from_scenario(args.scenario, cfg, _threads(args))
    io.write_graph(graph, args.out)
    summary = graph_summary(graph, cfg.graph.prune_threshold)
    _print_kv(summary)
    if not summary["all_edges_above_threshold"]:
        raise RuntimeError("retained an edge below the prune threshold")
    return 0


def cmd_train_gnn(args) -> int:
    cfg = _config(args)
    graph = _with_masks(io.read_graph(args.graph), cfg)
    bundle = _read_bundle_or_empty(args.bundle, cfg)
    params, hist = pipeline.train_gnn(graph, graph.masks, cfg.gnn)
    io.write_bundle(replace(bundle, gat=params), args.bundle)
    if args.history:
        io.write_json({"train_loss": hist.train_loss, "val_loss": hist.val_loss,
                       "lr": hist.lr, "best_epoch": hist.best_epoch,
                       "stopped_early": hist.stopped_early}, args.history)
    _print_kv({"epochs": len(hist.train_loss), "best_epoch": hist.best_epoch,
               "best_val_loss": hist.val_loss[hist.best_epoch]})
    return 0


def cmd_train_gbdt(args) -> int:
    cfg = _config(args)
    graph = _with_masks(io.read_graph(args.graph), cfg)
    bundle = _read_bundle_or_empty(args.bundle, cfg)
    history: list = []
    forest = pipeline.train_gbdt(graph, graph.masks["train"], cfg.gbdt, history)
    io.write_bundle(replace(bundle, gbdt=forest), args.bundle)
    if args.history:
        io.write_json({"train_log_loss": history}, args.history)
    _print_kv({"trees": len(forest.trees), "final_train_log_loss": history[-1]})
    return 0


def cmd_stack(args) -> int:
    cfg = _config(args)
    graph = _with_masks(io.read_graph(args.graph), cfg)
    bundle = io.read_bundle(args.bundle, cfg.config_hash())
    _require(bundle, args.bundle, "gat", "gbdt")
    p_gnn = pipeline.gnn_node_probabilities(graph, bundle.gat)
    p_xgb = pipeline.gbdt_node_probabilities(graph, bundle.gbdt)
    val = graph.masks["val"]
    coeffs = ensemble.fit_stacker(p_gnn[val], p_xgb[val], graph.labels()[val],
                                  cfg.stacker.tol, cfg.stacker.max_iter)
    io.write_bundle(replace(bundle, stacker=coeffs), args.bundle)
    _print_kv(coeffs.to_dict())
    return 0


def cmd_predict(args) -> int:
    cfg = _config(args)
    graph = _with_masks(io.read_graph(args.graph), cfg)
    bundle = io.read_bundle(args.bundle, cfg.config_hash())
    _require(bundle, args.bundle, "gat", "gbdt", "stacker")
    rows = io.prediction_rows(graph, *_predict(graph, bundle))
    io.write_predictions(args.out, rows)
    _print_kv({"buildings": len(rows), "out": args.out})
    return 0


def _selected(preds, split: str):
    return [r for r in preds if split == "all" or r["split"] == split]


def cmd_triage(args) -> int:
    cfg = _config(args)
    preds = _selected(io.read_predictions(args.predictions), args.split)
    if not preds:
        raise UsageError(f"{args.predictions}: no buildings in split {args.split!r}")
    quads = ensemble.triage_all([r["p_gnn"] for r in preds], [r["p_xgb"] for r in preds],
                                cfg.stacker.threshold)
    rows = [(r["id"], r["lon"], r["lat"], r["p_gnn"], r["p_xgb"], r["p_stack"], q.value)
            for r, q in zip(preds, quads)]
    out = Path(args.out)
    io.write_triage_csv(out.with_suffix(".csv"), rows)
    io.write_triage_geojson(out.with_suffix(".geojson"), rows)
    for k, v in ensemble.quadrant_counts(quads).items():
        print(f"{getattr(k, 'value', k)}\t{v}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = _config(args)
    graph = io.read_graph(args.graph)
    preds = _selected(io.read_predictions(args.predictions), args.split)
    preds = [r for r in preds if r["label"] is not None]
    if not preds:
        raise UsageError(f"{args.predictions}: no labelled buildings in split {args.split!r}")
    thr = cfg.stacker.threshold
    y = np.array([r["label"] for r in preds])
    metrics = {name: diagnostics.classification_metrics(y, [r[col] for r in preds], thr)
               for name, col in (("gnn", "p_gnn"), ("gbdt", "p_xgb"), ("stacked", "p_stack"))}
    idx = np.array([graph.index_of(r["id"]) for r in preds], dtype=np.int64)
    cent = diagnostics.outcome_centrality_report(graph, idx, y, [r["p_gnn"] for r in preds], thr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json({k: m.to_dict() for k, m in metrics.items()}, out / "metrics.json")
    io.write_json(cent.to_dict(), out / "centrality.json")
    for name, m in metrics.items():
        io.write_confusion_csv(out / f"confusion_{name}.csv", m)
        print(diagnostics.format_metrics_table(name, m))
        print()
    print(diagnostics.format_centrality_table(cent))
    return 0


def run_eval_all(out, cfg: ScenarioConfig, scenario=None, seed: int = 0, threads: int = 1):
    """Full pipeline into ``out``. Without a scenario directory the default
    synthetic scenario for ``seed`` is generated under ``out/scenario``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if scenario is None:
        scenario = out / "scenario"
        synth.generate(synth.SynthConfig(seed=seed), scenario, cfg.physics, cfg.graph, threads)
    write_config(cfg, out / "config.json")
    graph = _graph_from_scenario(scenario, cfg, threads)
    result = pipeline.evaluate(graph, cfg)
    graph = result.graph
    io.write_graph(graph, out / "graph.json")
    bundle = io.ModelBundle(result.gat_params, result.forest, result.stacker, cfg.config_hash())
    io.write_bundle(bundle, out / "bundle.json")

    io.write_predictions(out / "predictions.csv",
                         io.prediction_rows(graph, result.p_gnn, result.p_xgb, result.p_stack))
    test = result.masks["test"]
    triage = io.triage_rows([graph.nodes[i] for i in test], result.p_gnn[test],
                            result.p_xgb[test], result.p_stack[test], result.quadrants)
    io.write_triage_csv(out / "triage.csv", triage)
    io.write_triage_geojson(out / "triage.geojson", triage)
    for name, m in result.metrics.items():
        io.write_confusion_csv(out / f"confusion_{name}.csv", m)
    gain = gbdt.gain_importance(result.forest)
    io.write_json({
        "metrics": {k: m.to_dict() for k, m in result.metrics.items()},
        "stacker": result.stacker.to_dict(),
        "gat_importance": result.importance,
        "gbdt_gain": dict(zip(pipeline.TABULAR_FEATURES, gain)),
        "triage_counts": {getattr(k, "value", k): v
                          for k, v in ensemble.quadrant_counts(result.quadrants).items()},
        "graph": graph_summary(graph, cfg.graph.prune_threshold),
        "gat_training": {"epochs": len(result.gat_history.train_loss),
                         "best_epoch": result.gat_history.best_epoch},
    }, out / "metrics.json")
    io.write_json(result.centrality.to_dict(), out / "centrality.json")

    fig = out / "figures"
    fig.mkdir(exist_ok=True)
    plotting.confusion_matrix(result.metrics["stacked"], fig / FIGURES[0],
                              "Stacked ensemble (test)")
    plotting.feature_importance(result.importance, gain, pipeline.TABULAR_FEATURES,
                                fig / FIGURES[1])
    plotting.triage_map(triage, fig / FIGURES[2])
    plotting.training_history(result.gat_history, result.gbdt_history, fig / FIGURES[3])
    return result


def cmd_eval_all(args) -> int:
    cfg = _config(args)
    seed = args.seed if args.seed is not None else 0
    result = run_eval_all(args.out, cfg, args.scenario, seed, _threads(args))
    for name, m in result.metrics.items():
        print(diagnostics.format_metrics_table(name, m))
        print()
    c = result.stacker
    print(f"stacker\tbeta0={c.beta0:.4f}\tbeta_gnn={c.beta_gnn:.4f}\tbeta_xgb={c.beta_xgb:.4f}")
    print()
    print(diagnostics.format_centrality_table(result.centrality))
    return 0


# --- parser ---------------------------------------------------------------------------

def _global_flags(parser, suppress: bool) -> None:
    def default(v):
        return argparse.SUPPRESS if suppress else v

    parser.add_argument("--seed", type=int, default=default(None),
                        help="seed for every stochastic stage (default: config values)")
    parser.add_argument("--config", type=Path, default=default(None),
                        help="scenario configuration JSON")
    parser.add_argument("--threads", type=int, default=default(1),
                        help="worker processes for graph construction")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False))


def build_parser() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand; the subcommand
    # copies suppress their defaults so they never mask an earlier value.
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    p = _Parser(prog="wuigraph",
                description="Wildfire contagion graphs, GAT/GBDT damage models and triage.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    sp = add("synth", cmd_synth, "write a synthetic scenario directory")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--n-buildings", type=int)

    sp = add("build-graph", cmd_build_graph, "build the contagion graph for a scenario")
    sp.add_argument("--scenario", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)

    for name, func, what in (("train-gnn", cmd_train_gnn, "graph attention network"),
                             ("train-gbdt", cmd_train_gbdt, "boosted tree model")):
        sp = add(name, func, f"train the {what} and store it in a model bundle")
        sp.add_argument("--graph", type=Path, required=True)
        sp.add_argument("--bundle", type=Path, required=True)
        sp.add_argument("--history", type=Path, help="write the training curve as JSON")

    sp = add("stack", cmd_stack, "fit the stacker on validation predictions")
    sp.add_argument("--graph", type=Path, required=True)
    sp.add_argument("--bundle", type=Path, required=True)

    sp = add("predict", cmd_predict, "write per-building probabilities")
    sp.add_argument("--graph", type=Path, required=True)
    sp.add_argument("--bundle", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)

    sp = add("triage", cmd_triage, "assign mitigation quadrants (CSV and GeoJSON)")
    sp.add_argument("--predictions", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True, help="output stem")
    sp.add_argument("--split", default="test", choices=("train", "val", "test", "all"))

    sp = add("diagnose", cmd_diagnose, "metrics and centrality by confusion outcome")
    sp.add_argument("--graph", type=Path, required=True)
    sp.add_argument("--predictions", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test", "all"))

    sp = add("eval-all", cmd_eval_all, "run the full pipeline and write every artifact")
    sp.add_argument("--scenario", type=Path,
                    help="scenario directory (default: generate the synthetic one)")
    sp.add_argument("--out", type=Path, required=True)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
