"""Glue between loaded inputs and the models: node preparation, the tabular
feature table for the boosted trees, and the end-to-end evaluation run."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import diagnostics, ensemble, gat, gbdt
from .catalogs import DEFAULT_CATALOGS, STRUCTURAL_FEATURES, Catalogs, FuelClass
from .graph import (ContagionGraph, GraphConfig, assign_sources, build_graph,
                    building_fuel_class, discretize_vegetation, split_dataset)
from .nodes import CANOPY_FIELDS, Node

log = logging.getLogger(__name__)

BURNABLE_CLASSES = tuple(c for c in FuelClass if c.burnable)
TABULAR_FEATURES = (
    STRUCTURAL_FEATURES
    + CANOPY_FIELDS
    + ("slope", "elevation", "area", "volume")
    + tuple(f"fuel_{c.value}" for c in BURNABLE_CLASSES)
)


def prepare_nodes(scenario, cfg: GraphConfig = GraphConfig(),
                  catalogs: Catalogs = DEFAULT_CATALOGS) -> list[Node]:
    """Buildings (input order) followed by vegetation lattice nodes, each with
    fuel class, embedding and terrain attached."""
    default_fc = catalogs.parse_fuel_class(cfg.default_building_fuel)
    buildings = []
    for b in scenario.buildings:
        fc, canopy = building_fuel_class(b, scenario.fuel_grid, cfg.building_fuel_radius,
                                         default_fc)
        buildings.append(replace(b, fuel_class=fc, canopy=canopy))
    veg = discretize_vegetation(scenario.fuel_grid, None, cfg.vegetation_spacing, catalogs,
                                scenario.projection) if scenario.fuel_grid is not None else []
    return [assign_sources(n, scenario.embeddings, scenario.terrain, cfg.embedding_snap)
            for n in buildings + veg]


def tabular_features(nodes) -> np.ndarray:
    """Rows follow ``TABULAR_FEATURES``; missing canopy values stay NaN."""
    rows = []
    for n in nodes:
        onehot = [1.0 if n.fuel_class is c else 0.0 for c in BURNABLE_CLASSES]
        rows.append(list(n.structural) + list(n.canopy)
                    + [n.slope, n.elevation, n.area, n.volume] + onehot)
    return np.array(rows, dtype=float).reshape(-1, len(TABULAR_FEATURES))


@dataclass
class EvalResult:
    graph: ContagionGraph
    masks: dict
    gat_params: gat.GatParams
    gat_history: gat.TrainHistory
    forest: gbdt.Forest
    gbdt_history: list
    stacker: ensemble.StackerCoefficients
    p_gnn: np.ndarray  # per node
    p_xgb: np.ndarray  # per node
    p_stack: np.ndarray  # per node
    metrics: dict
    centrality: diagnostics.CentralityReport
    importance: dict
    quadrants: list  # test buildings, in test-mask order


def train_gnn(graph: ContagionGraph, masks: dict, cfg: gat.TrainConfig):
    t = gat.tensors_from_graph(graph)
    return gat.train(t, graph.labels(), masks, cfg)


def gnn_node_probabilities(graph: ContagionGraph, params: gat.GatParams) -> np.ndarray:
    t = gat.tensors_from_graph(graph)
    return gat._sigmoid(gat.predict_logits(t, params))


def train_gbdt(graph: ContagionGraph, train_idx, cfg: gbdt.GbdtConfig, history=None):
    X = tabular_features([graph.nodes[i] for i in train_idx])
    y = graph.labels()[train_idx]
    return gbdt.fit(X, y, cfg, list(TABULAR_FEATURES), history)


def gbdt_node_probabilities(graph: ContagionGraph, forest: gbdt.Forest) -> np.ndarray:
    return gbdt.predict_proba(forest, tabular_features(graph.nodes))


def evaluate(graph: ContagionGraph, scfg) -> EvalResult:
    """Split, train both specialists, fit the stacker on validation predictions,
    and score everything on the test split."""
    masks = split_dataset(graph, scfg.split.ratios, scfg.split.seed)
    graph = graph.with_masks(masks)
    labels = graph.labels()
    params, hist = train_gnn(graph, masks, scfg.gnn)
    p_gnn = gnn_node_probabilities(graph, params)
    ghist: list = []
    forest = train_gbdt(graph, masks["train"], scfg.gbdt, ghist)
    p_xgb = gbdt_node_probabilities(graph, forest)
    val = masks["val"]
    coeffs = ensemble.fit_stacker(p_gnn[val], p_xgb[val], labels[val],
                                  scfg.stacker.tol, scfg.stacker.max_iter)
    p_stack = np.asarray(ensemble.stack_predict(coeffs, p_gnn, p_xgb))
    test = masks["test"]
    thr = scfg.stacker.threshold
    y = labels[test]
    metrics = {
        "gnn": diagnostics.classification_metrics(y, p_gnn[test], thr),
        "gbdt": diagnostics.classification_metrics(y, p_xgb[test], thr),
        "stacked": diagnostics.classification_metrics(y, p_stack[test], thr),
    }
    centrality = diagnostics.outcome_centrality_report(graph, test, y, p_gnn[test], thr)
    quadrants = ensemble.triage_all(p_gnn[test], p_xgb[test], thr)
    return EvalResult(graph, masks, params, hist, forest, ghist, coeffs, p_gnn, p_xgb, p_stack,
                      metrics, centrality, gat.attention_feature_importance(params), quadrants)
