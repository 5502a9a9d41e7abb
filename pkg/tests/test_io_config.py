from __future__ import annotations

import json
import logging

import numpy as np
import pytest

from wuigraph import gat, gbdt, io
from wuigraph.config import ConfigError, ScenarioConfig, load_config, write_config
from wuigraph.ensemble import StackerCoefficients
from wuigraph.graph import GraphConfig, build_graph, split_dataset
from wuigraph.io import BundleError, ModelBundle, SchemaError
from wuigraph.physics import Environment
from wuigraph.pipeline import prepare_nodes
from wuigraph.spatial import LocalProjection
from wuigraph.synth import SynthConfig, generate

HEADER = "id,lon,lat,area_m2,building_type,roof,siding,eaves,vent_screen,window,deck_porch,fence"
ROW = "wood,wood,wood,no screen,single-pane,wood,combustible"
PROJ = LocalProjection(-118.14, 34.19)


@pytest.fixture(scope="module")
def small_scenario(tmp_path_factory):
    d = tmp_path_factory.mktemp("scenario")
    generate(SynthConfig(n_buildings=40, extent=300.0, margin=40.0, seed=9), d)
    return d


@pytest.fixture(scope="module")
def small_graph(small_scenario):
    g = build_graph(prepare_nodes(io.load_scenario(small_scenario)), Environment(), GraphConfig())
    return g.with_masks(split_dataset(g))


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


@pytest.mark.parametrize("damage,label", [
    ("Destroyed (>50%)", 1), ("destroyed", 1), ("Major (26-50%)", 1), ("Minor (10-25%)", 1),
    ("Affected (1-9%)", 1), ("No Damage", 0), ("no damage", 0), ("", None)])
def test_damage_collapses_to_binary(damage, label):
    assert io.parse_damage(damage) == label


def test_unknown_damage_names_the_line(tmp_path):
    p = write(tmp_path, "b.csv", f"{HEADER},damage\n"
                                 f"a,-118.14,34.19,150,single_residence,{ROW},No Damage\n"
                                 f"b,-118.141,34.19,150,single_residence,{ROW},scorched\n")
    with pytest.raises(SchemaError) as info:
        io.load_buildings(p, PROJ)
    assert info.value.line == 3 and "b.csv:3" in str(info.value)


def test_buildings_without_damage_are_unlabeled(tmp_path):
    p = write(tmp_path, "b.csv", f"{HEADER}\na,-118.14,34.19,150,single_residence,{ROW}\n")
    (node,) = io.load_buildings(p, PROJ)
    assert node.label is None and node.volume > 0 and len(node.structural) == 8


@pytest.mark.parametrize("body,line", [
    ("a,-118.14,34.19,abc,single_residence,{row}\n", 2),
    ("a,-118.14,34.19,150,single_residence,{row}\na,-118.15,34.19,150,single_residence,{row}\n", 3),
    ("a,-118.14,34.19,150\n", 2),
    ("a,-118.14,99.0,150,single_residence,{row}\n", 2),
])
def test_building_row_errors_carry_line_numbers(tmp_path, body, line):
    p = write(tmp_path, "b.csv", HEADER + "\n" + body.format(row=ROW))
    with pytest.raises(SchemaError) as info:
        io.load_buildings(p, PROJ)
    assert info.value.line == line


def test_missing_column_and_empty_file(tmp_path):
    with pytest.raises(SchemaError, match="eaves"):
        io.load_buildings(write(tmp_path, "a.csv", HEADER.replace(",eaves", "") + "\n"), PROJ)
    with pytest.raises(SchemaError, match="empty"):
        io.load_buildings(write(tmp_path, "b.csv", ""), PROJ)
    with pytest.raises(SchemaError, match="no data"):
        io.load_fuel_grid(write(tmp_path, "c.csv", "x,y,fuel_class\n"), PROJ)


def _embedding_csv(width, rows):
    head = ",".join(["lon", "lat"] + [f"e{k}" for k in range(width)])
    lines = [head] + [",".join([f"{lon}", f"{lat}"] + [f"{v}"] * width) for lon, lat, v in rows]
    return "\n".join(lines) + "\n"


def test_embedding_width_is_enforced(tmp_path):
    p = write(tmp_path, "e.csv", _embedding_csv(63, [(-118.14, 34.19, 0.1)]))
    with pytest.raises(SchemaError, match="63"):
        io.load_embeddings(p, PROJ)


def test_duplicate_coordinates_last_wins(tmp_path, caplog):
    p = write(tmp_path, "e.csv", _embedding_csv(64, [(-118.14, 34.19, 0.1), (-118.15, 34.19, 0.2),
                                                     (-118.14, 34.19, 0.3)]))
    with caplog.at_level(logging.WARNING):
        field = io.load_embeddings(p, PROJ)
    assert "duplicate" in caplog.text
    assert len(field.values) == 2
    assert field.values[0, 0] == 0.3
    p = write(tmp_path, "f.csv", "x,y,fuel_class\n-118.14,34.19,Low\n-118.14,34.19,NonBurnable\n")
    grid = io.load_fuel_grid(p, PROJ)
    assert [c.value for c in grid.values] == ["NonBurnable"]


def test_unknown_fuel_class_rejected(tmp_path):
    p = write(tmp_path, "f.csv", "x,y,fuel_class\n-118.14,34.19,Swamp\n")
    with pytest.raises(SchemaError) as info:
        io.load_fuel_grid(p, PROJ)
    assert info.value.line == 2


def test_graph_round_trip_is_byte_identical(small_graph, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    io.write_graph(small_graph, a)
    io.write_graph(io.read_graph(a), b)
    assert a.read_bytes() == b.read_bytes()
    g = io.read_graph(a)
    np.testing.assert_array_equal(g.p_total, small_graph.p_total)
    assert set(g.masks) == set(small_graph.masks)


def _bundle(small_graph):
    params = gat.init_params(gat.TrainConfig(seed=1), gat.tensors_from_graph(small_graph).x_raw)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 3))
    forest = gbdt.fit(X, (X[:, 0] > 0).astype(float), gbdt.GbdtConfig(n_trees=3, max_depth=2))
    return ModelBundle(params, forest, StackerCoefficients(-2.0, 5.39, 0.076, 5), "abc123")


def test_bundle_round_trip_and_checks(small_graph, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    io.write_bundle(_bundle(small_graph), a)
    io.write_bundle(io.read_bundle(a, expected_hash="abc123"), b)
    assert a.read_bytes() == b.read_bytes()
    with pytest.raises(BundleError, match="hash"):
        io.read_bundle(a, expected_hash="other")
    d = json.loads(a.read_text())
    d["format_version"] = 99
    a.write_text(json.dumps(d))
    with pytest.raises(BundleError, match="format"):
        io.read_bundle(a)


def test_config_round_trip_is_byte_identical(tmp_path):
    cfg = ScenarioConfig.from_dict({"graph": {"prune_threshold": 0.3}, "gnn": {"epochs": 7, "patience": 3}})
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    write_config(cfg, a)
    write_config(load_config(a), b)
    assert a.read_bytes() == b.read_bytes()
    assert load_config(a) == cfg
    assert cfg.config_hash() != ScenarioConfig().config_hash()


def test_config_defaults_audit():
    c = ScenarioConfig()
    assert c.physics.wind_speed == 22.2
    assert c.physics.wind_direction == 225
    assert c.physics.d_th_radiation == 60
    assert c.graph.candidate_radius == 200
    assert c.graph.prune_threshold == 0.25
    assert c.graph.mc_samples == 100
    assert c.graph.vegetation_spacing == 30
    assert (c.gnn.lr, c.gnn.weight_decay) == (5e-4, 1e-6)
    assert (c.gnn.gat_dropout, c.gnn.mlp_dropout) == (0.05, 0.1)
    assert (c.gnn.epochs, c.gnn.patience) == (1000, 100)
    assert (c.gnn.lr_decay_factor, c.gnn.lr_decay_every) == (0.9, 50)
    assert (c.gbdt.n_trees, c.gbdt.max_depth, c.gbdt.learning_rate) == (300, 6, 0.1)
    assert c.stacker.threshold == 0.5


@pytest.mark.parametrize("doc,needle", [
    ({"graph": {"radius": 100}}, "radius"),
    ({"extras": {}}, "extras"),
    ({"physics": {"ember": {"bogus": 1}}}, "bogus"),
    ({"gbdt": {"n_trees": 0}}, "n_trees"),
])
def test_config_rejects_unknown_or_invalid_keys(tmp_path, doc, needle):
    p = write(tmp_path, "c.json", json.dumps(doc))
    with pytest.raises(ConfigError, match=needle):
        load_config(p)


def test_config_syntax_error_reports_line(tmp_path):
    p = write(tmp_path, "c.json", '{\n  "graph": {\n    "prune_threshold": 0.3,\n  }\n}\n')
    with pytest.raises(ConfigError, match="line 4"):
        load_config(p)
    with pytest.raises(ConfigError, match="no such"):
        load_config(tmp_path / "missing.json")


def test_predictions_round_trip(small_graph, tmp_path):
    n = small_graph.n_nodes
    p = np.linspace(0, 1, n)
    rows = io.prediction_rows(small_graph, p, p[::-1], p)
    path = tmp_path / "pred.csv"
    io.write_predictions(path, rows)
    back = io.read_predictions(path)
    assert len(back) == len(small_graph.building_idx)
    assert {r["split"] for r in back} <= {"train", "val", "test", ""}
