from __future__ import annotations

import json
import logging

import pytest

from wuigraph.catalogs import (DEFAULT_CATALOGS, CatalogError, Catalogs, FuelClass, Material,
                               building_volume, feature_score, fuel_class_params, material_props,
                               parse_fuel_class, parse_material, vegetation_volume)

# Golden rows of the published flame, material and ember-access tables.
FLAME_GOLDEN = {
    "VeryLow": ((0, 0.3048), (20, 40), (750, 850)),
    "Low": ((0.3048, 1.219), (40, 80), (850, 1000)),
    "Moderate": ((1.219, 2.438), (120, 300), (1000, 1500)),
    "High": ((2.348, 3.658), (300, 600), (1150, 1250)),
    "VeryHigh": ((3.658, 7.620), (600, 1200), (1250, 1350)),
    "Extreme": ((7.620, 15.24), (1200, 2400), (1350, 1450)),
    "NonBurnable": ((0, 0), (0, 0), (293, 293)),
}
MATERIAL_GOLDEN = {
    "Wood": ((8.5, 13.7), (5130, 6164), (1.5, 1.53)),
    "Vinyl": ((14, 16), (4800, 5400), (1.45, 1.55)),
    "StuccoBrickCement": ((10000, 10000), (20000, 20000), (1.0, 1.0)),
    "Vegetation": ((10, 15), (300, 1200), (1.0, 1.25)),
    "Unknown": ((30, 40), (6000, 8000), (1.5, 1.5)),
}
SCORE_GOLDEN = {
    "deck_porch": {"composite": 0.3, "masonry or concrete": 0.3, "wood": 2.7, "none": 2.0},
    "eaves": {"composite": 0.3, "masonry or concrete": 0.3, "wood": 2.7, "none": 2.0},
    "roof": {"wood": 4.1, "composite": 0.7, "tile": 0.3, "concrete": 0.3, "metal": 0.3,
             "asphalt": 0.7, "other": 1.0},
    "vent_screen": {"mesh < 4mm": 0.7, "mesh > 4mm": 1.2, "no vents": 1.1, "no screen": 1.5},
    "fence": {"combustible": 1.8, "non-combustible": 1.1, "none": 0.7},
    "window": {"multi-pane": 0.4, "single-pane": 3.0},
}


def test_exactly_seven_fuel_classes():
    assert [c.value for c in FuelClass] == list(FLAME_GOLDEN)


@pytest.mark.parametrize("name", FLAME_GOLDEN)
def test_flame_table_golden(name):
    p = fuel_class_params(FuelClass(name))
    assert (p.flame_length, p.residence_time, p.flame_temperature) == FLAME_GOLDEN[name]


def test_flame_examples():
    assert fuel_class_params(FuelClass.MODERATE).flame_length == (1.219, 2.438)
    assert fuel_class_params(FuelClass.NON_BURNABLE).flame_temperature == (293, 293)
    assert fuel_class_params(FuelClass.EXTREME).residence_time == (1200, 2400)


@pytest.mark.parametrize("name", MATERIAL_GOLDEN)
def test_material_table_golden(name):
    p = material_props(Material(name))
    assert p.material is Material(name)
    assert (p.q_critical, p.ftp, p.ftp_index_n) == MATERIAL_GOLDEN[name]


def test_material_examples_and_normalisation():
    assert material_props("Wood").q_critical == (8.5, 13.7)
    assert material_props("stucco").q_critical == (10000, 10000)
    assert material_props("Vegetation").ftp == (300, 1200)
    for s in ("Stucco", " BRICK ", "cement", "Stucco Brick Cement"):
        assert parse_material(s) is Material.STUCCO_BRICK_CEMENT
    assert parse_material("adobe-ish") is Material.UNKNOWN


@pytest.mark.parametrize("feature", SCORE_GOLDEN)
def test_feature_scores_golden(feature):
    for variant, score in SCORE_GOLDEN[feature].items():
        assert feature_score(feature, variant) == score


def test_every_table_number_has_one_home():
    # Each published table row lives in exactly one catalog entry.
    d = DEFAULT_CATALOGS.to_dict()
    assert len(d["flame"]) == 7 and len(d["materials"]) == 5
    for feature, table in SCORE_GOLDEN.items():
        assert {k: d["feature_scores"][feature][k] for k in table} == table


def test_feature_score_examples():
    assert feature_score("roof", "Wood") == 4.1
    assert feature_score("window", "Multi-pane") == 0.4
    assert feature_score("vent_screen", "Mesh < 4mm") == 0.7


def test_unknown_variant_falls_back_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        assert feature_score("window", "stained glass") == 3.0
        assert feature_score("roof", "thatch") == 1.0
    assert "stained glass" in caplog.text
    with pytest.raises(CatalogError):
        feature_score("chimney", "brick")


def test_volumes():
    assert building_volume(100, "single_residence") == 500
    assert building_volume(100, "Single Family Residence") == 500
    assert building_volume(50, "commercial") == 500
    with pytest.raises(CatalogError):
        building_volume(0, "single_residence")
    assert vegetation_volume(FuelClass.NON_BURNABLE) == 0
    cat = DEFAULT_CATALOGS.with_overrides({"flame": {"Low": {"fuel_depth": 0.5}}})
    assert cat.vegetation_volume(FuelClass.LOW) == 450


def test_fuel_class_parsing():
    assert parse_fuel_class("NonBurnable") is FuelClass.NON_BURNABLE
    assert parse_fuel_class("very high") is FuelClass.VERY_HIGH
    with pytest.raises(CatalogError):
        parse_fuel_class("Lava")
    assert parse_fuel_class("GR2", {"GR2": "Low"}) is FuelClass.LOW


def test_catalog_round_trip_bit_identical():
    d = DEFAULT_CATALOGS.to_dict()
    again = Catalogs.from_dict(json.loads(json.dumps(d)))
    assert again == DEFAULT_CATALOGS
    assert json.dumps(again.to_dict(), sort_keys=True) == json.dumps(d, sort_keys=True)


def test_overrides_validated():
    with pytest.raises(CatalogError):
        Catalogs.from_dict({"colors": {}})
    with pytest.raises(CatalogError):
        DEFAULT_CATALOGS.with_overrides({"flame": {"Low": {"flame_length": [2, 1]}}})
    with pytest.raises(CatalogError):
        DEFAULT_CATALOGS.with_overrides({"heights": {"shed": 0}})
    with pytest.raises(CatalogError):
        DEFAULT_CATALOGS.with_overrides({"materials": {"Wood": {"q_critical": [0, 1]}}})
