"""Lookup tables for fuel-model flame parameters, target-material ignition
properties, structural vulnerability scores and volume approximation.

All tables are immutable. ``Catalogs.with_overrides`` returns a new instance
with a JSON-style mapping merged over the defaults.
"""
from __future__ import annotations

import copy
import enum
import logging
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

log = logging.getLogger(__name__)

VEGETATION_CELL_AREA = 900.0  # 30 m x 30 m


class CatalogError(ValueError):
    pass


class FuelClass(str, enum.Enum):
    VERY_LOW = "VeryLow"
    LOW = "Low"
    MODERATE = "Moderate"
    HIGH = "High"
    VERY_HIGH = "VeryHigh"
    EXTREME = "Extreme"
    NON_BURNABLE = "NonBurnable"

    @property
    def burnable(self) -> bool:
        return self is not FuelClass.NON_BURNABLE

    @property
    def rank(self) -> int:
        """Intensity order; NonBurnable is lowest."""
        return _FUEL_RANK[self]


_FUEL_RANK = {
    FuelClass.NON_BURNABLE: 0,
    FuelClass.VERY_LOW: 1,
    FuelClass.LOW: 2,
    FuelClass.MODERATE: 3,
    FuelClass.HIGH: 4,
    FuelClass.VERY_HIGH: 5,
    FuelClass.EXTREME: 6,
}

FUEL_CLASSES = tuple(FuelClass)


class Material(str, enum.Enum):
    WOOD = "Wood"
    VINYL = "Vinyl"
    STUCCO_BRICK_CEMENT = "StuccoBrickCement"
    VEGETATION = "Vegetation"
    UNKNOWN = "Unknown"


def _key(s: str) -> str:
    return "".join(ch for ch in str(s).strip().lower() if ch.isalnum())


def _vkey(s: str) -> str:
    # keeps comparison signs so "mesh < 4mm" and "mesh > 4mm" stay distinct
    return "".join(ch for ch in str(s).strip().lower() if ch.isalnum() or ch in "<>")


def parse_fuel_class(value, fbfm40: Mapping[str, str] | None = None) -> FuelClass:
    """Accepts one of the seven class names (any case/spacing) or, when a
    mapping is supplied, an FBFM40 code such as ``GR2``."""
    if isinstance(value, FuelClass):
        return value
    k = _key(value)
    for fc in FuelClass:
        if _key(fc.value) == k:
            return fc
    if fbfm40:
        for code, name in fbfm40.items():
            if _key(code) == k:
                return parse_fuel_class(name)
    raise CatalogError(f"unknown fuel class {value!r}")


def parse_material(value) -> Material:
    """Normalise a siding string. Unrecognised values map to Unknown."""
    if isinstance(value, Material):
        return value
    k = _key(value)
    if not k:
        return Material.UNKNOWN
    if any(w in k for w in ("stucco", "brick", "cement", "concrete", "masonry")):
        return Material.STUCCO_BRICK_CEMENT
    if "vinyl" in k:
        return Material.VINYL
    if "wood" in k:
        return Material.WOOD
    if "veget" in k:
        return Material.VEGETATION
    return Material.UNKNOWN


@dataclass(frozen=True)
class FlameParamRanges:
    flame_length: tuple[float, float]
    residence_time: tuple[float, float]
    flame_temperature: tuple[float, float]
    fuel_depth: float


@dataclass(frozen=True)
class MaterialProps:
    material: Material
    q_critical: tuple[float, float]
    ftp: tuple[float, float]
    ftp_index_n: tuple[float, float]


# Flame variable ranges by fuel class: length (m), residence (s), temperature (K).
# High's lower length bound (2.348) is kept as published even though it
# overlaps Moderate's upper bound.
FLAME_TABLE = {
    FuelClass.VERY_LOW: ((0.0, 0.3048), (20.0, 40.0), (750.0, 850.0)),
    FuelClass.LOW: ((0.3048, 1.219), (40.0, 80.0), (850.0, 1000.0)),
    FuelClass.MODERATE: ((1.219, 2.438), (120.0, 300.0), (1000.0, 1500.0)),
    FuelClass.HIGH: ((2.348, 3.658), (300.0, 600.0), (1150.0, 1250.0)),
    FuelClass.VERY_HIGH: ((3.658, 7.620), (600.0, 1200.0), (1250.0, 1350.0)),
    FuelClass.EXTREME: ((7.620, 15.24), (1200.0, 2400.0), (1350.0, 1450.0)),
    FuelClass.NON_BURNABLE: ((0.0, 0.0), (0.0, 0.0), (293.0, 293.0)),
}

DEFAULT_FUEL_DEPTH = {
    FuelClass.VERY_LOW: 0.1,
    FuelClass.LOW: 0.3,
    FuelClass.MODERATE: 0.6,
    FuelClass.HIGH: 1.0,
    FuelClass.VERY_HIGH: 1.5,
    FuelClass.EXTREME: 2.0,
    FuelClass.NON_BURNABLE: 0.0,
}

# Critical flux (kW/m2), flux-time product (kW s/m2), FTP index n.
MATERIAL_TABLE = {
    Material.WOOD: ((8.5, 13.7), (5130.0, 6164.0), (1.5, 1.53)),
    Material.VINYL: ((14.0, 16.0), (4800.0, 5400.0), (1.45, 1.55)),
    Material.STUCCO_BRICK_CEMENT: ((10000.0, 10000.0), (20000.0, 20000.0), (1.0, 1.0)),
    Material.VEGETATION: ((10.0, 15.0), (300.0, 1200.0), (1.0, 1.25)),
    Material.UNKNOWN: ((30.0, 40.0), (6000.0, 8000.0), (1.5, 1.5)),
}

# Ember-ingress vulnerability scores per structural feature.
FEATURE_SCORES = {
    "deck_porch": {"composite": 0.3, "masonry or concrete": 0.3, "wood": 2.7, "none": 2.0},
    "eaves": {"composite": 0.3, "masonry or concrete": 0.3, "wood": 2.7, "none": 2.0},
    "roof": {
        "wood": 4.1, "composite": 0.7, "tile": 0.3, "concrete": 0.3,
        "metal": 0.3, "asphalt": 0.7, "other": 1.0,
    },
    "vent_screen": {"mesh < 4mm": 0.7, "mesh > 4mm": 1.2, "no vents": 1.1, "no screen": 1.5},
    "fence": {"combustible": 1.8, "non-combustible": 1.1, "none": 0.7},
    "window": {"multi-pane": 0.4, "single-pane": 3.0},
}

# Scores for the two structural slots not covered by the table above. These
# reuse the combustible/non-combustible pattern of the deck/eaves rows.
EXTRA_FEATURE_SCORES = {
    "siding": {"wood": 2.7, "vinyl": 2.0, "stuccobrickcement": 0.3, "unknown": 1.0},
    "patio_cover": {"composite": 0.3, "masonry or concrete": 0.3, "wood": 2.7, "none": 2.0},
}

# Variant used when an input value is not recognised.
FALLBACK_VARIANT = {
    "deck_porch": "none",
    "eaves": "none",
    "roof": "other",
    "vent_screen": "no screen",
    "fence": "none",
    "window": "single-pane",
    "siding": "unknown",
    "patio_cover": "none",
}

# Fixed slot order of the eight structural scores in every feature vector.
STRUCTURAL_FEATURES = (
    "roof", "siding", "eaves", "vent_screen", "window", "deck_porch", "fence", "patio_cover",
)
# The subset that enters the ember access probability.
ACCESS_FEATURES = ("deck_porch", "eaves", "roof", "vent_screen", "fence", "window")
MAX_FEATURE_SCORE = 4.1

_ALIASES = {
    "masonry": "masonry or concrete",
    "concrete": "masonry or concrete",
    "masonryconcrete": "masonry or concrete",
    "noncombustible": "non-combustible",
    "multipane": "multi-pane",
    "dualpane": "multi-pane",
    "doublepane": "multi-pane",
    "singlepane": "single-pane",
    "meshlt4mm": "mesh < 4mm",
    "meshgt4mm": "mesh > 4mm",
    "novents": "no vents",
    "noscreen": "no screen",
    "unscreened": "no screen",
    "novent": "no vents",
    "": "none",
}

DEFAULT_HEIGHTS = {
    "single_residence": 5.0,
    "multi_residence": 8.0,
    "commercial": 10.0,
    "outbuilding": 3.0,
    "unknown": 5.0,
}


def parse_building_type(value, known=DEFAULT_HEIGHTS) -> str:
    k = _key(value)
    if not k:
        return "unknown"
    for t in known:
        if _key(t) == k:
            return t
    if "multi" in k or "apartment" in k or "duplex" in k:
        return "multi_residence"
    if "commercial" in k or "retail" in k or "office" in k or "industrial" in k:
        return "commercial"
    if "outbuilding" in k or "shed" in k or "garage" in k or "barn" in k:
        return "outbuilding"
    if "single" in k or "residen" in k or "house" in k or "home" in k:
        return "single_residence"
    return "unknown"


def _freeze(d):
    return MappingProxyType({k: (MappingProxyType(dict(v)) if isinstance(v, dict) else v)
                             for k, v in d.items()})


@dataclass(frozen=True)
class Catalogs:
    flame: Mapping[FuelClass, FlameParamRanges]
    materials: Mapping[Material, MaterialProps]
    feature_scores: Mapping[str, Mapping[str, float]]
    heights: Mapping[str, float]
    fbfm40: Mapping[str, str] = field(default_factory=lambda: MappingProxyType({}))

    @classmethod
    def default(cls) -> "Catalogs":
        return cls.from_dict({})

    # -- lookups -----------------------------------------------------------
    def fuel_class_params(self, c: FuelClass) -> FlameParamRanges:
        return self.flame[FuelClass(c)]

    def material_props(self, m) -> MaterialProps:
        return self.materials[parse_material(m)]

    def feature_score(self, feature: str, variant) -> float:
        table = self.feature_scores.get(feature)
        if table is None:
            raise CatalogError(f"unknown structural feature {feature!r}")
        return table[self.normalize_variant(feature, variant)]

    def normalize_variant(self, feature: str, variant) -> str:
        table = self.feature_scores[feature]
        if variant is None:
            variant = ""
        if feature == "siding":
            return parse_material(variant).value.lower()
        raw = str(variant).strip().lower()
        if raw in table:
            return raw
        k = _vkey(raw)
        for name in table:
            if _vkey(name) == k:
                return name
        alias = _ALIASES.get(k)
        if alias in table:
            return alias
        fallback = FALLBACK_VARIANT[feature]
        if raw:
            log.warning("unrecognised %s value %r, scored as %r", feature, variant, fallback)
        return fallback

    def structural_scores(self, attrs: Mapping[str, object]) -> tuple[float, ...]:
        return tuple(self.feature_score(f, attrs.get(f)) for f in STRUCTURAL_FEATURES)

    def building_volume(self, area: float, building_type="unknown") -> float:
        if not area > 0:
            raise CatalogError(f"building area must be positive, got {area}")
        return self.heights[parse_building_type(building_type, self.heights)] * area

    def vegetation_volume(self, c: FuelClass) -> float:
        return self.flame[FuelClass(c)].fuel_depth * VEGETATION_CELL_AREA

    def parse_fuel_class(self, value) -> FuelClass:
        return parse_fuel_class(value, self.fbfm40)

    # -- serialisation -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "flame": {
                c.value: {
                    "flame_length": list(p.flame_length),
                    "residence_time": list(p.residence_time),
                    "flame_temperature": list(p.flame_temperature),
                    "fuel_depth": p.fuel_depth,
                }
                for c, p in self.flame.items()
            },
            "materials": {
                m.value: {
                    "q_critical": list(p.q_critical),
                    "ftp": list(p.ftp),
                    "ftp_index_n": list(p.ftp_index_n),
                }
                for m, p in self.materials.items()
            },
            "feature_scores": {f: dict(t) for f, t in self.feature_scores.items()},
            "heights": dict(self.heights),
            "fbfm40": dict(self.fbfm40),
        }

    @classmethod
    def from_dict(cls, overrides: Mapping) -> "Catalogs":
        """Build from defaults with ``overrides`` merged on top.

        ``overrides`` has the same shape as ``to_dict()``; any subset of keys
        may be given.
        """
        unknown = set(overrides) - {"flame", "materials", "feature_scores", "heights", "fbfm40"}
        if unknown:
            raise CatalogError(f"unknown catalog keys: {sorted(unknown)}")
        flame = {}
        fo = overrides.get("flame", {})
        for c in FuelClass:
            fl, rt, ft = FLAME_TABLE[c]
            row = {"flame_length": fl, "residence_time": rt, "flame_temperature": ft,
                   "fuel_depth": DEFAULT_FUEL_DEPTH[c]}
            for name, val in fo.items():
                if parse_fuel_class(name) is c:
                    _merge_row(row, val, name)
            flame[c] = FlameParamRanges(
                _pair(row["flame_length"]), _pair(row["residence_time"]),
                _pair(row["flame_temperature"]), float(row["fuel_depth"]),
            )
        materials = {}
        mo = overrides.get("materials", {})
        for m in Material:
            q, f, n = MATERIAL_TABLE[m]
            row = {"q_critical": q, "ftp": f, "ftp_index_n": n}
            for name, val in mo.items():
                if parse_material(name) is m:
                    _merge_row(row, val, name)
            materials[m] = MaterialProps(m, _pair(row["q_critical"]), _pair(row["ftp"]),
                                         _pair(row["ftp_index_n"]))
            if not materials[m].q_critical[0] > 0:
                raise CatalogError(f"{m.value}: critical flux must be positive")
        scores = copy.deepcopy({**FEATURE_SCORES, **EXTRA_FEATURE_SCORES})
        for feat, table in overrides.get("feature_scores", {}).items():
            if feat not in scores:
                raise CatalogError(f"unknown structural feature {feat!r}")
            scores[feat].update({str(k).lower(): float(v) for k, v in table.items()})
        heights = dict(DEFAULT_HEIGHTS)
        for t, h in overrides.get("heights", {}).items():
            if not float(h) > 0:
                raise CatalogError(f"height for {t!r} must be positive")
            heights[t] = float(h)
        fbfm = {str(k): parse_fuel_class(v).value for k, v in overrides.get("fbfm40", {}).items()}
        return cls(
            flame=MappingProxyType(flame),
            materials=MappingProxyType(materials),
            feature_scores=_freeze(scores),
            heights=MappingProxyType(heights),
            fbfm40=MappingProxyType(fbfm),
        )

    def with_overrides(self, overrides: Mapping) -> "Catalogs":
        merged = self.to_dict()
        for k, v in overrides.items():
            if isinstance(v, dict) and isinstance(merged.get(k), dict):
                for kk, vv in v.items():
                    if isinstance(vv, dict) and isinstance(merged[k].get(kk), dict):
                        merged[k][kk] = {**merged[k][kk], **vv}
                    else:
                        merged[k][kk] = vv
            else:
                merged[k] = v
        return Catalogs.from_dict(merged)


def _pair(v) -> tuple[float, float]:
    lo, hi = (float(x) for x in v)
    if lo > hi or lo < 0:
        raise CatalogError(f"invalid range {v!r}")
    return (lo, hi)


def _merge_row(row: dict, val: Mapping, name: str) -> None:
    for k, v in val.items():
        if k not in row:
            raise CatalogError(f"{name}: unknown field {k!r}")
        row[k] = v


DEFAULT_CATALOGS = Catalogs.default()


def fuel_class_params(c: FuelClass) -> FlameParamRanges:
    return DEFAULT_CATALOGS.fuel_class_params(c)


def material_props(m) -> MaterialProps:
    return DEFAULT_CATALOGS.material_props(m)


def feature_score(feature: str, variant) -> float:
    return DEFAULT_CATALOGS.feature_score(feature, variant)


def building_volume(area: float, building_type="unknown") -> float:
    return DEFAULT_CATALOGS.building_volume(area, building_type)


def vegetation_volume(c: FuelClass) -> float:
    return DEFAULT_CATALOGS.vegetation_volume(c)
