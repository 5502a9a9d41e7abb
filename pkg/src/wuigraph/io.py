"""CSV inputs, JSON artifacts and the triage map layers."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .catalogs import (ACCESS_FEATURES, DEFAULT_CATALOGS, STRUCTURAL_FEATURES, Catalogs,
                       CatalogError, FuelClass, Material, _key, parse_building_type,
                       parse_material)
from .ensemble import StackerCoefficients
from .gat import GatParams
from .gbdt import Forest
from .graph import ContagionGraph, EmbeddingField, FuelGrid, Terrain
from .nodes import CANOPY_FIELDS, EMBEDDING_DIM, Node, NodeKind
from .physics import access_probability_from_scores
from .spatial import LocalProjection

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

BUILDING_COLUMNS = ("id", "lon", "lat", "area_m2", "building_type", "roof", "siding", "eaves",
                    "vent_screen", "window", "deck_porch", "fence")
OPTIONAL_BUILDING_COLUMNS = ("damage", "patio_cover")
EMBEDDING_COLUMNS = ("lon", "lat") + tuple(f"e{k}" for k in range(EMBEDDING_DIM))
TERRAIN_COLUMNS = ("lon", "lat", "slope_deg", "elevation_m")
TRIAGE_COLUMNS = ("id", "lon", "lat", "p_gnn", "p_xgb", "p_stack", "quadrant")

DAMAGE_LABELS = {
    "nodamage": 0,
    "affected": 1,
    "minor": 1,
    "major": 1,
    "destroyed": 1,
}


class SchemaError(ValueError):
    """Malformed input file; the message names the file and line."""

    def __init__(self, path, msg, line: int | None = None):
        where = f"{path}" if line is None else f"{path}:{line}"
        super().__init__(f"{where}: {msg}")
        self.path = str(path)
        self.line = line


class BundleError(ValueError):
    pass


# --- CSV reading ------------------------------------------------------------

def _read_csv(path, required: Sequence[str]):
    path = Path(path)
    if not path.exists():
        raise SchemaError(path, "file not found")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(path, "empty file")
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(path, f"missing required column(s): {', '.join(missing)}", 1)
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(path, f"expected {len(header)} fields, got {len(row)}",
                                  reader.line_num)
            rows.append((reader.line_num, dict(zip(header, (c.strip() for c in row)))))
    if not rows:
        raise SchemaError(path, "no data rows")
    return header, rows


def _num(path, line, row, col, positive=False) -> float:
    try:
        v = float(row[col])
    except ValueError:
        raise SchemaError(path, f"column {col!r}: not a number: {row[col]!r}", line) from None
    if not math.isfinite(v):
        raise SchemaError(path, f"column {col!r}: non-finite value", line)
    if positive and not v > 0:
        raise SchemaError(path, f"column {col!r}: must be positive, got {v}", line)
    return v


def _lonlat(path, line, row, lon_col="lon", lat_col="lat"):
    lon, lat = _num(path, line, row, lon_col), _num(path, line, row, lat_col)
    if not (-180 <= lon <= 180 and -90 <= lat <= 90):
        raise SchemaError(path, f"coordinates out of range: {lon}, {lat}", line)
    return lon, lat


def parse_damage(value):
    """Binary label from a damage category; None when blank."""
    k = _key(value)
    if not k:
        return None
    for name, lab in DAMAGE_LABELS.items():
        if k.startswith(name):
            return lab
    raise ValueError(f"unknown damage category {value!r}")


def read_building_coords(path):
    _, rows = _read_csv(path, ("lon", "lat"))
    lons, lats = zip(*(_lonlat(path, ln, r) for ln, r in rows))
    return np.array(lons), np.array(lats)


def load_buildings(path, projection: LocalProjection | None = None,
                   catalogs: Catalogs = DEFAULT_CATALOGS) -> list[Node]:
    """Building nodes from CSV. Without a projection, one centred on the file
    is used. Fuel class and embeddings are attached later."""
    header, rows = _read_csv(path, BUILDING_COLUMNS)
    if projection is None:
        projection = LocalProjection.centered_on(*read_building_coords(path))
    has_damage = "damage" in header
    seen = {}
    nodes = []
    for line, r in rows:
        bid = r["id"]
        if not bid:
            raise SchemaError(path, "empty id", line)
        if bid in seen:
            raise SchemaError(path, f"duplicate id {bid!r} (first on line {seen[bid]})", line)
        seen[bid] = line
        lon, lat = _lonlat(path, line, r)
        area = _num(path, line, r, "area_m2", positive=True)
        attrs = {f: r.get(f, "") for f in STRUCTURAL_FEATURES}
        try:
            btype = parse_building_type(r["building_type"], catalogs.heights)
            structural = catalogs.structural_scores(attrs)
            label = parse_damage(r["damage"]) if has_damage else None
        except (ValueError, CatalogError) as exc:
            raise SchemaError(path, str(exc), line) from None
        scores = dict(zip(STRUCTURAL_FEATURES, structural))
        x, y = projection.forward(lon, lat)
        nodes.append(Node(
            id=bid, kind=NodeKind.BUILDING, x=float(x), y=float(y), lon=lon, lat=lat,
            fuel_class=FuelClass.MODERATE, area=area,
            volume=catalogs.building_volume(area, btype),
            material=parse_material(attrs["siding"]), structural=structural,
            access=access_probability_from_scores([scores[f] for f in ACCESS_FEATURES]),
            label=label, building_type=btype,
            attrs={f: attrs[f] for f in STRUCTURAL_FEATURES},
        ))
    return nodes


def _last_wins(path, keys, what):
    """Index of the last occurrence of each coordinate, in first-seen order."""
    last = {}
    for i, k in enumerate(keys):
        last[k] = i
    if len(last) != len(keys):
        log.warning("%s: %d duplicate %s coordinate(s); keeping the last occurrence",
                    path, len(keys) - len(last), what)
    first_order = list(dict.fromkeys(keys))
    return [last[k] for k in first_order]


def load_fuel_grid(path, projection: LocalProjection,
                   catalogs: Catalogs = DEFAULT_CATALOGS) -> FuelGrid:
    """Fuel grid CSV: x, y (longitude, latitude degrees), fuel_class, and
    optional canopy columns cbd, cbh, ch, cc."""
    header, rows = _read_csv(path, ("x", "y", "fuel_class"))
    lons, lats, classes, canopy = [], [], [], []
    for line, r in rows:
        lon, lat = _lonlat(path, line, r, "x", "y")
        try:
            fc = catalogs.parse_fuel_class(r["fuel_class"])
        except CatalogError as exc:
            raise SchemaError(path, str(exc), line) from None
        can = []
        for c in CANOPY_FIELDS:
            v = r.get(c, "")
            can.append(math.nan if v == "" else _num(path, line, r, c))
        lons.append(lon)
        lats.append(lat)
        classes.append(fc)
        canopy.append(can)
    keep = _last_wins(path, list(zip(lons, lats)), "fuel")
    lon, lat = np.array(lons)[keep], np.array(lats)[keep]
    x, y = projection.forward(lon, lat)
    return FuelGrid(x, y, [classes[i] for i in keep], np.array(canopy)[keep], lon, lat)


def load_embeddings(path, projection: LocalProjection) -> EmbeddingField:
    header, rows = _read_csv(path, ("lon", "lat"))
    ecols = [h for h in header if h.startswith("e") and h[1:].isdigit()]
    if len(ecols) != EMBEDDING_DIM or ecols != [f"e{k}" for k in range(EMBEDDING_DIM)]:
        raise SchemaError(path, f"expected embedding columns e0..e{EMBEDDING_DIM - 1}, "
                                f"found {len(ecols)}", 1)
    lons, lats, vecs = [], [], []
    for line, r in rows:
        lon, lat = _lonlat(path, line, r)
        lons.append(lon)
        lats.append(lat)
        vecs.append([_num(path, line, r, c) for c in ecols])
    keep = _last_wins(path, list(zip(lons, lats)), "embedding")
    lon, lat = np.array(lons)[keep], np.array(lats)[keep]
    x, y = projection.forward(lon, lat)
    return EmbeddingField(x, y, np.array(vecs)[keep], lon, lat)


def load_terrain(path, projection: LocalProjection) -> Terrain:
    _, rows = _read_csv(path, TERRAIN_COLUMNS)
    lons, lats, slope, elev = [], [], [], []
    for line, r in rows:
        lon, lat = _lonlat(path, line, r)
        s = _num(path, line, r, "slope_deg")
        if not 0 <= s <= 90:
            raise SchemaError(path, f"slope_deg out of [0, 90]: {s}", line)
        lons.append(lon)
        lats.append(lat)
        slope.append(s)
        elev.append(_num(path, line, r, "elevation_m"))
    keep = _last_wins(path, list(zip(lons, lats)), "terrain")
    lon, lat = np.array(lons)[keep], np.array(lats)[keep]
    x, y = projection.forward(lon, lat)
    return Terrain(x, y, np.array(slope)[keep], np.array(elev)[keep], lon, lat)


@dataclass
class Scenario:
    buildings: list
    fuel_grid: FuelGrid | None
    embeddings: EmbeddingField
    terrain: Terrain | None
    projection: LocalProjection


SCENARIO_FILES = {
    "buildings": "buildings.csv",
    "fuel_grid": "fuel_grid.csv",
    "embeddings": "embeddings.csv",
    "terrain": "terrain.csv",
}


def load_scenario(directory, catalogs: Catalogs = DEFAULT_CATALOGS) -> Scenario:
    """Read a scenario directory; fuel grid and terrain files are optional."""
    d = Path(directory)
    bpath = d / SCENARIO_FILES["buildings"]
    projection = LocalProjection.centered_on(*read_building_coords(bpath))
    buildings = load_buildings(bpath, projection, catalogs)
    fpath, tpath = d / SCENARIO_FILES["fuel_grid"], d / SCENARIO_FILES["terrain"]
    fuel = load_fuel_grid(fpath, projection, catalogs) if fpath.exists() else None
    terrain = load_terrain(tpath, projection) if tpath.exists() else None
    emb = load_embeddings(d / SCENARIO_FILES["embeddings"], projection)
    return Scenario(buildings, fuel, emb, terrain, projection)


# --- JSON artifacts ------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars and arrays become lists."""
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_json(obj, path) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SchemaError(path, "file not found") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(path, f"invalid JSON ({exc.msg})", exc.lineno) from None


def _f(v) -> float:
    return math.nan if v is None else float(v)


def node_to_dict(n: Node) -> dict:
    return {
        "id": n.id, "kind": n.kind.value, "x": n.x, "y": n.y, "lon": n.lon, "lat": n.lat,
        "fuel_class": n.fuel_class.value, "area": n.area, "volume": n.volume,
        "material": n.material.value, "structural": list(n.structural), "access": n.access,
        "embedding": None if n.embedding is None else n.embedding.tolist(),
        "slope": n.slope, "elevation": n.elevation, "label": n.label,
        "building_type": n.building_type, "canopy": list(n.canopy), "attrs": dict(n.attrs),
    }


def node_from_dict(d: Mapping) -> Node:
    emb = None
    if d["embedding"] is not None:
        emb = np.array(d["embedding"], dtype=float)
        emb.setflags(write=False)
    return Node(
        id=d["id"], kind=NodeKind(d["kind"]), x=float(d["x"]), y=float(d["y"]),
        lon=_f(d["lon"]), lat=_f(d["lat"]), fuel_class=FuelClass(d["fuel_class"]),
        area=float(d["area"]), volume=float(d["volume"]), material=Material(d["material"]),
        structural=tuple(float(v) for v in d["structural"]), access=float(d["access"]),
        embedding=emb, slope=float(d["slope"]), elevation=float(d["elevation"]),
        label=None if d["label"] is None else int(d["label"]),
        building_type=d["building_type"], canopy=tuple(_f(v) for v in d["canopy"]),
        attrs=dict(d["attrs"]),
    )


def graph_to_dict(g: ContagionGraph) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "config_hash": g.config_hash,
        "n_candidates": g.n_candidates,
        "nodes": [node_to_dict(n) for n in g.nodes],
        "edges": {
            "src": g.src.tolist(), "dst": g.dst.tolist(),
            "p_total": g.p_total.tolist(), "p_conv": g.p_conv.tolist(),
            "p_rad": g.p_rad.tolist(), "p_ember": g.p_ember.tolist(),
        },
        "masks": {k: v.tolist() for k, v in g.masks.items()},
    }


def graph_from_dict(d: Mapping) -> ContagionGraph:
    if d.get("format_version") != FORMAT_VERSION:
        raise BundleError(f"unsupported graph format {d.get('format_version')!r}")
    e = d["edges"]
    return ContagionGraph(
        nodes=tuple(node_from_dict(n) for n in d["nodes"]),
        src=np.array(e["src"], dtype=np.int64), dst=np.array(e["dst"], dtype=np.int64),
        p_conv=np.array(e["p_conv"], dtype=float), p_rad=np.array(e["p_rad"], dtype=float),
        p_ember=np.array(e["p_ember"], dtype=float), p_total=np.array(e["p_total"], dtype=float),
        masks={k: np.array(v, dtype=np.int64) for k, v in d.get("masks", {}).items()},
        n_candidates=int(d.get("n_candidates", 0)), config_hash=d.get("config_hash", ""),
    )


def write_graph(g: ContagionGraph, path) -> None:
    write_json(graph_to_dict(g), path)


def read_graph(path) -> ContagionGraph:
    return graph_from_dict(read_json(path))


@dataclass
class ModelBundle:
    gat: GatParams | None
    gbdt: Forest | None
    stacker: StackerCoefficients | None
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "config_hash": self.config_hash,
            "gat": None if self.gat is None else self.gat.to_dict(),
            "gbdt": None if self.gbdt is None else self.gbdt.to_dict(),
            "stacker": None if self.stacker is None else self.stacker.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping, expected_hash: str | None = None) -> "ModelBundle":
        if d.get("format_version") != FORMAT_VERSION:
            raise BundleError(f"unsupported bundle format {d.get('format_version')!r}")
        if expected_hash is not None and d.get("config_hash") != expected_hash:
            raise BundleError(f"config hash mismatch: bundle {d.get('config_hash')!r}, "
                              f"expected {expected_hash!r}")
        return cls(
            gat=None if d.get("gat") is None else GatParams.from_dict(d["gat"]),
            gbdt=None if d.get("gbdt") is None else Forest.from_dict(d["gbdt"]),
            stacker=None if d.get("stacker") is None else StackerCoefficients.from_dict(d["stacker"]),
            config_hash=d.get("config_hash", ""),
        )


def write_bundle(b: ModelBundle, path) -> None:
    write_json(b.to_dict(), path)


def read_bundle(path, expected_hash: str | None = None) -> ModelBundle:
    try:
        return ModelBundle.from_dict(read_json(path), expected_hash)
    except BundleError as exc:
        raise BundleError(f"{path}: {exc}") from None


# --- delimited outputs --------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns: Sequence[str], rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def triage_rows(nodes: Sequence[Node], p_gnn, p_xgb, p_stack, quadrants):
    return [(n.id, n.lon, n.lat, float(a), float(b), float(c), getattr(q, "value", q))
            for n, a, b, c, q in zip(nodes, p_gnn, p_xgb, p_stack, quadrants)]


def write_triage_csv(path, rows) -> None:
    write_csv(path, TRIAGE_COLUMNS, rows)


def write_triage_geojson(path, rows) -> None:
    features = []
    for r in rows:
        props = dict(zip(TRIAGE_COLUMNS, r))
        lon, lat = props.pop("lon"), props.pop("lat")
        features.append({"type": "Feature",
                         "geometry": {"type": "Point", "coordinates": [lon, lat]},
                         "properties": props})
    write_json({"type": "FeatureCollection", "features": features}, path)


def write_confusion_csv(path, report) -> None:
    write_csv(path, ("actual", "predicted_survived", "predicted_damaged"),
              [("survived", report.tn, report.fp), ("damaged", report.fn, report.tp)])


PREDICTION_COLUMNS = ("id", "lon", "lat", "split", "label", "p_gnn", "p_xgb", "p_stack")


def prediction_rows(graph: ContagionGraph, p_gnn, p_xgb, p_stack):
    """One row per building node; ``split`` is empty for unmasked nodes."""
    split_of = {int(i): name for name, idx in graph.masks.items() for i in idx}
    rows = []
    for i in graph.building_idx:
        n = graph.nodes[i]
        rows.append((n.id, n.lon, n.lat, split_of.get(int(i), ""),
                     "" if n.label is None else int(n.label),
                     float(p_gnn[i]), float(p_xgb[i]), float(p_stack[i])))
    return rows


def write_predictions(path, rows) -> None:
    write_csv(path, PREDICTION_COLUMNS, rows)


def read_predictions(path) -> list[dict]:
    _, rows = _read_csv(path, PREDICTION_COLUMNS)
    out = []
    for line, r in rows:
        rec = {"id": r["id"], "split": r["split"],
               "label": None if r["label"] == "" else int(_num(path, line, r, "label"))}
        for c in ("lon", "lat", "p_gnn", "p_xgb", "p_stack"):
            rec[c] = _num(path, line, r, c)
        for c in ("p_gnn", "p_xgb", "p_stack"):
            if not 0 <= rec[c] <= 1:
                raise SchemaError(path, f"column {c!r}: probability outside [0, 1]", line)
        out.append(rec)
    return out
