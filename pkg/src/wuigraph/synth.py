"""Deterministic synthetic WUI communities with known label-generating process.

The generator writes the same CSV inputs the loaders accept, plus a
``truth.json`` sidecar with every latent score. Neighbour pressure is the
mean incoming transmission probability of each building in the graph that
the regular pipeline builds from those very files.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .catalogs import FuelClass
from .diagnostics import degree_centrality, roc_auc
from .graph import ContagionGraph, GraphConfig, build_graph
from .nodes import EMBEDDING_DIM, Node, NodeKind
from .physics import Environment
from .spatial import LocalProjection

SIGNAL_DIM = 4
N_NUISANCE = EMBEDDING_DIM - SIGNAL_DIM

# fuel intensity cut points, NonBurnable first
_FUEL_LADDER = (
    (-0.55, FuelClass.NON_BURNABLE),
    (-0.15, FuelClass.VERY_LOW),
    (0.25, FuelClass.LOW),
    (0.6, FuelClass.MODERATE),
    (0.95, FuelClass.HIGH),
    (1.3, FuelClass.VERY_HIGH),
    (math.inf, FuelClass.EXTREME),
)

DAMAGE_NAMES = ("Affected (1-9%)", "Minor (10-25%)", "Major (26-50%)", "Destroyed (>50%)")
DAMAGE_WEIGHTS = (0.1, 0.1, 0.1, 0.7)

# (hardened variants, exposed variants) per structural feature
_VARIANTS = {
    "roof": (("tile", "metal", "concrete", "composite"), ("wood", "asphalt", "other")),
    "siding": (("stucco", "brick"), ("wood", "vinyl")),
    "eaves": (("composite", "masonry or concrete"), ("wood", "none")),
    "vent_screen": (("mesh < 4mm", "no vents"), ("mesh > 4mm", "no screen")),
    "window": (("multi-pane",), ("single-pane",)),
    "deck_porch": (("composite", "masonry or concrete", "none"), ("wood",)),
    "fence": (("non-combustible", "none"), ("combustible",)),
    "patio_cover": (("composite", "none"), ("wood",)),
}
# probability that a feature follows the building's hardening state
_FOLLOW = {"eaves": 0.9, "roof": 0.7, "siding": 0.0, "vent_screen": 0.65, "window": 0.7,
           "deck_porch": 0.6, "fence": 0.6, "patio_cover": 0.6}
# hardened-variant rate for features drawn independently of the building state
_BASE_RATE = {"siding": 0.3}

BUILDING_TYPES = ("single_residence", "single_residence", "single_residence",
                  "multi_residence", "outbuilding")


class InfeasibleScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_buildings: int = 600
    extent: float = 760.0
    street_spacing: float = 25.0
    jitter: float = 4.0
    margin: float = 60.0
    structural_strength: float = 1.0
    environmental_strength: float = 8.5
    contagion_strength: float = 0.3
    label_noise: float = 0.01
    hardening_bias: float = 1.5
    embedding_noise: float = 0.15
    hardening_offset: float = -3.0
    suppression_rate: float = 0.8
    signal_wavelengths: tuple = (300.0, 1000.0)
    suppression_quantile: float = 0.75
    intercept: float = 0.3
    embedding_spacing: float = 20.0
    fuel_spacing: float = 30.0
    origin_lon: float = -118.14
    origin_lat: float = 34.19
    bayes_draws: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n_buildings < 10:
            raise ValueError("n_buildings must be >= 10")
        for name in ("structural_strength", "environmental_strength", "contagion_strength",
                     "hardening_bias"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (0 <= self.suppression_rate <= 1 and 0 <= self.suppression_quantile <= 1):
            raise ValueError("suppression_rate and suppression_quantile must be in [0, 1]")
        if not 0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must be in [0, 0.5)")
        if not (self.extent > 2 * self.margin and self.street_spacing > 0):
            raise ValueError("extent must exceed twice the margin; spacing must be positive")


# --- smooth random fields -----------------------------------------------------

class FourierField:
    """Sum of random cosines with wavelengths in [lo, hi] meters, unit variance."""

    def __init__(self, rng: np.random.Generator, n_waves: int = 24,
                 wavelengths=(150.0, 600.0)):
        lo, hi = wavelengths
        lam = rng.uniform(lo, hi, n_waves)
        theta = rng.uniform(0, 2 * np.pi, n_waves)
        self.omega = (2 * np.pi / lam)[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
        self.phase = rng.uniform(0, 2 * np.pi, n_waves)
        self.scale = math.sqrt(2.0 / n_waves)

    def __call__(self, x, y):
        pts = np.column_stack([np.ravel(x), np.ravel(y)])
        return self.scale * np.cos(pts @ self.omega.T + self.phase).sum(axis=1)


def _grid(extent: float, spacing: float):
    n = int(math.floor(extent / spacing + 1e-9)) + 1
    g = spacing * np.arange(n)
    gx, gy = np.meshgrid(g, g)
    return gx.ravel(), gy.ravel()


def _zscore(v):
    v = np.asarray(v, dtype=float)
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def fuel_class_for(intensity: float) -> FuelClass:
    for cut, fc in _FUEL_LADDER:
        if intensity < cut:
            return fc
    return FuelClass.EXTREME


# --- generation ---------------------------------------------------------------

def _place_buildings(cfg: SynthConfig, rng):
    inner = cfg.extent - 2 * cfg.margin
    k = int(math.floor(inner / cfg.street_spacing + 1e-9)) + 1
    if cfg.n_buildings > k * k:
        raise InfeasibleScenarioError(
            f"{cfg.n_buildings} buildings do not fit on {k * k} lots "
            f"(spacing {cfg.street_spacing} m over {inner} m)")
    area = np.round(rng.uniform(120.0, 260.0, cfg.n_buildings), 1)
    if math.sqrt(area.max()) + 2 * cfg.jitter >= cfg.street_spacing:
        raise InfeasibleScenarioError("lot spacing too small for footprints plus jitter; "
                                      "buildings would overlap")
    lots = np.sort(rng.choice(k * k, cfg.n_buildings, replace=False))
    gx = cfg.margin + cfg.street_spacing * (lots % k)
    gy = cfg.margin + cfg.street_spacing * (lots // k)
    x = gx + rng.uniform(-cfg.jitter, cfg.jitter, cfg.n_buildings)
    y = gy + rng.uniform(-cfg.jitter, cfg.jitter, cfg.n_buildings)
    return x, y, area


def _fuel(cfg: SynthConfig, rng, bx, by):
    fx, fy = _grid(cfg.extent, cfg.fuel_spacing)
    smooth = FourierField(rng, wavelengths=(120.0, 400.0))(fx, fy)
    # wildland rises toward the (extent, extent) corner
    wild = (fx + fy) / cfg.extent - 1.0
    d2 = (fx[:, None] - bx[None, :]) ** 2 + (fy[:, None] - by[None, :]) ** 2
    density = (d2 < 45.0 ** 2).sum(axis=1)
    intensity = 0.9 * wild + 0.45 * smooth - 0.05 * density + 0.35
    classes = [fuel_class_for(v) for v in intensity]
    rank = np.array([c.rank for c in classes], dtype=float)
    cc = np.round(np.clip(12.0 * rank + rng.uniform(-5, 5, len(rank)), 0, 95) * (rank > 0), 1)
    ch = np.round(np.where(rank > 0, 2.0 + 2.5 * rank + rng.uniform(0, 2, len(rank)), 0.0), 1)
    cbh = np.round(np.where(rank > 0, np.maximum(0.3, 4.0 - 0.5 * rank
                                                 + rng.uniform(-0.3, 0.3, len(rank))), 0.0), 1)
    cbd = np.round(np.where(rank > 0, 0.02 * rank + rng.uniform(0, 0.02, len(rank)), 0.0), 3)
    return fx, fy, classes, np.column_stack([cbd, cbh, ch, cc]), intensity


def _exposure(bx, by, fx, fy, classes, radius=60.0):
    rank = np.array([c.rank for c in classes], dtype=float)
    d2 = (bx[:, None] - fx[None, :]) ** 2 + (by[:, None] - fy[None, :]) ** 2
    return ((d2 <= radius ** 2) * rank[None, :]).sum(axis=1)


def _embeddings(cfg: SynthConfig, rng):
    ex, ey = _grid(cfg.extent, cfg.embedding_spacing)
    wild = _zscore((ex + ey) / cfg.extent)
    wl = tuple(cfg.signal_wavelengths)
    signal = [0.6 * wild + 0.8 * FourierField(rng, wavelengths=wl)(ex, ey)]
    signal += [FourierField(rng, wavelengths=wl)(ex, ey) for _ in range(SIGNAL_DIM - 1)]
    signal = np.column_stack([_zscore(s) for s in signal])
    nuisance = np.column_stack([FourierField(rng, 12, (80.0, 500.0))(ex, ey)
                                for _ in range(N_NUISANCE)])
    nuisance = cfg.embedding_noise * nuisance + 0.05 * rng.standard_normal(nuisance.shape)
    q, r = np.linalg.qr(rng.standard_normal((EMBEDDING_DIM, EMBEDDING_DIM)))
    q = q * np.sign(np.diag(r))
    latent = np.column_stack([signal, nuisance])
    emb = np.round(latent @ q.T, 6)
    return ex, ey, emb, q[:, :SIGNAL_DIM]


def _structure(cfg: SynthConfig, rng, exposure, bx, by):
    vintage = FourierField(rng, 12, (150.0, 500.0))(bx, by)
    p_hard = _sigmoid(0.8 * vintage + cfg.hardening_bias * _zscore(exposure) + cfg.hardening_offset)
    hardened = rng.random(len(bx)) < p_hard
    attrs = {}
    for feat, (hard, soft) in _VARIANTS.items():
        follow = rng.random(len(bx)) < _FOLLOW[feat]
        state = np.where(follow, hardened, rng.random(len(bx)) < _BASE_RATE.get(feat, 0.5))
        pick_h = rng.integers(0, len(hard), len(bx))
        pick_s = rng.integers(0, len(soft), len(bx))
        attrs[feat] = [hard[h] if s else soft[k] for s, h, k in zip(state, pick_h, pick_s)]
    btype = [BUILDING_TYPES[i] for i in rng.integers(0, len(BUILDING_TYPES), len(bx))]
    return attrs, btype, hardened


def _fmt(v, nd=6) -> str:
    return f"{v:.{nd}f}"


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)] + [",".join(r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _building_rows(ids, lon, lat, area, btype, attrs, damage=None):
    feats = ("roof", "siding", "eaves", "vent_screen", "window", "deck_porch", "fence",
             "patio_cover")
    rows = []
    for i in range(len(ids)):
        r = [ids[i], _fmt(lon[i], 8), _fmt(lat[i], 8), _fmt(area[i], 1), btype[i]]
        r += [attrs[f][i] for f in feats]
        if damage is not None:
            r.append(damage[i])
        rows.append(r)
    header = ["id", "lon", "lat", "area_m2", "building_type", *feats]
    if damage is not None:
        header.append("damage")
    return header, rows


def bayes_auc(p_obs, rng, draws: int) -> float:
    """Expected AUC of the true label probability against labels drawn from it."""
    vals = []
    for _ in range(draws):
        y = (rng.random(len(p_obs)) < p_obs).astype(int)
        if 0 < y.sum() < len(y):
            vals.append(roc_auc(y, p_obs))
    return float(np.mean(vals))


def generate(cfg: SynthConfig, out_dir, env: Environment = Environment(),
             graph_cfg: GraphConfig = GraphConfig(), threads: int = 1) -> dict:
    """Write buildings.csv, fuel_grid.csv, embeddings.csv, terrain.csv and
    truth.json into ``out_dir``; returns the truth record."""
    from .io import load_scenario
    from .pipeline import prepare_nodes

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(8)]
    proj = LocalProjection(cfg.origin_lon, cfg.origin_lat)
    half = cfg.extent / 2.0

    bx, by, area = _place_buildings(cfg, streams[0])
    fx, fy, classes, canopy, _ = _fuel(cfg, streams[1], bx, by)
    ex, ey, emb, basis = _embeddings(cfg, streams[2])
    exposure = _exposure(bx, by, fx, fy, classes)
    attrs, btype, hardened = _structure(cfg, streams[3], exposure, bx, by)

    def lonlat(x, y):
        lon, lat = proj.inverse(np.asarray(x) - half, np.asarray(y) - half)
        return np.round(lon, 8), np.round(lat, 8)

    ids = [f"b{i:05d}" for i in range(cfg.n_buildings)]
    blon, blat = lonlat(bx, by)
    flon, flat = lonlat(fx, fy)
    elon, elat = lonlat(ex, ey)
    _write_csv(out / "fuel_grid.csv", ["x", "y", "fuel_class", "cbd", "cbh", "ch", "cc"],
               [[_fmt(flon[i], 8), _fmt(flat[i], 8), classes[i].value,
                 _fmt(canopy[i, 0], 3), _fmt(canopy[i, 1], 1), _fmt(canopy[i, 2], 1),
                 _fmt(canopy[i, 3], 1)] for i in range(len(fx))])
    _write_csv(out / "embeddings.csv", ["lon", "lat"] + [f"e{k}" for k in range(EMBEDDING_DIM)],
               [[_fmt(elon[i], 8), _fmt(elat[i], 8)] + [_fmt(v) for v in emb[i]]
                for i in range(len(ex))])
    terr_rng = streams[4]
    tx, ty = _grid(cfg.extent, cfg.fuel_spacing)
    tlon, tlat = lonlat(tx, ty)
    elev = 350.0 + 60.0 * FourierField(terr_rng, 12, (300.0, 900.0))(tx, ty) + 0.1 * (tx + ty)
    slope = np.clip(12.0 + 8.0 * FourierField(terr_rng, 12, (200.0, 600.0))(tx, ty), 0.0, 45.0)
    _write_csv(out / "terrain.csv", ["lon", "lat", "slope_deg", "elevation_m"],
               [[_fmt(tlon[i], 8), _fmt(tlat[i], 8), _fmt(slope[i], 2), _fmt(elev[i], 2)]
                for i in range(len(tx))])
    header, rows = _building_rows(ids, blon, blat, area, btype, attrs)
    _write_csv(out / "buildings.csv", header, rows)

    # latent scores measured through the regular loaders and graph builder
    scenario = load_scenario(out)
    nodes = prepare_nodes(scenario, graph_cfg)
    graph = build_graph(nodes, env, graph_cfg, threads=threads)
    bidx = graph.building_idx
    pressure = degree_centrality(graph)[bidx]
    emb_b = np.array([graph.nodes[i].embedding for i in bidx])
    env_weights = np.array([1.0, 0.6, -0.5, 0.3])
    env_raw = (emb_b @ basis) @ env_weights
    eaves = np.array([graph.nodes[i].structural[2] for i in bidx])

    env_z, struct_z, press_z = _zscore(env_raw), _zscore(eaves), _zscore(pressure)
    logit = (cfg.intercept + cfg.environmental_strength * env_z
             + cfg.structural_strength * struct_z + cfg.contagion_strength * press_z)
    # defenders concentrate where ignition pressure is highest
    q_defend = cfg.suppression_rate * (pressure >= np.quantile(pressure, cfg.suppression_quantile))
    p_true = _sigmoid(logit) * (1.0 - q_defend)
    lab_rng = streams[5]
    defended = lab_rng.random(cfg.n_buildings) < q_defend
    burned = lab_rng.random(cfg.n_buildings) < _sigmoid(logit)
    y = (burned & ~defended).astype(int)
    flip = lab_rng.random(cfg.n_buildings) < cfg.label_noise
    y = np.where(flip, 1 - y, y)
    p_obs = (1 - 2 * cfg.label_noise) * p_true + cfg.label_noise
    dmg_pick = lab_rng.choice(len(DAMAGE_NAMES), cfg.n_buildings, p=DAMAGE_WEIGHTS)
    damage = [DAMAGE_NAMES[k] if lab else "No Damage" for lab, k in zip(y, dmg_pick)]
    header, rows = _building_rows(ids, blon, blat, area, btype, attrs, damage)
    _write_csv(out / "buildings.csv", header, rows)

    truth = {
        "config": asdict(cfg),
        "n_nodes": graph.n_nodes,
        "n_edges": graph.n_edges,
        "signal_basis": np.round(basis, 12).tolist(),
        "env_weights": env_weights.tolist(),
        "label_model": {"intercept": cfg.intercept, "environmental": cfg.environmental_strength,
                        "structural": cfg.structural_strength,
                        "contagion": cfg.contagion_strength, "noise": cfg.label_noise,
                        "suppression_rate": cfg.suppression_rate,
                        "suppression_quantile": cfg.suppression_quantile},
        "standardization": {
            "env": [float(env_raw.mean()), float(env_raw.std())],
            "eaves": [float(eaves.mean()), float(eaves.std())],
            "pressure": [float(pressure.mean()), float(pressure.std())],
        },
        "buildings": {
            "id": ids,
            "env": env_z.tolist(), "struct": struct_z.tolist(), "pressure": pressure.tolist(),
            "pressure_z": press_z.tolist(), "logit": logit.tolist(), "p_true": p_true.tolist(),
            "p_obs": p_obs.tolist(), "label": y.tolist(), "flipped": flip.astype(int).tolist(),
            "hardened": hardened.astype(int).tolist(),
            "q_defend": q_defend.tolist(), "defended": defended.astype(int).tolist(),
        },
        "prevalence": float(y.mean()),
        "bayes_auc": bayes_auc(p_obs, streams[6], cfg.bayes_draws),
        "realized_auc": roc_auc(y, p_obs) if 0 < y.sum() < len(y) else None,
    }
    (out / "truth.json").write_text(json.dumps(truth, sort_keys=True, indent=1) + "\n",
                                    encoding="utf-8")
    return truth


def structural_config(**changes) -> SynthConfig:
    """Preset where labels follow the structural features alone."""
    base = SynthConfig(environmental_strength=0.0, contagion_strength=0.0,
                       structural_strength=3.0, hardening_bias=0.0, hardening_offset=0.0,
                       suppression_rate=0.0)
    return replace(base, **changes)


def separable_graph(n: int = 50, seed: int = 0) -> ContagionGraph:
    """Small labelled graph whose labels threshold embedding coordinate 0.

    Every node receives edges only from nodes of its own class, so the
    neighbourhood aggregate is linearly separable as well.
    """
    if n < 10:
        raise ValueError("n must be >= 10")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))
    labels = np.zeros(n, dtype=int)
    labels[rng.permutation(n)[: n // 2]] = 1
    emb = rng.standard_normal((n, EMBEDDING_DIM))
    emb[:, 0] = np.where(labels == 1, 1.0, -1.0) * (0.5 + np.abs(emb[:, 0]))
    pos = rng.uniform(0, 200, (n, 2))
    nodes = []
    for i in range(n):
        e = emb[i].copy()
        e.setflags(write=False)
        nodes.append(Node(id=f"s{i:03d}", kind=NodeKind.BUILDING, x=float(pos[i, 0]),
                          y=float(pos[i, 1]), lon=math.nan, lat=math.nan,
                          fuel_class=FuelClass.MODERATE, area=150.0, volume=750.0,
                          structural=(1.0,) * 8, access=0.5, embedding=e,
                          label=int(labels[i]), building_type="single_residence"))
    src, dst = [], []
    for i in range(n):
        same = np.flatnonzero((labels == labels[i]) & (np.arange(n) != i))
        for j in np.sort(rng.choice(same, size=min(3, len(same)), replace=False)):
            src.append(int(j))
            dst.append(i)
    order = np.lexsort((dst, src))
    src, dst = np.array(src)[order], np.array(dst)[order]
    p = rng.uniform(0.25, 1.0, (len(src), 3))
    total = 1 - np.prod(1 - p, axis=1)
    return ContagionGraph(nodes=tuple(nodes), src=src, dst=dst, p_conv=p[:, 0], p_rad=p[:, 1],
                          p_ember=p[:, 2], p_total=total)
