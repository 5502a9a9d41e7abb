"""Contagion graph construction: nodes, features, pruned Monte Carlo edges, splits."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .catalogs import DEFAULT_CATALOGS, Catalogs, FuelClass, Material, VEGETATION_CELL_AREA
from .nodes import CANOPY_FIELDS, EMBEDDING_DIM, Node, NodeKind
from .physics import Environment, monte_carlo_edges
from .spatial import SpatialIndex

log = logging.getLogger(__name__)


class MissingDataError(ValueError):
    pass


class StratificationError(ValueError):
    pass


@dataclass(frozen=True)
class GraphConfig:
    candidate_radius: float = 200.0
    prune_threshold: float = 0.25
    mc_samples: int = 100
    vegetation_spacing: float = 30.0
    embedding_snap: float = 50.0
    building_fuel_radius: float = 30.0
    default_building_fuel: str = "Moderate"
    seed: int = 0

    def __post_init__(self):
        if not self.candidate_radius > 0 or not self.vegetation_spacing > 0:
            raise ValueError("radius and spacing must be positive")
        if not 0 <= self.prune_threshold <= 1:
            raise ValueError("prune_threshold must be in [0, 1]")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        if len(r) != 3 or min(r) < 0 or abs(sum(r) - 1.0) > 1e-9:
            raise ValueError("split ratios must be three non-negative numbers summing to 1")
        object.__setattr__(self, "ratios", r)


# --- point sources ----------------------------------------------------------

class PointSource:
    """Samples at projected points with nearest-neighbour lookup."""

    def __init__(self, x, y, values, lon=None, lat=None):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.lon = None if lon is None else np.asarray(lon, dtype=float)
        self.lat = None if lat is None else np.asarray(lat, dtype=float)
        self.values = values
        if len(self.x) == 0:
            raise MissingDataError("empty point source")
        self._tree = cKDTree(np.column_stack([self.x, self.y]))

    def __len__(self):
        return len(self.x)

    def nearest(self, x: float, y: float) -> tuple[int, float]:
        d, i = self._tree.query([x, y])
        return int(i), float(d)

    def within(self, x: float, y: float, r: float) -> list[int]:
        return sorted(self._tree.query_ball_point([x, y], r))


class FuelGrid(PointSource):
    def __init__(self, x, y, classes: Sequence[FuelClass], canopy=None, lon=None, lat=None):
        classes = [FuelClass(c) for c in classes]
        super().__init__(x, y, classes, lon, lat)
        n = len(classes)
        self.canopy = (np.full((n, len(CANOPY_FIELDS)), math.nan) if canopy is None
                       else np.asarray(canopy, dtype=float).reshape(n, len(CANOPY_FIELDS)))

    @property
    def extent(self):
        return (float(self.x.min()), float(self.y.min()), float(self.x.max()), float(self.y.max()))


class EmbeddingField(PointSource):
    def __init__(self, x, y, vectors, lon=None, lat=None):
        vectors = np.asarray(vectors, dtype=float)
        if vectors.ndim != 2 or vectors.shape[1] != EMBEDDING_DIM:
            raise MissingDataError(f"embeddings must have {EMBEDDING_DIM} columns")
        super().__init__(x, y, vectors, lon, lat)


class Terrain(PointSource):
    def __init__(self, x, y, slope, elevation, lon=None, lat=None):
        super().__init__(x, y, np.column_stack([slope, elevation]).astype(float), lon, lat)


# --- nodes --------------------------------------------------------------------

def lattice(extent, spacing: float):
    """Boundary-inclusive lattice anchored at the extent's min corner."""
    xmin, ymin, xmax, ymax = extent
    if xmax < xmin or ymax < ymin:
        return np.empty(0), np.empty(0)
    nx = int(math.floor((xmax - xmin) / spacing + 1e-9)) + 1
    ny = int(math.floor((ymax - ymin) / spacing + 1e-9)) + 1
    return xmin + spacing * np.arange(nx), ymin + spacing * np.arange(ny)


def discretize_vegetation(fuel_grid: FuelGrid, extent=None, spacing: float = 30.0,
                          catalogs: Catalogs = DEFAULT_CATALOGS, projection=None) -> list[Node]:
    """One vegetation node per lattice point, NonBurnable points dropped."""
    if fuel_grid is None or len(fuel_grid) == 0:
        return []
    extent = fuel_grid.extent if extent is None else extent
    xs, ys = lattice(extent, spacing)
    nodes = []
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            k, dist = fuel_grid.nearest(x, y)
            if dist > spacing:
                continue
            fc = fuel_grid.values[k]
            if not fc.burnable:
                continue
            if projection is not None:
                lon, lat = projection.inverse(x, y)
                lon, lat = float(lon), float(lat)
            else:
                lon, lat = math.nan, math.nan
            nodes.append(Node(
                id=f"veg_{j:04d}_{i:04d}", kind=NodeKind.VEGETATION,
                x=float(x), y=float(y), lon=lon, lat=lat,
                fuel_class=fc, area=VEGETATION_CELL_AREA,
                volume=catalogs.vegetation_volume(fc), material=Material.VEGETATION,
                canopy=tuple(float(v) for v in fuel_grid.canopy[k]),
            ))
    return nodes


def building_fuel_class(node: Node, fuel_grid: FuelGrid | None, radius: float,
                        default: FuelClass) -> tuple[FuelClass, tuple]:
    """Most intense burnable fuel class within ``radius`` of the building."""
    if fuel_grid is None:
        return default, node.canopy
    best, canopy = None, node.canopy
    for k in fuel_grid.within(node.x, node.y, radius):
        fc = fuel_grid.values[k]
        if fc.burnable and (best is None or fc.rank > best.rank):
            best, canopy = fc, tuple(float(v) for v in fuel_grid.canopy[k])
    if best is None:
        k, _ = fuel_grid.nearest(node.x, node.y)
        return default, tuple(float(v) for v in fuel_grid.canopy[k])
    return best, canopy


def assign_sources(node: Node, embeddings: EmbeddingField, terrain: Terrain | None,
                   snap: float = 50.0) -> Node:
    k, d = embeddings.nearest(node.x, node.y)
    if d > snap:
        raise MissingDataError(
            f"node {node.id}: no embedding sample within {snap} m (nearest {d:.1f} m)")
    slope, elev = 0.0, 0.0
    if terrain is not None:
        t, dt = terrain.nearest(node.x, node.y)
        if dt > snap:
            raise MissingDataError(
                f"node {node.id}: no terrain sample within {snap} m (nearest {dt:.1f} m)")
        slope, elev = (float(v) for v in terrain.values[t])
    emb = np.array(embeddings.values[k], dtype=float)
    emb.setflags(write=False)
    return replace(node, embedding=emb, slope=slope, elevation=elev)


def assemble_features(node: Node, embeddings: EmbeddingField, terrain: Terrain | None,
                      snap: float = 50.0) -> np.ndarray:
    return assign_sources(node, embeddings, terrain, snap).features()


# --- graph ----------------------------------------------------------------------

def _readonly(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ContagionGraph:
    nodes: tuple
    src: np.ndarray
    dst: np.ndarray
    p_conv: np.ndarray
    p_rad: np.ndarray
    p_ember: np.ndarray
    p_total: np.ndarray
    masks: Mapping[str, np.ndarray] = field(default_factory=dict)
    n_candidates: int = 0
    config_hash: str = ""

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        for name in ("src", "dst"):
            object.__setattr__(self, name, _readonly(getattr(self, name), np.int64))
        for name in ("p_conv", "p_rad", "p_ember", "p_total"):
            object.__setattr__(self, name, _readonly(getattr(self, name), np.float64))
        object.__setattr__(self, "masks", {k: _readonly(v, np.int64) for k, v in self.masks.items()})

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def edge_features(self) -> np.ndarray:
        """(E, 4) columns p_total, p_conv, p_rad, p_ember."""
        return np.column_stack([self.p_total, self.p_conv, self.p_rad, self.p_ember])

    @property
    def building_idx(self) -> np.ndarray:
        return np.array([i for i, n in enumerate(self.nodes) if n.is_building], dtype=np.int64)

    def labels(self) -> np.ndarray:
        """Per-node label, NaN where unlabeled."""
        return np.array([math.nan if n.label is None else float(n.label) for n in self.nodes])

    def features(self) -> np.ndarray:
        return np.vstack([n.features() for n in self.nodes]) if self.nodes else np.empty((0, 74))

    def index_of(self, node_id) -> int:
        for i, n in enumerate(self.nodes):
            if n.id == node_id:
                return i
        raise KeyError(node_id)

    def in_edges(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.dst == i)

    def with_masks(self, masks: Mapping[str, np.ndarray]) -> "ContagionGraph":
        return replace(self, masks=dict(masks))


_WORKER = {}


def _init_worker(nodes, env, cfg, catalogs, xy):
    _WORKER.update(nodes=nodes, env=env, cfg=cfg, catalogs=catalogs,
                   index=SpatialIndex(xy, cell_size=cfg.candidate_radius))


def _edges_for_sources(sources: Sequence[int]):
    nodes, env, cfg, catalogs = (_WORKER[k] for k in ("nodes", "env", "cfg", "catalogs"))
    index = _WORKER["index"]
    out, n_cand, n_coincident = [], 0, 0
    for i in sources:
        src = nodes[i]
        cand = index.query_indices((src.x, src.y), cfg.candidate_radius, exclude=i)
        if len(cand):
            d = np.hypot(index.xy[cand, 0] - src.x, index.xy[cand, 1] - src.y)
            n_coincident += int(np.sum(d == 0))
            cand = cand[d > 0]
        n_cand += len(cand)
        if not len(cand):
            continue
        w = monte_carlo_edges(src, [nodes[j] for j in cand], env, cfg.mc_samples, cfg.seed, catalogs)
        keep = w[:, 3] >= cfg.prune_threshold
        for j, row in zip(cand[keep], w[keep]):
            out.append((i, int(j), *row))
    return out, n_cand, n_coincident


def candidate_pairs(nodes: Sequence[Node], radius: float):
    """All ordered (i, j) with burnable i, i != j, 0 < distance <= radius."""
    xy = np.array([[n.x, n.y] for n in nodes]).reshape(-1, 2)
    index = SpatialIndex(xy, cell_size=radius)
    pairs = []
    for i, n in enumerate(nodes):
        if not n.burnable:
            continue
        for j in index.query_indices((n.x, n.y), radius, exclude=i):
            if xy[j, 0] != n.x or xy[j, 1] != n.y:
                pairs.append((i, int(j)))
    return pairs


def build_graph(nodes: Sequence[Node], env: Environment, config: GraphConfig = GraphConfig(),
                catalogs: Catalogs = DEFAULT_CATALOGS, threads: int = 1,
                config_hash: str = "") -> ContagionGraph:
    """Evaluate every burnable ordered pair within the candidate radius and keep
    edges whose total transmission probability reaches the prune threshold."""
    nodes = list(nodes)
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate node ids")
    if not any(n.is_building for n in nodes):
        raise ValueError("graph needs at least one building node")
    xy = np.array([[n.x, n.y] for n in nodes]).reshape(-1, 2)
    sources = [i for i, n in enumerate(nodes) if n.burnable]
    args = (nodes, env, config, catalogs, xy)
    threads = max(1, int(threads))
    if threads == 1 or len(sources) < 2:
        _init_worker(*args)
        results = [_edges_for_sources(sources)]
    else:
        chunks = [c.tolist() for c in np.array_split(np.asarray(sources), threads * 4) if len(c)]
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                 initargs=args) as pool:
            results = list(pool.map(_edges_for_sources, chunks))
    rows = [r for res in results for r in res[0]]
    n_cand = sum(res[1] for res in results)
    n_coincident = sum(res[2] for res in results)
    if n_coincident:
        log.warning("skipped %d coincident node pairs", n_coincident)
    rows.sort(key=lambda r: (r[0], r[1]))
    arr = np.array(rows, dtype=float).reshape(-1, 6)
    log.info("graph: %d nodes, %d candidate pairs, %d edges kept", len(nodes), n_cand, len(arr))
    return ContagionGraph(
        nodes=tuple(nodes), src=arr[:, 0].astype(np.int64), dst=arr[:, 1].astype(np.int64),
        p_conv=arr[:, 2], p_rad=arr[:, 3], p_ember=arr[:, 4], p_total=arr[:, 5],
        n_candidates=n_cand, config_hash=config_hash,
    )


def split_dataset(graph_or_nodes, ratios=(0.7, 0.15, 0.15), seed: int = 0) -> dict:
    """Stratified train/val/test node positions over labeled buildings."""
    nodes = graph_or_nodes.nodes if isinstance(graph_or_nodes, ContagionGraph) else graph_or_nodes
    cfg = SplitConfig(tuple(ratios), seed)
    labeled = [(i, n.label) for i, n in enumerate(nodes) if n.is_building and n.label is not None]
    if len(labeled) < 10:
        raise StratificationError(f"need at least 10 labeled buildings, got {len(labeled)}")
    rng = np.random.default_rng(cfg.seed)
    masks = {"train": [], "val": [], "test": []}
    for cls in (0, 1):
        idx = np.array([i for i, lab in labeled if lab == cls], dtype=np.int64)
        if len(idx) == 0:
            raise StratificationError(f"label class {cls} absent; cannot stratify")
        idx = rng.permutation(idx)
        n_tr = int(round(cfg.ratios[0] * len(idx)))
        n_va = min(int(round(cfg.ratios[1] * len(idx))), len(idx) - n_tr)
        if cfg.ratios[2] == 0:
            n_va = len(idx) - n_tr
        masks["train"].extend(idx[:n_tr])
        masks["val"].extend(idx[n_tr:n_tr + n_va])
        masks["test"].extend(idx[n_tr + n_va:])
    return {k: np.sort(np.asarray(v, dtype=np.int64)) for k, v in masks.items()}
