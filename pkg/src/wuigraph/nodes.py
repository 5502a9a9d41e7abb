from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .catalogs import FuelClass, Material

EMBEDDING_DIM = 64
N_TOPO = 2
N_STRUCTURAL = 8
N_FEATURES = EMBEDDING_DIM + N_TOPO + N_STRUCTURAL  # 74

# Slot layout of the node feature vector (0-based, half-open).
EMBEDDING_SLOTS = slice(0, EMBEDDING_DIM)
TOPO_SLOTS = slice(EMBEDDING_DIM, EMBEDDING_DIM + N_TOPO)
STRUCTURAL_SLOTS = slice(EMBEDDING_DIM + N_TOPO, N_FEATURES)

CANOPY_FIELDS = ("cbd", "cbh", "ch", "cc")


class NodeKind(str, enum.Enum):
    BUILDING = "Building"
    VEGETATION = "Vegetation"


@dataclass(frozen=True, eq=False)
class Node:
    id: str
    kind: NodeKind
    x: float
    y: float
    lon: float
    lat: float
    fuel_class: FuelClass
    area: float
    volume: float
    material: Material = Material.VEGETATION
    structural: tuple = (0.0,) * N_STRUCTURAL
    access: float = 1.0
    embedding: Optional[np.ndarray] = None
    slope: float = 0.0
    elevation: float = 0.0
    label: Optional[int] = None
    building_type: str = ""
    canopy: tuple = (math.nan,) * len(CANOPY_FIELDS)
    attrs: dict = field(default_factory=dict)

    @property
    def is_building(self) -> bool:
        return self.kind is NodeKind.BUILDING

    @property
    def burnable(self) -> bool:
        return self.fuel_class.burnable

    @property
    def location(self):
        from .spatial import GeoPoint
        return GeoPoint(self.x, self.y)

    def features(self) -> np.ndarray:
        """The 74-entry vector: 64 embedding | slope, elevation | 8 structural."""
        if self.embedding is None:
            raise ValueError(f"node {self.id}: embedding not assigned")
        out = np.empty(N_FEATURES)
        out[EMBEDDING_SLOTS] = self.embedding
        out[TOPO_SLOTS] = (self.slope, self.elevation)
        out[STRUCTURAL_SLOTS] = self.structural if self.is_building else 0.0
        return out
