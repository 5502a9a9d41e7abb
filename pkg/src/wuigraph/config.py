"""Scenario configuration: one JSON document holding every tunable."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

from .catalogs import DEFAULT_CATALOGS, Catalogs
from .gat import TrainConfig
from .gbdt import GbdtConfig
from .graph import GraphConfig, SplitConfig
from .physics import EmberParams, Environment, RadiationMode


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StackerConfig:
    tol: float = 1e-8
    max_iter: int = 100
    threshold: float = 0.5

    def __post_init__(self):
        if not (self.tol > 0 and self.max_iter >= 1 and 0 < self.threshold < 1):
            raise ValueError("stacker: need tol > 0, max_iter >= 1, threshold in (0, 1)")


def _build(cls, data: Mapping, where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _physics_from_dict(d: Mapping) -> Environment:
    d = dict(d)
    ember = _build(EmberParams, d.pop("ember", {}), "physics.ember")
    if "ambient_temperature" in d:
        d["ambient_temperature"] = tuple(d["ambient_temperature"])
    return replace(_build(Environment, d, "physics"), ember=ember)


def _physics_to_dict(env: Environment) -> dict:
    d = asdict(env)
    d["ambient_temperature"] = list(env.ambient_temperature)
    d["ember"]["radiation_mode"] = RadiationMode(env.ember.radiation_mode).value
    return d


@dataclass(frozen=True)
class ScenarioConfig:
    physics: Environment = field(default_factory=Environment)
    graph: GraphConfig = field(default_factory=GraphConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    gnn: TrainConfig = field(default_factory=TrainConfig)
    gbdt: GbdtConfig = field(default_factory=GbdtConfig)
    stacker: StackerConfig = field(default_factory=StackerConfig)
    catalogs: Mapping = field(default_factory=dict)

    BLOCKS = ("physics", "graph", "split", "gnn", "gbdt", "stacker", "catalogs")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioConfig":
        if not isinstance(d, Mapping):
            raise ConfigError("config: expected a JSON object")
        unknown = sorted(set(d) - set(cls.BLOCKS))
        if unknown:
            raise ConfigError(f"config: unknown block(s) {', '.join(unknown)}")
        out = cls()
        if "physics" in d:
            out = replace(out, physics=_physics_from_dict(d["physics"]))
        if "graph" in d:
            out = replace(out, graph=_build(GraphConfig, d["graph"], "graph"))
        if "split" in d:
            s = dict(d["split"])
            if "ratios" in s:
                s["ratios"] = tuple(s["ratios"])
            out = replace(out, split=_build(SplitConfig, s, "split"))
        if "gnn" in d:
            g = dict(d["gnn"])
            if "mlp_hidden" in g:
                g["mlp_hidden"] = tuple(g["mlp_hidden"])
            out = replace(out, gnn=_build(TrainConfig, g, "gnn"))
        if "gbdt" in d:
            out = replace(out, gbdt=_build(GbdtConfig, d["gbdt"], "gbdt"))
        if "stacker" in d:
            out = replace(out, stacker=_build(StackerConfig, d["stacker"], "stacker"))
        if "catalogs" in d:
            try:
                DEFAULT_CATALOGS.with_overrides(d["catalogs"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"catalogs: {exc}") from exc
            out = replace(out, catalogs=json.loads(json.dumps(d["catalogs"])))
        return out

    def to_dict(self) -> dict:
        split = asdict(self.split)
        split["ratios"] = list(split["ratios"])
        gnn = asdict(self.gnn)
        gnn["mlp_hidden"] = list(gnn["mlp_hidden"])
        return {
            "physics": _physics_to_dict(self.physics),
            "graph": asdict(self.graph),
            "split": split,
            "gnn": gnn,
            "gbdt": asdict(self.gbdt),
            "stacker": asdict(self.stacker),
            "catalogs": json.loads(json.dumps(self.catalogs)),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def resolved_catalogs(self) -> Catalogs:
        return DEFAULT_CATALOGS.with_overrides(self.catalogs) if self.catalogs else DEFAULT_CATALOGS

    def with_seed(self, seed: int) -> "ScenarioConfig":
        """Same configuration with every stochastic component seeded by ``seed``."""
        seed = int(seed)
        return replace(
            self,
            graph=replace(self.graph, seed=seed),
            split=replace(self.split, seed=seed),
            gnn=replace(self.gnn, seed=seed),
            gbdt=replace(self.gbdt, seed=seed),
        )


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: no such config file") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from exc
    try:
        return ScenarioConfig.from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def write_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(cfg.to_json(), encoding="utf-8")
