"""Building-to-building heat-transfer probabilities.

Convection, radiation and ember spotting are evaluated per directed node
pair and combined as a noisy-OR. ``monte_carlo_edges`` averages them over
uniformly sampled fuel/material parameters with one RNG stream per pair, so
results do not depend on evaluation order or worker count.
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .catalogs import ACCESS_FEATURES, DEFAULT_CATALOGS, MAX_FEATURE_SCORE, STRUCTURAL_FEATURES, Catalogs
from .nodes import Node
from .spatial import GeometryError, bearings

NEVER_IGNITES = math.inf


class RadiationMode(str, enum.Enum):
    PAPER_LITERAL = "PaperLiteral"  # 1 - F(t_r - t_ig)
    MONOTONE = "Monotone"  # F(t_r - t_ig)


@dataclass(frozen=True)
class EmberParams:
    v_ref: float = 10.0
    lambda0: float = 75.0
    volume_ref: float = 500.0
    volume_exponent: float = 0.25
    radiation_timing_sigma: float = 60.0
    radiation_mode: RadiationMode = RadiationMode.PAPER_LITERAL

    def __post_init__(self):
        for name in ("v_ref", "lambda0", "volume_ref", "volume_exponent", "radiation_timing_sigma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "radiation_mode", RadiationMode(self.radiation_mode))


@dataclass(frozen=True)
class Environment:
    wind_speed: float = 22.2
    wind_direction: float = 225.0
    ambient_temperature: tuple = (298.15, 303.15)
    gravity: float = 9.81
    stefan_boltzmann: float = 5.67e-8
    emissivity: float = 0.95
    d_th_radiation: float = 60.0
    ember: EmberParams = field(default_factory=EmberParams)
    radiation_area: str = "target"

    def __post_init__(self):
        if not self.wind_speed >= 0:
            raise ValueError("wind_speed must be >= 0")
        if not 0 <= self.wind_direction < 360:
            raise ValueError("wind_direction must be in [0, 360)")
        if not 0 < self.emissivity <= 1:
            raise ValueError("emissivity must be in (0, 1]")
        if not self.d_th_radiation > 0:
            raise ValueError("d_th_radiation must be positive")
        lo, hi = self.ambient_temperature
        if not 0 < lo <= hi:
            raise ValueError("ambient_temperature must be an increasing positive range")
        if self.radiation_area not in ("target", "source"):
            raise ValueError("radiation_area must be 'target' or 'source'")
        object.__setattr__(self, "ambient_temperature", (float(lo), float(hi)))


@dataclass(frozen=True)
class EdgeWeights:
    p_conv: float
    p_rad: float
    p_ember: float
    p_total: float

    def as_tuple(self):
        return (self.p_total, self.p_conv, self.p_rad, self.p_ember)


# --- single mechanisms (scalar or array inputs) -----------------------------

def angular_difference(a, b):
    """|a - b| wrapped onto [0, 180] degrees."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)


def wind_correlation(edge_bearing, wind_direction):
    delta = angular_difference(edge_bearing, wind_direction)
    # quantised to 1e-12 so table angles give exact cosines (cos 60 deg == 0.5)
    c = np.round(np.cos(np.radians(delta)), 12)
    out = np.where(delta < 90.0, c, 0.0)
    return float(out) if out.ndim == 0 else out


def flame_angle(h_f, ws, g=9.81):
    h_f = np.asarray(h_f, dtype=float)
    if np.any(h_f <= 0):
        raise ValueError("flame height must be positive")
    out = np.arctan(np.sqrt(1.5 * ws ** 2 / (g * h_f)))
    return float(out) if out.ndim == 0 else out


def convection_distance(h_f, f_cc, ws, g=9.81):
    h_f = np.asarray(h_f, dtype=float)
    safe_h = np.where(h_f > 0, h_f, 1.0)
    theta = np.arctan(np.sqrt(1.5 * ws ** 2 / (g * safe_h)))
    return np.where(h_f > 0, f_cc * h_f * np.tan(theta), 0.0)


def convection_probability(d, h_f, f_cc, env: Environment):
    out = np.where(np.asarray(d) <= convection_distance(h_f, f_cc, env.wind_speed, env.gravity),
                   1.0, 0.0)
    return float(out) if out.ndim == 0 else out


def incident_flux(target_area, d_min, t_flame, t_ambient, env: Environment):
    """Radiant flux on the target in kW/m2 (never negative)."""
    d_min = np.asarray(d_min, dtype=float)
    if np.any(d_min <= 0):
        raise GeometryError("radiation distance must be positive")
    watts = (np.asarray(target_area, dtype=float) / (math.pi * d_min ** 2)
             * env.stefan_boltzmann * env.emissivity
             * (np.asarray(t_flame, dtype=float) ** 4 - np.asarray(t_ambient, dtype=float) ** 4))
    out = np.maximum(watts / 1000.0, 0.0)
    return float(out) if out.ndim == 0 else out


def ignition_time(flux, q_critical, ftp, n):
    """Seconds to ignition, ``inf`` when the flux never exceeds the critical flux."""
    flux = np.asarray(flux, dtype=float)
    excess = flux - q_critical
    ok = excess > 0
    out = np.where(ok, ftp / np.where(ok, excess, 1.0) ** n, NEVER_IGNITES)
    return float(out) if out.ndim == 0 else out


def radiation_probability(d_min, t_r, t_ig, env: Environment):
    ep = env.ember
    t_r = np.asarray(t_r, dtype=float)
    t_ig = np.asarray(t_ig, dtype=float)
    finite = np.isfinite(t_ig)
    lag = np.where(finite, t_r - np.where(finite, t_ig, 0.0), -1.0)
    cdf = ndtr(lag / ep.radiation_timing_sigma)
    p = cdf if ep.radiation_mode is RadiationMode.MONOTONE else 1.0 - cdf
    active = (np.asarray(d_min) <= env.d_th_radiation) & finite & (t_r >= t_ig)
    out = np.where(active, p, 0.0)
    return float(out) if out.ndim == 0 else out


def ember_distribution(volume, d, v_w, p: EmberParams):
    volume = np.asarray(volume, dtype=float)
    d = np.asarray(d, dtype=float)
    ok = (volume > 0) & (np.asarray(v_w) > 0)
    scale = np.minimum(1.0, (np.where(ok, volume, 0.0) / p.volume_ref) ** p.volume_exponent)
    decay_len = p.lambda0 * np.where(ok, v_w, 1.0) / p.v_ref
    out = np.where(ok, scale * np.exp(-d / decay_len), 0.0)
    return float(out) if out.ndim == 0 else out


def access_probability_from_scores(scores: Sequence[float]) -> float:
    if len(scores) == 0:
        return 1.0
    return min(1.0, max(0.0, float(np.mean(scores)) / MAX_FEATURE_SCORE))


def access_probability(target) -> float:
    """Ember access for a node; vegetation is always fully exposed.

    Accepts a Node or a mapping of the access features to their scores.
    """
    if isinstance(target, Node):
        if not target.is_building:
            return 1.0
        scores = dict(zip(STRUCTURAL_FEATURES, target.structural))
    else:
        scores = dict(target)
    return access_probability_from_scores([scores[f] for f in ACCESS_FEATURES if f in scores])


def ember_probability(g, p_acc, f_cc):
    return g * p_acc * f_cc


def total_probability(p_conv, p_rad, p_ember):
    """Noisy-OR, accumulated one mechanism at a time so a lone non-zero
    component is returned exactly."""
    t = p_conv + p_rad * (1.0 - p_conv)
    t = t + p_ember * (1.0 - t)
    return np.clip(t, 0.0, 1.0) if isinstance(t, np.ndarray) else min(1.0, max(0.0, t))


# --- Monte Carlo ------------------------------------------------------------

def stable_id_hash(node_id) -> int:
    h = hashlib.blake2b(str(node_id).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little")


def edge_rng(seed: int, source_id, target_id) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(stable_id_hash(source_id),
                                                       stable_id_hash(target_id)))
    return np.random.Generator(np.random.PCG64(ss))


N_DRAWS = 7  # flame length, residence time, flame temp, ambient temp, q_cr, ftp, n


def _uniform(rng_u, lo_hi):
    lo, hi = lo_hi
    return lo + rng_u * (hi - lo)


def monte_carlo_edges(source: Node, targets: Sequence[Node], env: Environment,
                      n_samples: int = 100, seed: int = 0,
                      catalogs: Catalogs = DEFAULT_CATALOGS) -> np.ndarray:
    """Mean (p_conv, p_rad, p_ember, p_total) for ``source`` -> each target.

    Returns an array of shape (len(targets), 4).
    """
    if not source.burnable:
        raise ValueError(f"source {source.id} is NonBurnable; it has no outgoing edges")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    m = len(targets)
    if m == 0:
        return np.empty((0, 4))
    tx = np.array([t.x for t in targets])
    ty = np.array([t.y for t in targets])
    dx, dy = tx - source.x, ty - source.y
    d = np.hypot(dx, dy)
    if np.any(d == 0):
        bad = targets[int(np.argmax(d == 0))]
        raise GeometryError(f"degenerate edge {source.id}->{bad.id}: coincident nodes")
    for t in targets:
        if t.id == source.id:
            raise ValueError(f"self-edge requested for {source.id}")

    flame = catalogs.fuel_class_params(source.fuel_class)
    f_cc = np.asarray(wind_correlation(bearings(dx, dy), env.wind_direction), dtype=float)
    ws = env.wind_speed
    p_acc = np.array([t.access if t.is_building else 1.0 for t in targets])
    g = np.asarray(ember_distribution(source.volume, d, ws, env.ember), dtype=float)
    p_ember = ember_probability(g, p_acc, f_cc)

    conv_bound = convection_distance(flame.flame_length[1], f_cc, ws, env.gravity)
    stochastic = (d <= env.d_th_radiation) | (d <= conv_bound * (1 + 1e-9) + 1e-9)

    u = np.full((m, N_DRAWS, n_samples), 0.5)
    for k in np.flatnonzero(stochastic):
        u[k] = edge_rng(seed, source.id, targets[k].id).random((N_DRAWS, n_samples))

    h_f = _uniform(u[:, 0], flame.flame_length)
    t_res = _uniform(u[:, 1], flame.residence_time)
    t_flame = _uniform(u[:, 2], flame.flame_temperature)
    t_amb = _uniform(u[:, 3], env.ambient_temperature)
    props = [catalogs.material_props(t.material) for t in targets]
    q_cr = _uniform(u[:, 4], np.array([p.q_critical for p in props]).T[:, :, None])
    ftp = _uniform(u[:, 5], np.array([p.ftp for p in props]).T[:, :, None])
    n_idx = _uniform(u[:, 6], np.array([p.ftp_index_n for p in props]).T[:, :, None])

    dd = d[:, None]
    pc = np.where(dd <= convection_distance(h_f, f_cc[:, None], ws, env.gravity), 1.0, 0.0)
    if env.radiation_area == "target":
        area = np.array([t.area for t in targets])[:, None]
    else:
        area = np.full((m, 1), source.area)
    watts = area / (math.pi * dd ** 2) * env.stefan_boltzmann * env.emissivity * (
        t_flame ** 4 - t_amb ** 4)
    flux = np.maximum(watts / 1000.0, 0.0)
    t_ig = ignition_time(flux, q_cr, ftp, n_idx)
    pr = radiation_probability(dd, t_res, t_ig, env)
    pt = total_probability(pc, pr, p_ember[:, None])

    out = np.empty((m, 4))
    out[:, 0] = pc.mean(axis=1)
    out[:, 1] = pr.mean(axis=1)
    out[:, 2] = p_ember
    # every sample has pt >= each component, but averaging 100 copies of p_ember
    # can round one ulp below it
    out[:, 3] = np.maximum(pt.mean(axis=1), out[:, :3].max(axis=1))
    return out


def monte_carlo_edge(source: Node, target: Node, env: Environment, n_samples: int = 100,
                     seed: int = 0, catalogs: Catalogs = DEFAULT_CATALOGS) -> EdgeWeights:
    pc, pr, pe, pt = monte_carlo_edges(source, [target], env, n_samples, seed, catalogs)[0]
    return EdgeWeights(float(pc), float(pr), float(pe), float(pt))
