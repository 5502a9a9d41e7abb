from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import building, vegetation
from wuigraph.catalogs import FuelClass
from wuigraph.physics import (NEVER_IGNITES, EmberParams, Environment, RadiationMode,
                              access_probability, access_probability_from_scores,
                              convection_distance, convection_probability, ember_distribution,
                              ember_probability, flame_angle, ignition_time, incident_flux,
                              monte_carlo_edge, monte_carlo_edges, radiation_probability,
                              total_probability, wind_correlation)
from wuigraph.spatial import GeometryError

ENV = Environment()
MONO = replace(ENV, ember=EmberParams(radiation_mode=RadiationMode.MONOTONE))


def test_environment_defaults():
    assert ENV.wind_speed == 22.2 and ENV.wind_direction == 225.0
    assert ENV.ambient_temperature == (298.15, 303.15)
    assert ENV.emissivity == 0.95 and ENV.stefan_boltzmann == 5.67e-8
    assert ENV.d_th_radiation == 60.0 and ENV.gravity == 9.81
    assert ENV.ember.radiation_mode is RadiationMode.PAPER_LITERAL
    assert ENV.radiation_area == "target"


@pytest.mark.parametrize("kw", [{"wind_speed": -1}, {"wind_direction": 360},
                                {"emissivity": 0}, {"d_th_radiation": 0},
                                {"radiation_area": "both"}])
def test_environment_validation(kw):
    with pytest.raises(ValueError):
        Environment(**kw)


def test_wind_correlation_examples():
    assert wind_correlation(225, 225) == 1.0
    assert wind_correlation(315, 225) == 0.0
    assert wind_correlation(285, 225) == 0.5
    assert wind_correlation(0, 0) == 1.0
    assert wind_correlation(60, 0) == 0.5
    assert wind_correlation(90, 0) == 0.0


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 359.999), st.floats(0, 180))
def test_wind_correlation_even_and_zero_beyond_90(wind, delta):
    plus = wind_correlation((wind + delta) % 360, wind)
    minus = wind_correlation((wind - delta) % 360, wind)
    assert plus == pytest.approx(minus, abs=1e-9)
    if delta >= 90 + 1e-9:
        assert plus == 0.0
    assert 0 <= plus <= 1


def test_flame_angle_examples():
    # sqrt(1.5 * 22.2^2 / (9.81 * 10)) = 2.7451; arctan -> 1.2217
    oracle = math.atan(math.sqrt(1.5 * 22.2 ** 2 / (9.81 * 10)))
    assert flame_angle(10, 22.2, 9.81) == pytest.approx(oracle, abs=1e-12)
    assert flame_angle(10, 22.2, 9.81) == pytest.approx(1.22146, abs=1e-5)
    assert flame_angle(10, 0.0) == 0.0
    angles = [flame_angle(h, 22.2) for h in (1, 10, 100, 1e4, 1e8)]
    assert all(a > b for a, b in zip(angles, angles[1:]))
    assert angles[-1] < 1e-3
    with pytest.raises(ValueError):
        flame_angle(0, 22.2)


def test_convection_examples():
    # tan(theta) = sqrt(739.26 / 19.62) = 6.138 -> d_conv = 12.28
    assert float(convection_distance(2.0, 1.0, 22.2)) == pytest.approx(12.28, abs=0.01)
    assert convection_probability(10, 2.0, 1.0, ENV) == 1.0
    assert convection_probability(13, 2.0, 1.0, ENV) == 0.0
    assert convection_probability(0.5, 2.0, 0.0, ENV) == 0.0
    assert convection_probability(0.0, 2.0, 0.0, ENV) == 1.0


def test_incident_flux_examples():
    # 100/(pi*400) * 5.67e-8 * 0.95 * (1200^4 - 300^4) / 1000
    expected = 100 / (math.pi * 400) * 5.67e-8 * 0.95 * (1200**4 - 300**4) / 1000
    assert expected == pytest.approx(8.854, abs=0.01)
    assert incident_flux(100, 20, 1200, 300, ENV) == pytest.approx(8.854, abs=0.01)
    assert incident_flux(100, 20, 300, 300, ENV) == 0.0
    assert incident_flux(100, 20, 250, 300, ENV) == 0.0
    assert incident_flux(200, 20, 1200, 300, ENV) == pytest.approx(
        2 * incident_flux(100, 20, 1200, 300, ENV), rel=1e-15)
    with pytest.raises(GeometryError):
        incident_flux(100, 0, 1200, 300, ENV)


def test_ignition_time_examples():
    assert ignition_time(8.0, 8.5, 6000, 1.5) == NEVER_IGNITES
    assert ignition_time(8.5, 8.5, 6000, 1.5) == NEVER_IGNITES
    assert ignition_time(12.5, 8.5, 6000, 1.5) == pytest.approx(750.0, rel=1e-12)
    times = ignition_time(np.array([9, 10, 100, 1e4, 1e9]), 8.5, 6000, 1.5)
    assert np.all(np.diff(times) < 0) and times[-1] < 1e-6


def test_radiation_examples():
    assert radiation_probability(61, 500, 100, ENV) == 0.0
    assert radiation_probability(30, 500, NEVER_IGNITES, ENV) == 0.0
    assert radiation_probability(30, 100, 500, ENV) == 0.0
    assert radiation_probability(30, 200, 200, ENV) == 0.5
    assert radiation_probability(30, 200, 200, MONO) == 0.5
    sigma = ENV.ember.radiation_timing_sigma
    assert radiation_probability(30, 100 + 2 * sigma, 100, MONO) == pytest.approx(0.97725, abs=1e-4)
    assert radiation_probability(30, 100 + 2 * sigma, 100, ENV) == pytest.approx(0.02275, abs=1e-4)
    assert radiation_probability(60, 200, 200, ENV) == 0.5  # 60 m itself is inside


def test_radiation_monotone_mode_monotonicity():
    t_ig = np.linspace(0, 500, 51)
    p = radiation_probability(30, 400, t_ig, MONO)
    assert np.all(np.diff(p) <= 0)
    t_r = np.linspace(0, 800, 81)
    p = radiation_probability(30, t_r, 200, MONO)
    assert np.all(np.diff(p) >= 0)


def test_ember_distribution_examples():
    p = ENV.ember
    assert ember_distribution(0, 10, 22.2, p) == 0.0
    assert ember_distribution(500, 10, 0.0, p) == 0.0
    assert ember_distribution(p.volume_ref, 0, 10, p) == 1.0
    decay = p.lambda0 * 22.2 / p.v_ref
    assert ember_distribution(p.volume_ref, decay, 22.2, p) == pytest.approx(math.exp(-1), rel=1e-12)


def test_ember_distribution_monotone():
    p = ENV.ember
    d = np.linspace(0, 400, 41)
    assert np.all(np.diff(ember_distribution(300, d, 20, p)) <= 0)
    v = np.linspace(1, 2000, 41)
    assert np.all(np.diff(ember_distribution(v, 50, 20, p)) >= 0)
    w = np.linspace(0.5, 40, 41)
    assert np.all(np.diff(ember_distribution(300, 50, w, p)) >= 0)


def test_access_probability_examples():
    assert access_probability(vegetation("v", 0, 0)) == 1.0
    # Table minima per access feature: deck .3 eaves .3 roof .3 vent .7 fence .7 window .4
    table_min = {"deck_porch": 0.3, "eaves": 0.3, "roof": 0.3, "vent_screen": 0.7,
                 "fence": 0.7, "window": 0.4}
    assert access_probability(table_min) == pytest.approx(0.45 / 4.1, abs=1e-12)
    # five features at 0.3 and one at 0.4: mean 0.317 -> 0.077
    assert access_probability_from_scores([0.3] * 5 + [0.4]) == pytest.approx(0.078, abs=1e-3)
    assert access_probability({"roof": 4.1}) == 1.0
    wood = building("b", 0, 0)
    assert 0 < access_probability(wood) <= 1


def test_ember_and_total_examples():
    assert ember_probability(1, 1, 1) == 1
    assert ember_probability(0, 1, 1) == 0 and ember_probability(1, 0, 1) == 0
    assert ember_probability(0.5, 0.5, 0.5) == 0.125
    assert total_probability(1, 0, 0) == 1
    assert total_probability(0, 0, 0) == 0
    assert total_probability(0.5, 0.5, 0.5) == 0.875
    for p in (0.0, 0.3, 0.9):
        assert total_probability(p, 0, 0) == p
        assert total_probability(0, p, 0) == p
        assert total_probability(0, 0, p) == p


def test_monte_carlo_deterministic_and_order_free():
    src = vegetation("s", 0, 0, FuelClass.EXTREME)
    targets = [building(f"t{k}", 5 + 7 * k, 3 * k) for k in range(6)]
    a = monte_carlo_edge(src, targets[2], ENV, 100, seed=11)
    b = monte_carlo_edge(src, targets[2], ENV, 100, seed=11)
    assert a == b
    from wuigraph.physics import monte_carlo_edges
    batch = monte_carlo_edges(src, targets[::-1], ENV, 100, seed=11)[::-1]
    single = np.array([monte_carlo_edge(src, t, ENV, 100, seed=11).as_tuple() for t in targets])
    np.testing.assert_array_equal(batch[:, [3, 0, 1, 2]], single)


def test_monte_carlo_all_branches_zero():
    src = building("s", 0, 0, FuelClass.LOW)
    src = replace(src, volume=0.0)
    far = building("t", 300 * math.sin(math.radians(45)), 300 * math.cos(math.radians(45)))
    w = monte_carlo_edge(src, far, ENV)
    assert (w.p_conv, w.p_rad, w.p_ember, w.p_total) == (0, 0, 0, 0)


def test_mechanism_isolation_oracle():
    # Target straight upwind: f_cc = 0, and beyond 60 m.
    src = vegetation("s", 0, 0, FuelClass.EXTREME)
    tgt = building("t", 70 * math.sin(math.radians(45)), 70 * math.cos(math.radians(45)))
    w = monte_carlo_edge(src, tgt, ENV)
    assert w.p_total == 0.0 and w.p_ember == 0.0


def test_monte_carlo_rejects_bad_inputs():
    with pytest.raises(ValueError):
        monte_carlo_edge(vegetation("s", 0, 0, FuelClass.NON_BURNABLE), building("t", 5, 5), ENV)
    with pytest.raises(GeometryError):
        monte_carlo_edge(vegetation("s", 0, 0), building("t", 0, 0), ENV)
    with pytest.raises(ValueError):
        monte_carlo_edge(vegetation("s", 0, 0), building("t", 5, 5), ENV, n_samples=0)


def _pair_weights(args):
    seed, i = args
    src = vegetation("src", 0, 0, FuelClass.VERY_HIGH)
    tgt = building(f"t{i}", -8 - i, -9 - 2 * i)
    return monte_carlo_edge(src, tgt, ENV, 100, seed).as_tuple()


@pytest.mark.parametrize("workers", [1, 2, 4, 8])
def test_monte_carlo_identical_across_worker_counts(workers):
    jobs = [(3, i) for i in range(16)]
    serial = [_pair_weights(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parallel = list(pool.map(_pair_weights, jobs[::-1]))[::-1]
    assert parallel == serial


def test_monte_carlo_std_across_seeds_below_005():
    src = vegetation("src", 0, 0, FuelClass.VERY_HIGH)
    tgt = building("t", -12, -14)
    totals = np.array([monte_carlo_edge(src, tgt, ENV, 100, s).p_total for s in range(50)])
    assert totals.std() > 0  # the pair is genuinely stochastic
    assert totals.std() < 0.05


def test_radiation_area_flag_uses_source_area():
    src = vegetation("s", 0, 0, FuelClass.EXTREME)
    tgt = building("t", 0, 30, area=10.0)
    small = monte_carlo_edge(src, tgt, MONO, 200, 1)
    big = monte_carlo_edge(src, tgt, replace(MONO, radiation_area="source"), 200, 1)
    assert small.p_rad == 0.0  # 10 m2 target stays below critical flux
    assert big.p_rad > 0.5


def test_batch_total_never_below_a_component():
    # ember-only targets used to average one ulp under p_ember
    rng = np.random.default_rng(8)
    src = vegetation("s", 0, 0, FuelClass.EXTREME)
    targets = []
    for k in range(2000):
        r, th = rng.uniform(1, 250), rng.uniform(0, 2 * math.pi)
        targets.append(building(f"t{k}", r * math.cos(th), r * math.sin(th),
                                area=float(rng.uniform(20, 400))))
    w = monte_carlo_edges(src, targets, ENV, 100, seed=3)
    assert np.all(w[:, 3] >= w[:, :3].max(axis=1))
    assert np.all((w >= 0) & (w <= 1))
