import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sagin_sfco.errors import DomainError
from sagin_sfco.geokinetics import (
    EARTH_RADIUS_KM,
    Position,
    SnapshotSeries,
    build_snapshot,
    elevation_deg,
    export_snapshots,
    geodetic_to_eci,
    orbital_period,
    predict_snapshot,
    propagate,
    tag_features,
    trajectory_geodetic,
    visible,
)
from sagin_sfco.scenario import (
    FixedGeodetic,
    LinkClass,
    LinkPolicy,
    NodeKind,
    NodeSpec,
    OrbitSlot,
    OutageEntry,
    Scenario,
    WaypointTrajectory,
)
from tests.conftest import toy_snapshot

MU = 398600.4418
RULE = LinkPolicy()


def kepler(alt):
    a = 6371.0 + alt
    return 2 * np.pi * a ** 1.5 / np.sqrt(MU)


@pytest.mark.parametrize("alt, approx", [(590, 5779.0), (0, 5069.0), (35786, 86164.0)])
def test_orbital_period(alt, approx):
    assert orbital_period(alt) == pytest.approx(kepler(alt), rel=1e-12)
    assert orbital_period(alt) == pytest.approx(approx, rel=0.01)


def test_orbital_period_domain():
    with pytest.raises(DomainError):
        orbital_period(-6371.0)


@settings(max_examples=50, deadline=None)
@given(alt=st.floats(300, 2000), inc=st.floats(0, 180), raan=st.floats(0, 359), phase=st.floats(0, 359),
       t=st.floats(0, 36000))
def test_orbit_periodic(alt, inc, raan, phase, t):
    node = NodeSpec("s", NodeKind.SPACE, 1, 1, OrbitSlot(alt, inc, raan, phase))
    p0, p1 = propagate(node, t), propagate(node, t + orbital_period(alt))
    assert np.linalg.norm(p0.vec - p1.vec) < 1e-6
    assert p0.radius == pytest.approx(6371.0 + alt, rel=1e-12)


def test_orbit_initial_phase():
    # zero inclination and RAAN: the orbit lies in the equatorial plane starting at +x
    node = NodeSpec("s", NodeKind.SPACE, 1, 1, OrbitSlot(590, 0, 0, 90))
    p = propagate(node, 0.0)
    assert np.allclose(p.vec, [0.0, 6961.0, 0.0], atol=1e-9)


def test_trajectory_midpoint():
    traj = WaypointTrajectory(((0.0, 30.0, 110.0, 2.0), (1000.0, 32.0, 114.0, 4.0)))
    assert trajectory_geodetic(traj, 500.0) == pytest.approx((31.0, 112.0, 3.0))
    # clamps outside the covered interval
    assert trajectory_geodetic(traj, -5.0) == (30.0, 110.0, 2.0)
    assert trajectory_geodetic(traj, 5000.0) == (32.0, 114.0, 4.0)
    node = NodeSpec("u", NodeKind.AIR, 1, 1, traj)
    assert np.allclose(propagate(node, 500.0).vec, geodetic_to_eci(31.0, 112.0, 3.0, 500.0).vec)


@given(st.floats(-90, 90), st.floats(-180, 180), st.floats(0, 36000))
def test_ground_on_surface(lat, lon, t):
    node = NodeSpec("g", NodeKind.GROUND, 1, 1, FixedGeodetic(lat, lon))
    assert propagate(node, t).radius == pytest.approx(EARTH_RADIUS_KM, abs=1e-6)


def test_zenith_satellite_visible():
    gs = geodetic_to_eci(34.0, 113.0, 0.0, 100.0)
    sat = geodetic_to_eci(34.0, 113.0, 590.0, 100.0)
    assert elevation_deg(gs, sat) == pytest.approx(90.0)
    ok, dist = visible(gs, sat, RULE, LinkClass.SPACE_GROUND)
    assert ok and dist == pytest.approx(590.0)


def test_antipodal_satellites_blocked():
    a = Position(6961.0, 0.0, 0.0)
    b = Position(-6961.0, 0.0, 0.0)
    assert not visible(a, b, RULE, LinkClass.INTER_SATELLITE)[0]


def satellite_at_elevation(el_deg, alt=590.0, lat=20.0, lon=40.0):
    """Place a satellite at a given elevation using the triangle Earth-centre/observer/satellite."""
    r, R = 6371.0 + alt, 6371.0
    el = math.radians(el_deg)
    # law of sines: central angle from elevation
    gamma = math.acos(R * math.cos(el) / r) - el
    obs = geodetic_to_eci(lat, lon, 0.0, 0.0)
    return obs, geodetic_to_eci(lat + math.degrees(gamma), lon, alt, 0.0)


@pytest.mark.parametrize("el, expected", [(9.9, False), (10.1, True), (45.0, True), (-5.0, False)])
def test_elevation_mask(el, expected):
    obs, sat = satellite_at_elevation(el)
    assert elevation_deg(obs, sat) == pytest.approx(el, abs=1e-9)
    assert visible(obs, sat, RULE, LinkClass.SPACE_GROUND)[0] is expected
    assert visible(sat, obs, RULE, LinkClass.SPACE_GROUND)[0] is expected


positions = st.builds(lambda r, th, ph: Position(r * math.sin(th) * math.cos(ph), r * math.sin(th) * math.sin(ph),
                                                 r * math.cos(th)),
                      st.floats(6371, 8000), st.floats(0, math.pi), st.floats(0, 2 * math.pi))


@given(positions, positions, st.sampled_from(list(LinkClass)))
def test_visibility_symmetric(pa, pb, cls):
    assert visible(pa, pb, RULE, cls) == visible(pb, pa, RULE, cls)


# -- brute-force link oracle ---------------------------------------------------------


def _elevation_oracle(obs, tgt):
    # central angle formulation, independent of the dot-product code path
    o, t = obs.vec, tgt.vec
    gamma = math.acos(np.clip(np.dot(o, t) / (np.linalg.norm(o) * np.linalg.norm(t)), -1, 1))
    return math.degrees(math.atan2(math.cos(gamma) - np.linalg.norm(o) / np.linalg.norm(t), math.sin(gamma)))


def _sampled_min_radius(a, b, n=20001):
    s = np.linspace(0.0, 1.0, n)[:, None]
    return float(np.linalg.norm(a.vec + s * (b.vec - a.vec), axis=1).min())


def _oracle_links(sc, t):
    pos = {n.id: propagate(n, t) for n in sc.nodes}
    kind = {n.id: n.kind for n in sc.nodes}
    out = set()
    for a, b in combinations(sc.node_ids, 2):
        ks = {kind[a], kind[b]}
        pa, pb = pos[a], pos[b]
        if ks == {NodeKind.SPACE}:
            ok = _sampled_min_radius(pa, pb) >= 6371.0 + 80.0
        elif NodeKind.SPACE in ks:
            low, high = (pa, pb) if kind[b] is NodeKind.SPACE else (pb, pa)
            ok = _elevation_oracle(low, high) >= 10.0
        elif ks == {NodeKind.AIR, NodeKind.GROUND}:
            ok = _sampled_min_radius(pa, pb) >= 6371.0 - 1e-3 and np.linalg.norm(pa.vec - pb.vec) <= 150.0
        else:
            ok = False
        if ok:
            out.add(tuple(sorted((a, b))))
    return out


def six_node_scenario(outages=()):
    nodes = (
        NodeSpec("g0", NodeKind.GROUND, 100, 10, FixedGeodetic(0.0, 0.0)),
        NodeSpec("g1", NodeKind.GROUND, 100, 10, FixedGeodetic(0.5, 1.0)),
        NodeSpec("u0", NodeKind.AIR, 100, 10, WaypointTrajectory(((0, 0.3, 0.2, 3.0), (7200, 0.8, 1.8, 3.0)))),
        NodeSpec("u1", NodeKind.AIR, 100, 10, WaypointTrajectory(((0, -0.5, 0.5, 3.0), (7200, 2.0, -0.4, 3.0)))),
        NodeSpec("s0", NodeKind.SPACE, 100, 10, OrbitSlot(590, 10, 0, 0)),
        NodeSpec("s1", NodeKind.SPACE, 100, 10, OrbitSlot(590, 10, 0, 20)),
    )
    return Scenario(nodes, horizon_s=7200, snapshot_interval_s=600, outage_schedule=tuple(outages))


def test_six_node_links_match_exhaustive_oracle():
    sc = six_node_scenario()
    seen = set()
    for k in range(sc.snapshot_count):
        snap = build_snapshot(sc, k)
        expected = _oracle_links(sc, k * 600.0)
        assert snap.link_set() == expected, k
        seen |= expected
    # the toy exercises every link class at least once
    classes = {build_snapshot(sc, k).links[key].link_class for k in range(sc.snapshot_count)
               for key in build_snapshot(sc, k).links}
    assert len(seen) > 3 and len(classes) >= 3


def test_henan_snapshots(henan, henan_series):
    for k in (0, 17, 59):
        snap = henan_series.actual(k)
        assert len(snap.positions) == 48
        for key, link in snap.links.items():
            assert key == tuple(sorted(key))
            assert snap.has_link(key[1], key[0])
            assert link.prop_delay_ms == pytest.approx(link.distance_km / 299792.458 * 1000, rel=1e-9)
            assert link.capacity_mbps == henan.link_bandwidths[link.link_class]
    assert build_snapshot(henan, 5) == build_snapshot(henan, 5)
    with pytest.raises(IndexError):
        build_snapshot(henan, 60)


def test_node_outage_dominates():
    sc = six_node_scenario([OutageEntry(("g0",), 0.0, 1e9)])
    for k in range(sc.snapshot_count):
        snap = build_snapshot(sc, k)
        assert not any("g0" in key for key in snap.links)
        assert not snap.is_up("g0")


def test_link_outage_dominates():
    base = six_node_scenario()
    target = next(iter(build_snapshot(base, 0).links))
    sc = six_node_scenario([OutageEntry(target, 0.0, 1e9)])
    assert all(target not in build_snapshot(sc, k).links for k in range(sc.snapshot_count))


def test_prediction_without_outages_is_exact():
    sc = six_node_scenario()
    assert all(predict_snapshot(sc, k) == build_snapshot(sc, k) for k in range(sc.snapshot_count))


def test_unscheduled_outage_hidden_from_prediction():
    base = six_node_scenario()
    target = next(iter(build_snapshot(base, 2).links))
    sc = six_node_scenario([OutageEntry(target, 1200.0, 1800.0, scheduled=False)])
    assert target in predict_snapshot(sc, 2).links
    assert target not in build_snapshot(sc, 2).links


def test_scheduled_outage_visible_to_prediction():
    base = six_node_scenario()
    target = next(iter(build_snapshot(base, 2).links))
    sc = six_node_scenario([OutageEntry(target, 1200.0, 1800.0, scheduled=True)])
    assert target not in predict_snapshot(sc, 2).links
    assert target in predict_snapshot(sc, 3).links or target not in build_snapshot(base, 3).links


# -- TAG --------------------------------------------------------------------------


def _window(presence):
    nodes = {n: None for n in "abc"}
    return [toy_snapshot(nodes, [("a", "b", 1.0, 10.0)] if p else [], k) for k, p in enumerate(presence)]


@pytest.mark.parametrize("presence, expected", [((1, 1, 1, 1, 1), 1.0), ((0, 0, 0, 0, 0), 0.0),
                                                 ((1, 0, 1, 1, 0), 0.6)])
def test_tag_persistence(presence, expected):
    tag = tag_features(_window(presence))
    assert tag.window == 5
    assert tag.score(("a", "b")) == expected


def test_tag_node_persistence_uses_prediction():
    window = _window((1, 1, 1, 1, 1))
    gone = toy_snapshot({n: None for n in "abc"}, [], 5)
    assert tag_features(window, gone).node_persistence(window[-1])["a"] == 0.0
    assert tag_features(window, window[-1]).node_persistence(window[-1])["a"] == 1.0
    with pytest.raises(ValueError):
        tag_features([])


def test_tag_series_bounded(henan_series):
    for k in (0, 3, 30, 59):
        tag = henan_series.tag(k)
        assert tag.window == min(k + 1, 5)
        for key, p in tag.persistence.items():
            exact = sum(key in henan_series.actual(j).links for j in range(max(0, k - 4), k + 1)) / tag.window
            assert 0.0 <= p <= 1.0 and p == exact


def test_export_snapshots(tmp_path):
    sc = six_node_scenario()
    paths = export_snapshots([build_snapshot(sc, k) for k in range(3)], tmp_path / "snapshots")
    assert [p.name for p in paths] == ["t000.json", "t001.json", "t002.json"]
