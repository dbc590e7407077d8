import json
import math
from dataclasses import replace

import numpy as np
import pytest

from stl_splitter.estimators import _Runner
from stl_splitter.lane_change import (
    ControllerConfig,
    LaneChangeScenario,
    PemParams,
    RoadConfig,
    RuleConstants,
    ScenarioConfig,
    TrackerConfig,
    collided,
    rule_formula,
)
from stl_splitter.lane_change.controller import candidate_rollouts, controller_plan
from stl_splitter.lane_change.dynamics import VehicleState, dyn_step, lane_index
from stl_splitter.lane_change.perception import pem_observe, salient_features
from stl_splitter.lane_change.rules import (
    in_front_of,
    in_same_lane,
    left_of,
    safe_distance,
)
from stl_splitter.lane_change.tracking import TrackEstimate, predict, track_update
from stl_splitter.monitor import batch_robustness
from stl_splitter.sim_core import NoiseStream, stream_id
from stl_splitter.stl import parse_formula

W = 3.5
CERTAIN = PemParams(detect_coeffs=(50.0, 0.0, 0.0), noise_base=(0, 0, 0), noise_range_slope=(0, 0, 0))
BLIND = PemParams(detect_coeffs=(-50.0, 0.0, 0.0))


def _row(s, d, v, psi=0.0, length=4.5, width=2.0):
    return np.array([s, d, psi, v, length, width])


# -- dynamics -----------------------------------------------------------------


def test_dyn_step_straight_line():
    x = VehicleState(0.0, 5.25, 0.0, 20.0)
    y = dyn_step(x, (0.0, 0.0), 0.1)
    assert y.s == pytest.approx(2.0, abs=1e-12)
    assert y.d == x.d


def test_dyn_step_accelerates():
    assert dyn_step(VehicleState(0.0, 0.0, 0.0, 20.0), (1.0, 0.0), 0.1).v == pytest.approx(20.1)


def test_dyn_step_forty_steps_closed_form():
    x = VehicleState(15.0, 5.25, 0.0, 20.0)
    for _ in range(40):
        x = dyn_step(x, (0.0, 0.0), 0.1)
    assert x.s == pytest.approx(15.0 + 20.0 * 40 * 0.1, abs=1e-9)


def test_dyn_step_clamps_speed_and_steering():
    assert dyn_step(VehicleState(0, 0, 0, 0.2), (-8.0, 0.0), 0.1).v == 0.0
    assert dyn_step(VehicleState(0, 0, 0, 39.95), (2.0, 0.0), 0.1).v == 40.0
    sharp = dyn_step(VehicleState(0, 0, 0, 10.0), (0.0, 100.0), 0.1)
    assert sharp.psi == pytest.approx(10.0 / 2.7 * math.tan(0.5) * 0.1)
    with pytest.raises(ValueError):
        dyn_step(VehicleState(0, 0, 0, 1.0), (0, 0), 0.0)


def test_lane_index():
    assert [lane_index(d) for d in (0.1, 3.49, 3.5, 7.2, 10.4)] == [0, 0, 1, 2, 2]


# -- perception -----------------------------------------------------------------


def _scene():
    ego = VehicleState(0.0, 5.25, 0.0, 20.0)
    return ego, [
        VehicleState(20.0, 5.25, 0.0, 10.0),
        VehicleState(40.0, 5.25, 0.0, 10.0),  # directly behind the first
        VehicleState(20.0, 1.75, 0.0, 10.0),
    ]


def test_occlusion_flag_on_hand_built_scene():
    ego, obs = _scene()
    feats = salient_features(ego, obs)
    assert [f.occluded for f in feats] == [False, True, False]
    assert feats[1].range == pytest.approx(40.0)
    assert feats[2].bearing == pytest.approx(math.atan2(-3.5, 20.0))


def test_pem_certain_detection_without_noise_is_exact():
    ego, obs = _scene()
    got, lr, _ = pem_observe(ego, obs, CERTAIN, NoiseStream(0, 1))
    assert lr == 0.0
    for o, y in zip(obs, got):
        assert y.detected and (y.s, y.d, y.psi) == (o.s, o.d, o.psi)


def test_pem_blind_detects_nothing():
    ego, obs = _scene()
    stream = NoiseStream(0, 1)
    for _ in range(20):
        got, _, _ = pem_observe(ego, obs, BLIND, stream)
        assert not any(y.detected for y in got)


def test_pem_consumes_fixed_draw_count():
    ego, obs = _scene()
    a = NoiseStream(3, 4)
    pem_observe(ego, obs, PemParams(), a)
    b = NoiseStream(3, 4)
    b.uniform(3)
    b.normal(9)
    assert a.__getstate__() == b.__getstate__()


def test_default_pem_miss_rate_at_mid_range():
    p = PemParams()
    stream = NoiseStream(11, stream_id("pem-miss"))
    ego = VehicleState(0.0, 5.25, 0.0, 20.0)
    misses = trials = 0
    for r in np.linspace(35.0, 50.0, 16):
        o = [VehicleState(float(r), 5.25, 0.0, 0.0)]
        for _ in range(500):
            got, _, _ = pem_observe(ego, o, p, stream)
            misses += not got[0].detected
            trials += 1
    assert 0.05 <= misses / trials <= 0.15


# -- tracking -----------------------------------------------------------------


def test_track_update_exact_with_zero_noise():
    cfg = TrackerConfig(process_accel_std=0.0, heading_std=0.0)
    truth = VehicleState(30.0, 5.25, 0.0, 8.0)
    est = TrackEstimate.from_prior([[29.0, 5.0, 0.0, 7.0]], cfg)
    ego = VehicleState(0.0, 5.25, 0.0, 20.0)
    obs, _, _ = pem_observe(ego, [truth], CERTAIN, NoiseStream(0, 0))
    est = track_update(est, obs, 0.1, cfg, meas_sigmas=[(0.0, 0.0, 0.0)])
    assert np.allclose(est.means[0, :3], [truth.s, truth.d, truth.psi], atol=1e-12)
    assert est.staleness[0] == 0


def test_unobserved_track_follows_constant_velocity():
    cfg = TrackerConfig()
    est = TrackEstimate.from_prior([[10.0, 1.75, 0.0, 5.0]], cfg)
    ego = VehicleState(0.0, 5.25, 0.0, 20.0)
    stream = NoiseStream(0, 0)
    for k in range(1, 11):
        obs, _, _ = pem_observe(ego, [VehicleState(10.0, 1.75, 0.0, 5.0)], BLIND, stream)
        est = track_update(est, obs, 0.1, cfg)
        assert est.staleness[0] == k
    assert est.means[0, 0] == pytest.approx(15.0)
    assert est.means[0, 1] == pytest.approx(1.75)


def test_tracker_is_calibrated_on_stationary_obstacle():
    cfg = TrackerConfig()
    pem = PemParams(detect_coeffs=(50.0, 0.0, 0.0))
    ego = VehicleState(0.0, 5.25, 0.0, 20.0)
    truth = VehicleState(30.0, 1.75, 0.0, 0.0)
    from stl_splitter.lane_change.perception import noise_sigma

    sig = [noise_sigma(salient_features(ego, [truth])[0], pem)]
    inside = 0
    for seed in range(1000):
        stream = NoiseStream(seed, stream_id("calib"))
        start = np.array([truth.s, truth.d, 0.0, 0.0]) + stream.normal(4) * [1.0, 1.0, 0.0, 1.0]
        est = TrackEstimate.from_prior([start], TrackerConfig(prior_lateral_vel_std=None))
        for _ in range(40):
            obs, _, _ = pem_observe(ego, [truth], pem, stream)
            est = track_update(est, obs, 0.1, cfg, meas_sigmas=sig)
        sd = np.sqrt(np.diag(est.covs[0])[:2])
        err = np.abs(est.means[0, :2] - [truth.s, truth.d])
        inside += bool(np.all(err <= 3 * sd))
    assert inside >= 990


def test_covariances_stay_symmetric_psd():
    cfg = TrackerConfig()
    ego, obs = _scene()
    est = TrackEstimate.from_prior([[o.s, o.d, o.psi, o.v] for o in obs], cfg)
    stream = NoiseStream(5, 5)
    for _ in range(30):
        got, _, _ = pem_observe(ego, obs, PemParams(), stream)
        est = track_update(est, got, 0.1, cfg, meas_sigmas=[(0.3, 0.2, 0.02)] * 3)
        for P in est.covs:
            assert np.allclose(P, P.T)
            assert np.linalg.eigvalsh(P).min() > -1e-10


def test_predict_identity_and_distance():
    est = TrackEstimate.from_prior([[10.0, 1.75, 0.0, 5.0]], TrackerConfig())
    assert np.array_equal(predict(est, 0, 0.1).means, est.means)
    assert predict(est, 10, 0.1).means[0, 0] == pytest.approx(15.0)
    with pytest.raises(ValueError):
        predict(est, -1, 0.1)


def test_predict_composes():
    rng = np.random.default_rng(0)
    for _ in range(50):
        est = TrackEstimate.from_prior(rng.normal(size=(3, 4)) * [20, 3, 0.1, 10], TrackerConfig())
        a, b = rng.integers(0, 15, size=2)
        once = predict(est, int(a + b), 0.1)
        twice = predict(predict(est, int(a), 0.1), int(b), 0.1)
        assert np.allclose(once.means, twice.means, atol=1e-9)


# -- controller -----------------------------------------------------------------


def _tracks(states):
    cfg = TrackerConfig()
    est = TrackEstimate.from_prior([[o.s, o.d, o.psi, o.v] for o in states] or np.zeros((0, 4)), cfg)
    est.covs[:] = 0.0
    return est


def test_empty_road_accelerates():
    ego = VehicleState(0.0, 5.25, 0.0, 20.0)
    plan = controller_plan(ego, _tracks([]), ControllerConfig(), RoadConfig(), 0.1, [])
    assert plan.feasible and plan.action[0] > 0


def test_static_obstacle_ahead_triggers_lane_change():
    ccfg, road = ControllerConfig(), RoadConfig()
    ego = VehicleState(0.0, 5.25, 0.0, 20.0)
    static = VehicleState(25.0, 5.25, 0.0, 0.0)  # stopping distance at -8 m/s^2 is 25 m
    plan = controller_plan(ego, _tracks([static]), ccfg, road, 0.1, [(4.5, 2.0)])
    assert plan.target_lane != 1
    # exhaustive check: no candidate that keeps the lane is both feasible and cheaper
    acc, lanes, s, d, v, psi = candidate_rollouts(ego, ccfg, road, 0.1)
    keep = lanes == 1
    gap = s[keep][:, 1:] - 25.0
    dd = d[keep][:, 1:] - 5.25
    lim_s = 4.5 + ccfg.safety_margin_s
    assert np.all(np.any((np.abs(gap) < lim_s) & (np.abs(dd) < 2.0 + ccfg.safety_margin_d), axis=1))


def test_boxed_in_falls_back_to_max_braking():
    ccfg, road = ControllerConfig(), RoadConfig()
    ego = VehicleState(0.0, 5.25, 0.0, 20.0)
    walls = [VehicleState(6.0, road.centre(k), 0.0, 0.0) for k in range(3)]
    plan = controller_plan(ego, _tracks(walls), ccfg, road, 0.1, [(4.5, 2.0)] * 3)
    assert not plan.feasible
    assert plan.action.tolist() == [ccfg.a_min, 0.0]


def test_refinement_leaves_the_candidate_grid_and_never_costs_more():
    road = RoadConfig()
    static = VehicleState(60.0, 5.25, 0.0, 0.0)
    base = ControllerConfig()
    for v0 in (14.0, 20.0, 26.0):
        ego = VehicleState(0.0, 5.25, 0.0, v0)
        coarse = controller_plan(ego, _tracks([static]), base, road, 0.1, [(4.5, 2.0)])
        fine = controller_plan(ego, _tracks([static]), replace(base, refine=True), road, 0.1, [(4.5, 2.0)])
        assert fine.cost <= coarse.cost
        assert base.a_min <= fine.action[0] <= base.a_max
        assert fine.target_lane == coarse.target_lane
    assert fine.action[0] not in base.accels


def test_controller_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(a_min=1.0)
    with pytest.raises(ValueError):
        ControllerConfig(accels=())
    with pytest.raises(ValueError):
        ControllerConfig(refine_points=2)


# -- rules -----------------------------------------------------------------


def test_safe_distance_hand_calculation():
    e, o = _row(0.0, 5.25, 20.0), _row(50.0, 5.25, 5.0)
    d_safe = 20.0 * 0.3 + (20.0**2 - 5.0**2) / (2 * 10.0)
    assert safe_distance(e, o, RuleConstants()) == pytest.approx((50.0 - 4.5) - d_safe)


def test_phi3_structure():
    f, preds = rule_formula("phi3")
    assert f == parse_formula("G[0,inf] (not slow_leading_vehicle -> preserves_flow)")
    assert set(preds) == {"slow_leading_vehicle", "preserves_flow"}


def test_preserves_flow_boundary():
    _, preds = rule_formula("phi3")
    x = np.zeros(len(ScenarioConfig().obstacles) * 6 + 7)
    x[3] = RuleConstants().v_flow_min
    assert preds["preserves_flow"](x) == 0.0
    x[3] += 0.5
    assert preds["preserves_flow"](x) == pytest.approx(0.5)


def test_rule_structures_unroll_over_moving_vehicles():
    f1, p1 = rule_formula("phi1")
    f4, p4 = rule_formula("phi4")
    assert {n for n in p1 if n.startswith("cut_in")} == {"cut_in_o1", "cut_in_o2"}
    assert "left_of_o0" not in p4 and "left_of_o2" in p4
    with pytest.raises(ValueError):
        rule_formula("phi9")


@pytest.mark.parametrize("de", [1.0, 1.75, 3.4, 3.6, 5.25, 6.9, 7.1, 8.75, 10.4])
def test_lateral_margin_signs_follow_lane_indices(de):
    for do in np.linspace(0.2, 10.3, 41):
        e, o = _row(0.0, de, 20.0), _row(30.0, float(do), 10.0)
        le, lo = lane_index(de), lane_index(do)
        same, left = in_same_lane(e, o, W), left_of(e, o, W)
        assert (same > 0) == (le == lo)
        assert (left > 0) == (lo > le)
        assert left != 0.0


def test_in_front_of_sign():
    e = _row(0.0, 5.25, 20.0)
    assert in_front_of(e, _row(4.6, 5.25, 0.0)) > 0
    assert in_front_of(e, _row(4.4, 5.25, 0.0)) < 0


# -- scenario -----------------------------------------------------------------


def _noise_free():
    return ScenarioConfig(pem=CERTAIN)


def _trace(scenario, seed):
    traj, _ = _Runner(scenario, "phi1", seed).run(("init", 0))
    return traj.state_array()


def test_trajectory_has_forty_one_states(lane_scenario):
    X = _trace(lane_scenario, 0)
    assert X.shape == (41, len(lane_scenario.state_names()))


def test_noise_free_runs_are_identical_and_collision_free():
    sc = LaneChangeScenario(_noise_free())
    traces = [_trace(sc, seed) for seed in range(4)]
    for X in traces[1:]:
        assert np.array_equal(X, traces[0])
    for rule, f in sc.rules.items():
        rob = [batch_robustness(f, X[: t + 1], sc.predicates) for X in traces[:2] for t in range(41)]
        assert rob[:41] == rob[41:], rule
    assert not any(collided(x, sc.cfg) for x in traces[0])


def test_noisy_runs_stay_collision_free_and_within_limits(lane_scenario):
    cfg = lane_scenario.cfg
    c = cfg.controller
    for i in range(20):
        traj, _ = _Runner(lane_scenario, "phi1", 7).run(("init", i))
        X = traj.state_array()
        assert not any(collided(x, cfg) for x in X)
        a = X[:, -1]
        assert np.all((a >= c.a_min) & (a <= c.a_max))
        d = X[:, 1]
        assert np.all((d - 1.0 >= 0) & (d + 1.0 <= cfg.road.width))


def test_scenario_geometry_defaults():
    cfg = ScenarioConfig()
    assert (cfg.ego.s, cfg.ego.v, cfg.controller.v_ref, cfg.T, cfg.dt) == (15.0, 20.0, 30.0, 40, 0.1)
    static, cutter, merger = cfg.obstacles
    assert static.kind == "static" and static.s == 40.0
    assert (cutter.s, cutter.v, cutter.maneuvers[0].start) == (50.0, 5.0, 0.6)
    assert (merger.lane, merger.v, merger.maneuvers[0].start) == (0, 10.0, 1.0)


def test_config_json_round_trip(tmp_path):
    cfg = ScenarioConfig(pem=PemParams(detect_coeffs=(4.0, -0.1, -1.0)))
    text = cfg.to_json()
    assert ScenarioConfig.from_json(text) == cfg
    path = tmp_path / "scene.json"
    path.write_text(text)
    assert LaneChangeScenario.from_file(path).cfg == cfg


def test_config_rejects_unknown_keys():
    data = json.loads(ScenarioConfig().to_json())
    data["pem"]["bogus"] = 1
    with pytest.raises(ValueError, match="bogus"):
        ScenarioConfig.from_dict(data)
    with pytest.raises(ValueError):
        PemParams(noise_base=(-1.0, 0.0, 0.0))
