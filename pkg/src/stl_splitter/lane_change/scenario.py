"""Closed-loop lane-change simulation: perception, tracking, planning, dynamics."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from ..sim_core import NoiseStream, SimulationError, SimulatorSnapshot, state_checksum
from .config import ScenarioConfig, VehicleSpec
from .controller import controller_plan
from .dynamics import NV, VEHICLE_FIELDS, VehicleState, dyn_step, smoothstep
from .perception import noise_sigma, pem_observe, salient_features
from .rules import RULES, rule_formula, state_layout
from .tracking import TrackEstimate, track_update


def scripted_state(spec: VehicleSpec, t: int, dt: float, lane_width: float) -> VehicleState:
    """Open-loop obstacle state at step ``t``: constant speed plus smooth lane ramps."""
    time = t * dt
    d = (spec.lane + 0.5) * lane_width
    vd = 0.0
    for m in spec.maneuvers:
        target = (m.target_lane + 0.5) * lane_width
        u = (time - m.start) / m.duration
        if u <= 0:
            continue
        vd = (target - d) * 6 * u * (1 - u) / m.duration if u < 1 else 0.0
        d = d + (target - d) * float(smoothstep(u))
    psi = math.atan2(vd, spec.v) if spec.v > 0 else 0.0
    return VehicleState(spec.s + spec.v * time, d, psi, spec.v, spec.length, spec.width)


@lru_cache(maxsize=32)
def _scripted_table(cfg: ScenarioConfig):
    """Obstacle states and stacked rows for every step ``0..T`` (obstacles are open-loop)."""
    w = cfg.road.lane_width
    states = [[scripted_state(o, t, cfg.dt, w) for o in cfg.obstacles] for t in range(cfg.T + 1)]
    rows = [np.concatenate([o.as_array() for o in st]) if st else np.empty(0) for st in states]
    return states, rows


def state_names(cfg: ScenarioConfig) -> list[str]:
    names = [f"ego_{f}" for f in VEHICLE_FIELDS]
    for o in cfg.obstacles:
        names += [f"{o.name}_{f}" for f in VEHICLE_FIELDS]
    return names + ["ego_accel"]


def collided(x, cfg: ScenarioConfig) -> bool:
    """Axis-aligned footprint overlap between the ego and any obstacle."""
    e = x[:NV]
    for k in range(len(cfg.obstacles)):
        o = x[NV * (k + 1) : NV * (k + 2)]
        if abs(e[0] - o[0]) < (e[4] + o[4]) / 2 and abs(e[1] - o[1]) < (e[5] + o[5]) / 2:
            return True
    return False


class LaneChangeSimulator:
    """One closed-loop run of the lane-change scene.

    Each step observes the true obstacles through the perception-error model,
    updates the tracks, plans, and integrates the ego. Obstacles are scripted.
    The combined state is the ego row, one row per obstacle, then the ego's
    last applied acceleration.
    """

    def __init__(self, cfg: ScenarioConfig, proposal=None, record_draws: bool = False):
        self.cfg = cfg
        self.dt = cfg.dt
        self.horizon = cfg.T
        self.proposal = None if proposal is None or proposal.is_identity else proposal
        self.record_draws = record_draws
        self.draws = [] if record_draws else None
        self._stream = None
        self._t = 0
        self._lw = 0.0
        self._a_prev = 0.0
        self._ego = None
        self._tracks = None
        self._extents = [(o.length, o.width) for o in cfg.obstacles]
        self._table = _scripted_table(cfg)

    @property
    def log_weight(self) -> float:
        return self._lw

    @property
    def t(self) -> int:
        return self._t

    def _obstacles(self, t):
        return self._table[0][t]

    def _combined(self) -> np.ndarray:
        return np.concatenate([self._ego.as_array(), self._table[1][self._t], [self._a_prev]])

    def reset(self, stream: NoiseStream) -> np.ndarray:
        cfg = self.cfg
        e = cfg.ego
        self._stream = stream
        self._t, self._lw, self._a_prev = 0, 0.0, 0.0
        self._ego = VehicleState(e.s, cfg.road.centre(e.lane), 0.0, e.v, e.length, e.width)
        # prior one step before t=0, centred on the scripted truth
        prior = np.array([[o.s - o.v * cfg.dt, o.d, o.psi, o.v] for o in self._obstacles(0)])
        self._tracks = TrackEstimate.from_prior(prior, cfg.tracker)
        if self.record_draws:
            self.draws = []
        return self._combined()

    def step(self):
        if self._t >= self.horizon:
            raise SimulationError("simulation already reached its horizon")
        cfg = self.cfg
        obstacles = self._obstacles(self._t)
        feats = salient_features(self._ego, obstacles)
        obs, lr, draws = pem_observe(self._ego, obstacles, cfg.pem, self._stream, self.proposal, feats)
        self._lw += lr
        if self.record_draws:
            self.draws.append(draws)
        sig = [noise_sigma(f, cfg.pem) for f in feats]
        self._tracks = track_update(self._tracks, obs, self.dt, cfg.tracker, meas_sigmas=sig)
        plan = controller_plan(self._ego, self._tracks, cfg.controller, cfg.road, self.dt,
                               self._extents, self._a_prev)
        c = cfg.controller
        self._ego = dyn_step(self._ego, plan.action, self.dt, c.wheelbase, c.v_max, c.max_steer)
        self._a_prev = float(plan.action[0])
        self._t += 1
        return plan.action.copy(), self._combined()

    def snapshot(self) -> SimulatorSnapshot:
        payload = (
            self._t,
            self._ego,
            self._tracks.copy(),
            self._a_prev,
            self._lw,
            self._stream.__getstate__(),
            None if self.draws is None else list(self.draws),
        )
        return SimulatorSnapshot(self._t, payload, state_checksum(self._combined()))

    def restore(self, snap: SimulatorSnapshot, stream: NoiseStream | None = None) -> None:
        t, ego, tracks, a_prev, lw, sstate, draws = snap.payload
        self._t, self._ego, self._tracks = t, ego, tracks.copy()
        self._a_prev, self._lw = a_prev, lw
        self._stream = NoiseStream(*sstate) if stream is None else stream
        if self.record_draws:
            self.draws = list(draws or [])


class LaneChangeScenario:
    """Builtin three-lane scene with the four traffic rules."""

    name = "lane_change"

    def __init__(self, cfg: ScenarioConfig | None = None):
        self.cfg = cfg or ScenarioConfig()
        self.dt = self.cfg.dt
        self.horizon = self.cfg.T
        self.layout = state_layout(self.cfg)
        self._rules = {r: rule_formula(r, self.cfg) for r in RULES}
        self.predicates = {}
        for _, preds in self._rules.values():
            self.predicates.update(preds)
        self.rules = {r: f for r, (f, _) in self._rules.items()}
        self.default_rule = "phi1"

    @classmethod
    def from_file(cls, path) -> "LaneChangeScenario":
        return cls(ScenarioConfig.load(path))

    def make_simulator(self, proposal=None, record_draws: bool = False) -> LaneChangeSimulator:
        return LaneChangeSimulator(self.cfg, proposal, record_draws)

    def state_names(self) -> list[str]:
        return state_names(self.cfg)

    def config(self) -> dict:
        return self.cfg.to_dict()
