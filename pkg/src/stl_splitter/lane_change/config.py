"""Declarative scenario configuration with JSON round-tripping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from typing import Any

import math


@dataclass(frozen=True)
class Maneuver:
    """Scripted lateral move to ``target_lane`` starting at ``start`` seconds."""

    start: float
    target_lane: int
    duration: float = 1.0


@dataclass(frozen=True)
class VehicleSpec:
    name: str
    s: float
    lane: int
    v: float
    length: float = 4.5
    width: float = 2.0
    kind: str = "vehicle"  # "vehicle" or "static"
    maneuvers: tuple[Maneuver, ...] = ()


@dataclass(frozen=True)
class RoadConfig:
    n_lanes: int = 3
    lane_width: float = 3.5

    def centre(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    @property
    def width(self) -> float:
        return self.n_lanes * self.lane_width


@dataclass(frozen=True)
class PemParams:
    """Parametric perception-error model.

    Detection probability is ``logistic(c0 + c_range * range + c_occ * occluded)``;
    offsets on (s, d, psi) are Gaussian with
    ``sigma = noise_base + noise_range_slope * range``.
    """

    detect_coeffs: tuple[float, float, float] = (5.2, -0.075, -2.0)
    noise_base: tuple[float, float, float] = (0.15, 0.08, 0.01)
    noise_range_slope: tuple[float, float, float] = (0.006, 0.0025, 0.0002)

    def __post_init__(self):
        if any(s < 0 for s in self.noise_base) or any(s < 0 for s in self.noise_range_slope):
            raise ValueError("PEM noise parameters must be non-negative")


@dataclass(frozen=True)
class TrackerConfig:
    process_accel_std: float = 1.0  # m/s^2, white-acceleration model on s and d
    heading_std: float = 0.02  # rad per step
    prior_pos_std: float = 1.0
    prior_vel_std: float = 1.0
    prior_lateral_vel_std: float | None = 0.6  # None reuses prior_vel_std


@dataclass(frozen=True)
class CostWeights:
    progress: float = 0.005
    velocity: float = 0.1
    accel: float = 0.3
    turn_rate: float = 2.0
    jerk: float = 0.0023
    heading: float = 2.0
    lane_centre: float = 0.2
    potential_field: float = 1240.0


@dataclass(frozen=True)
class ControllerConfig:
    horizon: int = 20
    v_ref: float = 30.0
    weights: CostWeights = field(default_factory=CostWeights)
    accels: tuple[float, ...] = (-8.0, -6.0, -4.0, -2.5, -1.0, 0.0, 1.0, 2.0)
    lane_offsets: tuple[int, ...] = (0, 1)
    a_min: float = -8.0
    a_max: float = 2.0
    turn_rate_max: float = 0.6
    wheelbase: float = 2.7
    max_steer: float = 0.5
    v_max: float = 40.0
    lane_change_time: float = 1.68
    field_sigma_s: float = 3.87
    field_sigma_d: float = 2.25
    field_headway: float = 0.45  # s; longitudinal field reach grows with closing speed
    safety_margin_s: float = 0.5
    safety_margin_d: float = 0.2
    refine: bool = False  # polish the winning acceleration off the candidate grid
    refine_points: int = 9

    def __post_init__(self):
        if not self.a_min < 0 < self.a_max:
            raise ValueError("need a_min < 0 < a_max")
        if not self.accels or not self.lane_offsets:
            raise ValueError("candidate sets must be non-empty")
        if any(w < 0 for w in asdict(self.weights).values()):
            raise ValueError("cost weights must be non-negative")
        if self.refine_points < 3:
            raise ValueError("refine_points must be >= 3")


@dataclass(frozen=True)
class RuleConstants:
    t_react: float = 0.3
    a_min_brake: float = -10.0
    a_braking_threshold: float = -2.0
    d_lead: float = 40.0
    v_slow: float = 13.6
    v_flow_min: float = 13.6
    dv_max: float = 5.5
    v_queue: float = 8.3
    near_radius: float = 30.0
    t_cut: float = 3.0
    cut_in_speed_gain: float = 1.0
    cut_in_lateral_speed: float = 0.2  # m/s towards the ego lane before a move counts as cutting in
    flag: float = 1.0
    on_access_ramp: bool = False
    on_main_carriageway: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    dt: float = 0.1
    T: int = 40
    road: RoadConfig = field(default_factory=RoadConfig)
    ego: VehicleSpec = field(default_factory=lambda: VehicleSpec("ego", s=15.0, lane=1, v=20.0))
    obstacles: tuple[VehicleSpec, ...] = field(
        default_factory=lambda: (
            VehicleSpec("static", s=40.0, lane=1, v=0.0, kind="static"),
            VehicleSpec("cutter", s=50.0, lane=1, v=5.0, maneuvers=(Maneuver(0.6, 2, 1.0),)),
            VehicleSpec("merger", s=50.0, lane=0, v=10.0, maneuvers=(Maneuver(1.0, 1, 1.0),)),
        )
    )
    pem: PemParams = field(default_factory=PemParams)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    rules: RuleConstants = field(default_factory=RuleConstants)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        return _build(cls, data)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def with_overrides(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


_NESTED = {
    "road": RoadConfig,
    "ego": VehicleSpec,
    "pem": PemParams,
    "tracker": TrackerConfig,
    "controller": ControllerConfig,
    "rules": RuleConstants,
    "weights": CostWeights,
}


def _build(cls, data: Any):
    if not isinstance(data, dict):
        raise ValueError(f"expected an object for {cls.__name__}, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, val in data.items():
        if key in _NESTED and isinstance(val, dict):
            val = _build(_NESTED[key], val)
        elif key == "obstacles":
            val = tuple(_build(VehicleSpec, v) if not is_dataclass(v) else v for v in val)
        elif key == "maneuvers":
            val = tuple(_build(Maneuver, m) if not is_dataclass(m) else m for m in val)
        elif isinstance(val, list):
            val = tuple(val)
        kwargs[key] = val
    return cls(**kwargs)


def seconds_to_steps(seconds: float, dt: float) -> int:
    steps = seconds / dt
    if not math.isclose(steps, round(steps), abs_tol=1e-9):
        raise ValueError(f"{seconds} s is not a whole number of {dt} s steps")
    return int(round(steps))
