"""Kinematic single-track vehicle model and the combined-state layout."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# per-vehicle fields in the combined state vector
S, D, PSI, V, LEN, WID = range(6)
VEHICLE_FIELDS = ("s", "d", "psi", "v", "length", "width")
NV = len(VEHICLE_FIELDS)


@dataclass(frozen=True)
class VehicleState:
    s: float
    d: float
    psi: float
    v: float
    length: float = 4.5
    width: float = 2.0

    def lane(self, lane_width: float = 3.5) -> int:
        return lane_index(self.d, lane_width)

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.d, self.psi, self.v, self.length, self.width])

    @classmethod
    def from_array(cls, row) -> "VehicleState":
        return cls(*map(float, row[:NV]))


def lane_index(d: float, lane_width: float = 3.5) -> int:
    return int(math.floor(d / lane_width))


def dyn_step(
    x: VehicleState,
    a,
    dt: float,
    wheelbase: float = 2.7,
    v_max: float = 40.0,
    max_steer: float = 0.5,
) -> VehicleState:
    """One explicit-Euler step of the kinematic single-track model.

    ``a = (acceleration, turn_rate)``; the turn rate is converted to a steering
    angle through the wheelbase and clipped to ``max_steer``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    acc, omega = float(a[0]), float(a[1])
    if x.v > 1e-9:
        steer = math.atan(omega * wheelbase / x.v)
    else:
        steer = math.copysign(max_steer, omega) if omega else 0.0
    steer = max(-max_steer, min(max_steer, steer))
    psi = x.psi + x.v / wheelbase * math.tan(steer) * dt
    v = min(max(x.v + acc * dt, 0.0), v_max)
    s = x.s + x.v * math.cos(x.psi) * dt
    d = x.d + x.v * math.sin(x.psi) * dt
    return VehicleState(s, d, psi, v, x.length, x.width)


def smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)
