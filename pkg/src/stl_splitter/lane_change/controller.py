"""Receding-horizon controller by candidate enumeration.

Each candidate holds one acceleration over the horizon and steers towards a
target lane along a cubic lateral profile. Candidates that leave the road or
hit a predicted obstacle footprint are dropped; the cheapest survivor's first
action is applied. With no survivor the controller brakes at ``a_min``.

With ``refine`` on, the winning acceleration is then polished within its
lane: a fine grid between the neighbouring candidate values, followed by a
parabolic step through the best grid point. The applied acceleration then
varies continuously with the tracked scene instead of snapping to the
candidate set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ControllerConfig, RoadConfig
from .dynamics import VehicleState, lane_index
from .tracking import TrackEstimate, predict_positions


@dataclass(frozen=True)
class Plan:
    accel: float
    target_lane: int
    action: np.ndarray
    cost: float
    feasible: bool


def _hermite_lateral(d0, slope0, d_target, tau):
    tau = np.clip(tau, 0.0, 1.0)
    t2, t3 = tau * tau, tau * tau * tau
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + tau
    h01 = -2 * t3 + 3 * t2
    return h00 * d0 + h10 * slope0 + h01 * d_target


def candidate_rollouts(ego: VehicleState, cfg: ControllerConfig, road: RoadConfig, dt: float,
                       acc=None, lane=None):
    """Closed-form rollouts for every (acceleration, target lane) pair.

    By default the pairs are the configured candidate set; pass ``acc`` and
    ``lane`` arrays to roll out others. Returns ``(accels, lanes, s, d, v,
    psi)`` with trajectories of shape ``(C, H + 2)`` covering steps ``0 .. H+1``.
    """
    H = cfg.horizon
    if acc is None:
        cur = min(max(lane_index(ego.d, road.lane_width), 0), road.n_lanes - 1)
        lanes = sorted({cur + o for o in cfg.lane_offsets if 0 <= cur + o < road.n_lanes})
        acc = np.repeat(np.asarray(cfg.accels, dtype=float), len(lanes))
        lane = np.tile(np.asarray(lanes), len(cfg.accels))
    acc, lane = np.asarray(acc, dtype=float), np.asarray(lane)
    k = np.arange(H + 2)
    v = np.clip(ego.v + acc[:, None] * k[None, :] * dt, 0.0, cfg.v_max)
    s = ego.s + dt * np.concatenate([np.zeros((len(acc), 1)), np.cumsum(v[:, :-1], axis=1)], axis=1)
    d_target = (lane + 0.5) * road.lane_width
    dur = cfg.lane_change_time * np.clip(np.abs(d_target - ego.d) / road.lane_width, 0.35, 1.0)
    slope0 = dur * ego.v * np.tan(ego.psi)
    tau = k[None, :] * dt / dur[:, None]
    d = _hermite_lateral(ego.d, slope0[:, None], d_target[:, None], tau)
    d[:, 1] = ego.d + ego.v * np.sin(ego.psi) * dt  # already fixed by the current heading
    ds = np.diff(s, axis=1)
    dd = np.diff(d, axis=1)
    psi = np.where(ds > 1e-6, np.arctan2(dd, np.maximum(ds, 1e-6)), 0.0)
    psi = np.concatenate([np.full((len(acc), 1), ego.psi), psi[:, 1:], psi[:, -1:]], axis=1)
    return acc, lane, s, d, v, psi


def _score(ego, tracks, cfg, road, dt, extents, a_prev, acc=None, lane=None):
    """Rollouts with their cost (``inf`` when infeasible) and first turn rate."""
    H = cfg.horizon
    w = cfg.weights
    acc, lane, s, d, v, psi = candidate_rollouts(ego, cfg, road, dt, acc, lane)
    omega = np.clip(np.diff(psi, axis=1) / dt, -cfg.turn_rate_max, cfg.turn_rate_max)

    # cost terms over steps 1..H
    sl = slice(1, H + 1)
    centre = (np.floor(d[:, sl] / road.lane_width) + 0.5) * road.lane_width
    cost = (
        w.velocity * np.sum((v[:, sl] - cfg.v_ref) ** 2, axis=1)
        + w.accel * H * acc**2
        + w.turn_rate * np.sum(omega[:, :H] ** 2, axis=1)
        + w.jerk * ((acc - a_prev) / dt) ** 2
        + w.heading * np.sum(psi[:, sl] ** 2, axis=1)
        + w.lane_centre * np.sum((d[:, sl] - centre) ** 2, axis=1)
        - w.progress * (s[:, H] - ego.s)
    )

    feasible = np.ones(len(acc), dtype=bool)
    half_w = ego.width / 2
    feasible &= np.all(d[:, sl] - half_w >= 0.0, axis=1) & np.all(d[:, sl] + half_w <= road.width, axis=1)
    if len(extents):
        ext = np.asarray(extents, dtype=float)
        half = ext[:, 1] / 2
        pred = predict_positions(tracks, H, dt, (half, road.width - half))  # (H, n, 2)
        ds = s[:, sl, None] - pred[None, :, :, 0]
        dd = d[:, sl, None] - pred[None, :, :, 1]
        lim_s = (ego.length + ext[:, 0]) / 2 + cfg.safety_margin_s
        lim_d = (ego.width + ext[:, 1]) / 2 + cfg.safety_margin_d
        hit = (np.abs(ds) < lim_s) & (np.abs(dd) < lim_d)
        feasible &= ~np.any(hit, axis=(1, 2))
        closing = np.maximum(v[:, sl, None] - tracks.speeds[None, None, :], 0.0)
        sigma_s = cfg.field_sigma_s + cfg.field_headway * closing
        field = np.exp(-((ds / sigma_s) ** 2) - (dd / cfg.field_sigma_d) ** 2)
        cost = cost + w.potential_field * field.sum(axis=(1, 2))
    return acc, lane, np.where(feasible, cost, np.inf), omega[:, 0]


def _refine(a0, lane0, cost0, omega0, score, cfg):
    grid_set = np.unique(np.clip(np.asarray(cfg.accels, dtype=float), cfg.a_min, cfg.a_max))
    below, above = grid_set[grid_set < a0], grid_set[grid_set > a0]
    lo = below.max() if below.size else a0
    hi = above.min() if above.size else a0
    if hi <= lo:
        return a0, cost0, omega0
    x = np.linspace(lo, hi, cfg.refine_points)
    _, _, c, om = score(x, np.full(len(x), lane0))
    i = int(np.argmin(c))
    best = (float(x[i]), float(c[i]), float(om[i]))
    if best[1] > cost0:
        best = (a0, cost0, omega0)
    if 0 < i < len(x) - 1 and np.all(np.isfinite(c[i - 1:i + 2])):
        # vertex of the parabola through the three points around the grid minimum
        h = x[1] - x[0]
        curv = c[i - 1] - 2 * c[i] + c[i + 1]
        if curv > 0:
            xv = float(np.clip(x[i] + 0.5 * h * (c[i - 1] - c[i + 1]) / curv, x[i - 1], x[i + 1]))
            _, _, cv, omv = score(np.array([xv]), np.array([lane0]))
            if cv[0] <= best[1]:
                best = (xv, float(cv[0]), float(omv[0]))
    return best


def controller_plan(
    ego: VehicleState,
    tracks: TrackEstimate,
    cfg: ControllerConfig,
    road: RoadConfig,
    dt: float,
    extents,
    a_prev: float = 0.0,
) -> Plan:
    """Pick the first action of the cheapest feasible candidate plan.

    ``extents`` lists ``(length, width)`` for each tracked obstacle.
    """

    def score(acc=None, lane=None):
        return _score(ego, tracks, cfg, road, dt, extents, a_prev, acc, lane)

    acc, lane, cost, omega = score()
    if not np.isfinite(cost).any():
        return Plan(cfg.a_min, lane_index(ego.d, road.lane_width), np.array([cfg.a_min, 0.0]), float("inf"), False)
    best = int(np.argmin(cost))  # ties resolve to the earliest candidate
    a, c, om = float(acc[best]), float(cost[best]), float(omega[best])
    if cfg.refine:
        a, c, om = _refine(a, int(lane[best]), c, om, score, cfg)
    a = float(np.clip(a, cfg.a_min, cfg.a_max))
    return Plan(a, int(lane[best]), np.array([a, om]), c, True)
