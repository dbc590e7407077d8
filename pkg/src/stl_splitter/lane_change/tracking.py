"""Constant-velocity Kalman tracking of obstacles and forward prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrackerConfig

# track state: s, d, psi, vs, vd
_H = np.zeros((3, 5))
_H[0, 0] = _H[1, 1] = _H[2, 2] = 1.0


def _transition(dt: float, steps: int = 1) -> np.ndarray:
    F = np.eye(5)
    F[0, 3] = F[1, 4] = dt * steps
    return F


def _process_noise(dt: float, cfg: TrackerConfig) -> np.ndarray:
    q = cfg.process_accel_std**2
    Q = np.zeros((5, 5))
    for pos, vel in ((0, 3), (1, 4)):
        Q[pos, pos] = q * dt**4 / 4
        Q[pos, vel] = Q[vel, pos] = q * dt**3 / 2
        Q[vel, vel] = q * dt**2
    Q[2, 2] = cfg.heading_std**2
    return Q


@dataclass
class TrackEstimate:
    """Per-obstacle means ``(n, 5)``, covariances ``(n, 5, 5)`` and staleness."""

    means: np.ndarray
    covs: np.ndarray
    staleness: np.ndarray

    def copy(self) -> "TrackEstimate":
        return TrackEstimate(self.means.copy(), self.covs.copy(), self.staleness.copy())

    @classmethod
    def from_prior(cls, states, cfg: TrackerConfig) -> "TrackEstimate":
        """Prior centred on ``(s, d, psi, v)`` rows with the configured spreads."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        n = len(states)
        means = np.zeros((n, 5))
        means[:, 0] = states[:, 0]
        means[:, 1] = states[:, 1]
        means[:, 2] = states[:, 2]
        means[:, 3] = states[:, 3] * np.cos(states[:, 2])
        means[:, 4] = states[:, 3] * np.sin(states[:, 2])
        lat = cfg.prior_vel_std if cfg.prior_lateral_vel_std is None else cfg.prior_lateral_vel_std
        var = np.array(
            [cfg.prior_pos_std**2, cfg.prior_pos_std**2, cfg.heading_std**2,
             cfg.prior_vel_std**2, lat**2]
        )
        covs = np.repeat(np.diag(var)[None], n, axis=0)
        return cls(means, covs, np.zeros(n, dtype=int))

    @property
    def speeds(self) -> np.ndarray:
        return self.means[:, 3]


def track_update(
    est: TrackEstimate,
    observations,
    dt: float,
    cfg: TrackerConfig,
    meas_sigmas=None,
    Q: np.ndarray | None = None,
) -> TrackEstimate:
    """Kalman predict for every track, then update each detected obstacle.

    ``meas_sigmas[k]`` is the assumed (s, d, psi) measurement std for obstacle
    ``k``; zero entries are allowed (exact measurement).
    """
    F = _transition(dt)
    if Q is None:
        Q = _process_noise(dt, cfg)
    means = est.means @ F.T
    covs = F @ est.covs @ F.T + Q
    stale = est.staleness + 1
    idx = [k for k, obs in enumerate(observations) if obs.detected]
    if idx:
        z = np.array([[observations[k].s, observations[k].d, observations[k].psi] for k in idx])
        if meas_sigmas is None:
            R = np.zeros((len(idx), 3, 3))
        else:
            sig = np.asarray([meas_sigmas[k] for k in idx], dtype=float)
            R = np.einsum("ki,ij->kij", sig**2, np.eye(3))
        P = covs[idx]
        PH = P[:, :, :3]  # P H^T
        S = P[:, :3, :3] + R
        try:
            K = np.linalg.solve(S, PH.transpose(0, 2, 1)).transpose(0, 2, 1)
        except np.linalg.LinAlgError:  # degenerate zero-noise case
            K = PH @ np.linalg.pinv(S)
        means[idx] = means[idx] + np.einsum("kij,kj->ki", K, z - means[idx, :3])
        I_KH = np.eye(5) - K @ _H
        P = I_KH @ P @ I_KH.transpose(0, 2, 1) + K @ R @ K.transpose(0, 2, 1)  # Joseph form
        covs[idx] = 0.5 * (P + P.transpose(0, 2, 1))
        stale[idx] = 0
    return TrackEstimate(means, covs, stale)


def predict(est: TrackEstimate, i: int, dt: float, cfg: TrackerConfig | None = None) -> TrackEstimate:
    """``i``-fold constant-velocity prediction (covariance grows if ``cfg`` given)."""
    if i < 0:
        raise ValueError("prediction steps must be >= 0")
    if i == 0:
        return est.copy()
    F = _transition(dt, i)
    means = est.means @ F.T
    if cfg is None:
        covs = F @ est.covs @ F.T
    else:
        F1, Q = _transition(dt), _process_noise(dt, cfg)
        covs = est.covs.copy()
        for _ in range(i):
            covs = F1 @ covs @ F1.T + Q
    return TrackEstimate(means, covs, est.staleness.copy())


def predict_positions(est: TrackEstimate, horizon: int, dt: float, d_bounds=None) -> np.ndarray:
    """Mean (s, d) for steps ``1..horizon``; shape ``(horizon, n, 2)``.

    ``d_bounds=(lo, hi)`` clamps the lateral extrapolation, so a vehicle
    drifting sideways is predicted to stop at the road edge.
    """
    k = np.arange(1, horizon + 1)[:, None] * dt
    s = est.means[None, :, 0] + k * est.means[None, :, 3]
    d = est.means[None, :, 1] + k * est.means[None, :, 4]
    if d_bounds is not None:
        d = np.clip(d, d_bounds[0], d_bounds[1])
    return np.stack([s, d], axis=-1)
