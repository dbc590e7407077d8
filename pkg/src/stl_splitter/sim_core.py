"""Simulator contract, trajectories, reproducible noise streams and the
random-walk scenario used as a statistical oracle.

Every draw a simulator makes comes from a :class:`NoiseStream`, a
counter-based stream keyed by ``(master_seed, stream_id)``. Value ``k`` of a
stream depends only on that key and ``k``, so trajectories do not depend on
the order in which they are run.
"""

from __future__ import annotations

import csv
import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol

import numpy as np
from scipy.special import ndtri

from .monitor import WorkList

__all__ = [
    "NoiseStream",
    "StreamRegistry",
    "stream_id",
    "Trajectory",
    "SimulatorSnapshot",
    "Simulator",
    "Scenario",
    "SimulationError",
    "run_trajectory",
    "resume_trajectory",
    "ToyWalkSimulator",
    "ToyWalkScenario",
    "toy_walk_simulator",
    "ProposalParams",
]

_MASK64 = (1 << 64) - 1
_BLOCK = 512  # values per Philox block; multiple of 4 (one counter tick = 4 outputs)


def stream_id(*parts) -> int:
    """Stable 64-bit id for a tuple of labels / integers."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, (int, np.integer)):
            h.update(b"i" + struct.pack("<q", int(p)))
        else:
            h.update(b"s" + str(p).encode() + b"\0")
    return int.from_bytes(h.digest(), "little")


class NoiseStream:
    """Counter-based uniform/normal stream.

    ``uniform()`` returns values ``u_counter, u_counter+1, ...`` where
    ``u_k`` is a fixed function of ``(master_seed, stream_id, k)``. Normals
    are produced by inversion, one uniform each, so the counter is exact.
    """

    __slots__ = ("master_seed", "stream_id", "counter", "_blk", "_cache")

    def __init__(self, master_seed: int, stream_id: int, counter: int = 0):
        self.master_seed = int(master_seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.counter = int(counter)
        self._blk = -1
        self._cache = None

    def _block(self, b):
        if b != self._blk:
            bg = np.random.Philox(
                key=self.master_seed | (self.stream_id << 64), counter=b * (_BLOCK // 4)
            )
            raw = bg.random_raw(_BLOCK)
            # 53-bit midpoints in (0, 1): never exactly 0 or 1
            self._cache = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
            self._blk = b
        return self._cache

    def uniform(self, size: int) -> np.ndarray:
        out = np.empty(size)
        filled = 0
        while filled < size:
            b, off = divmod(self.counter, _BLOCK)
            blk = self._block(b)
            take = min(size - filled, _BLOCK - off)
            out[filled : filled + take] = blk[off : off + take]
            filled += take
            self.counter += take
        return out

    def normal(self, size: int) -> np.ndarray:
        return ndtri(self.uniform(size))

    def fork(self) -> "NoiseStream":
        """Copy with the same key and position."""
        return NoiseStream(self.master_seed, self.stream_id, self.counter)

    def __getstate__(self):
        return (self.master_seed, self.stream_id, self.counter)

    def __setstate__(self, state):
        self.__init__(*state)

    def __repr__(self):
        return f"NoiseStream(seed={self.master_seed}, stream={self.stream_id:#x}, counter={self.counter})"


class StreamRegistry:
    """Refuses to hand out the same stream id twice."""

    def __init__(self, master_seed: int):
        self.master_seed = master_seed
        self._used: set[int] = set()

    def claim(self, *parts) -> NoiseStream:
        sid = stream_id(*parts)
        if sid in self._used:
            raise RuntimeError(f"noise stream {parts!r} already consumed")
        self._used.add(sid)
        return NoiseStream(self.master_seed, sid)

    def __len__(self):
        return len(self._used)


def state_checksum(x) -> str:
    return hashlib.blake2b(np.ascontiguousarray(x, dtype=np.float64).tobytes(), digest_size=12).hexdigest()


@dataclass(frozen=True)
class SimulatorSnapshot:
    """Opaque simulator state at timestep ``t``."""

    t: int
    payload: Any
    checksum: str
    version: int = 1


class SimulationError(RuntimeError):
    pass


@dataclass
class Trajectory:
    """States ``x_0..x_t`` and actions ``a_0..a_t`` at fixed timestep ``dt``.

    The terminal action is zero (no control is applied after the last step).
    ``snapshots`` / ``monitors`` cache simulator and work-list state per
    timestep for resumption; they are not part of equality.
    """

    dt: float
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    seed_lineage: list = field(default_factory=list)
    log_weight: float = 0.0
    snapshots: dict = field(default_factory=dict, repr=False, compare=False)
    monitors: dict = field(default_factory=dict, repr=False, compare=False)
    draws: Any = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.states)

    def prefix(self, t: int) -> "Trajectory":
        """``tau[0:t]`` (the first ``t+1`` steps), with caches up to ``t``."""
        if not 0 <= t < len(self.states):
            raise IndexError(f"prefix end {t} outside [0, {len(self.states) - 1}]")
        return Trajectory(
            dt=self.dt,
            states=[s.copy() for s in self.states[: t + 1]],
            actions=[a.copy() for a in self.actions[: t + 1]],
            seed_lineage=list(self.seed_lineage),
            log_weight=self.log_weight,
            snapshots={k: v for k, v in self.snapshots.items() if k <= t},
            monitors={k: v for k, v in self.monitors.items() if k <= t},
        )

    def clone(self) -> "Trajectory":
        return self.prefix(len(self.states) - 1)

    def state_array(self) -> np.ndarray:
        return np.asarray(self.states, dtype=float)

    def action_array(self) -> np.ndarray:
        return np.asarray(self.actions, dtype=float)

    def to_csv(self, path, state_names=None, action_names=None) -> None:
        X, A = self.state_array(), self.action_array()
        state_names = state_names or [f"x{k}" for k in range(X.shape[1])]
        action_names = action_names or [f"a{k}" for k in range(A.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *state_names, *action_names])
            for t in range(len(X)):
                w.writerow([t, *map(repr, X[t].tolist()), *map(repr, A[t].tolist())])


class Simulator(Protocol):
    """Black-box stochastic simulator driven by a :class:`NoiseStream`."""

    dt: float
    horizon: int

    def reset(self, stream: NoiseStream) -> np.ndarray: ...

    def step(self) -> tuple[np.ndarray, np.ndarray]:
        """Choose and apply ``a_t``; return ``(a_t, x_{t+1})``."""

    def snapshot(self) -> SimulatorSnapshot: ...

    def restore(self, snap: SimulatorSnapshot, stream: NoiseStream | None = None) -> None: ...

    @property
    def log_weight(self) -> float: ...


class Scenario(Protocol):
    """Factory for simulators plus the predicates their states support."""

    name: str
    horizon: int
    dt: float
    predicates: Mapping[str, Callable[[np.ndarray], float]]

    def make_simulator(self, proposal=None, record_draws: bool = False) -> Simulator: ...


@dataclass(frozen=True)
class ProposalParams:
    """Importance-sampling proposal over a scenario's noise.

    Gaussian offsets are drawn as ``sigma_target * (noise_mean + noise_scale * z)``
    unless ``noise_sigma`` is given, in which case they are absolute
    ``N(noise_mean, noise_sigma**2)``. Detection follows
    ``logistic(target_logit + logit_shift)`` unless ``miss_rate`` fixes the
    miss probability outright.
    """

    miss_rate: float | None = None
    logit_shift: float = 0.0
    noise_mean: tuple = (0.0, 0.0, 0.0)
    noise_scale: tuple = (1.0, 1.0, 1.0)
    noise_sigma: tuple | None = None

    def __post_init__(self):
        if self.miss_rate is not None and not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError("miss_rate must lie in [0, 1]")
        if any(s <= 0 for s in self.noise_scale):
            raise ValueError("noise_scale entries must be > 0")
        if self.noise_sigma is not None and any(s <= 0 for s in self.noise_sigma):
            raise ValueError("noise_sigma entries must be > 0")

    @property
    def is_identity(self) -> bool:
        return (
            self.miss_rate is None
            and self.logit_shift == 0.0
            and self.noise_sigma is None
            and all(m == 0.0 for m in self.noise_mean)
            and all(s == 1.0 for s in self.noise_scale)
        )

    def to_dict(self) -> dict:
        return {
            "miss_rate": self.miss_rate,
            "logit_shift": self.logit_shift,
            "noise_mean": list(self.noise_mean),
            "noise_scale": list(self.noise_scale),
            "noise_sigma": None if self.noise_sigma is None else list(self.noise_sigma),
        }


def _log_normal_pdf(x, mean, sigma):
    z = (x - mean) / sigma
    return -0.5 * z * z - np.log(sigma) - 0.5 * math.log(2 * math.pi)


def gaussian_offsets(stream: NoiseStream, sigma_target, proposal: ProposalParams | None):
    """Draw offsets with std ``sigma_target`` under the target or a proposal.

    Returns ``(offsets, log_ratio, z_std)`` where ``log_ratio`` is
    ``log p_target - log p_proposal`` and ``z_std = offsets / sigma_target``.
    """
    sigma_target = np.asarray(sigma_target, dtype=float)
    k = sigma_target.size
    z = stream.normal(k)
    if proposal is None:
        return sigma_target * z, 0.0, z
    if proposal.noise_sigma is not None:
        mean = np.asarray(proposal.noise_mean[:k], dtype=float)
        sig = np.asarray(proposal.noise_sigma[:k], dtype=float)
    else:
        mean = sigma_target * np.asarray(proposal.noise_mean[:k], dtype=float)
        sig = sigma_target * np.asarray(proposal.noise_scale[:k], dtype=float)
    eps = mean + sig * z
    lr = float(np.sum(_log_normal_pdf(eps, 0.0, sigma_target) - _log_normal_pdf(eps, mean, sig)))
    return eps, lr, eps / sigma_target


# ---------------------------------------------------------------------------
# running and resuming


def run_trajectory(
    sim: Simulator,
    T: int,
    stream: NoiseStream,
    wl: WorkList,
    snapshot_stride: int = 1,
) -> tuple[Trajectory, np.ndarray]:
    """Simulate ``T`` steps while monitoring; returns the trajectory and ``L_0..L_T``."""
    x = np.asarray(sim.reset(stream), dtype=float)
    traj = Trajectory(dt=sim.dt, seed_lineage=[(0, stream.stream_id)])
    levels = np.empty(T + 1)
    _check_state(x, 0)
    traj.states.append(x)
    levels[0] = wl.update(x)
    _cache(traj, sim, wl, 0, snapshot_stride)
    _advance(sim, traj, wl, levels, 0, T, snapshot_stride)
    return traj, levels


def resume_trajectory(
    prefix: Trajectory,
    snapshot: SimulatorSnapshot,
    t_splice: int,
    T: int,
    stream: NoiseStream | None,
    wl_prefix: WorkList,
    sim: Simulator,
    levels_prefix,
    snapshot_stride: int = 1,
) -> tuple[Trajectory, np.ndarray]:
    """Continue ``prefix`` from ``t_splice`` with a fresh noise stream.

    ``snapshot`` and ``wl_prefix`` must describe the prefix at ``t_splice``;
    they are copied, never mutated. ``stream=None`` continues with the
    stream state stored in the snapshot.
    """
    if snapshot.t != t_splice or wl_prefix.watermark != t_splice:
        raise SimulationError("snapshot / work-list do not sit at the splice point")
    if snapshot.checksum != state_checksum(prefix.states[t_splice]):
        raise SimulationError("snapshot does not match the prefix state (checksum)")
    traj = prefix.prefix(t_splice)
    traj.actions = traj.actions[:t_splice]
    sim.restore(snapshot, stream)
    if stream is not None:
        traj.seed_lineage.append((t_splice, stream.stream_id))
    traj.log_weight = sim.log_weight
    wl = wl_prefix.copy()
    levels = np.empty(T + 1)
    levels[: t_splice + 1] = levels_prefix[: t_splice + 1]
    # replays after the splice must start from the new stream, never the parent's
    traj.snapshots[t_splice] = sim.snapshot()
    traj.monitors[t_splice] = wl.copy()
    if t_splice == T:
        traj.actions.append(prefix.actions[t_splice].copy())
        return traj, levels
    _advance(sim, traj, wl, levels, t_splice, T, snapshot_stride)
    return traj, levels


def _advance(sim, traj, wl, levels, t0, T, stride):
    for t in range(t0, T):
        a, x = sim.step()
        x = np.asarray(x, dtype=float)
        _check_state(x, t + 1)
        traj.actions.append(np.asarray(a, dtype=float))
        traj.states.append(x)
        levels[t + 1] = wl.update(x)
        _cache(traj, sim, wl, t + 1, stride)
    traj.actions.append(np.zeros_like(traj.actions[-1]) if traj.actions else np.zeros(1))
    traj.log_weight = sim.log_weight
    draws = getattr(sim, "draws", None)
    if draws is not None:
        traj.draws = draws


def _cache(traj, sim, wl, t, stride):
    if t % stride == 0:
        traj.snapshots[t] = sim.snapshot()
        traj.monitors[t] = wl.copy()


def _check_state(x, t):
    if not np.all(np.isfinite(x)):
        raise SimulationError(f"non-finite state at t={t}: {x}")


def splice_point(traj: Trajectory, levels, t_splice: int, sim: Simulator, T: int):
    """Snapshot and work-list at ``t_splice``, replaying forward from the
    nearest earlier cached step when the stride skipped it."""
    if t_splice in traj.snapshots:
        return traj.snapshots[t_splice], traj.monitors[t_splice]
    base = max(k for k in traj.snapshots if k <= t_splice)
    sim.restore(traj.snapshots[base], None)
    wl = traj.monitors[base].copy()
    for t in range(base, t_splice):
        _, x = sim.step()
        wl.update(np.asarray(x, dtype=float))
    return sim.snapshot(), wl


# ---------------------------------------------------------------------------
# random-walk oracle scenario


class ToyWalkSimulator:
    """Scalar walk ``x_{t+1} = x_t + drift + sigma z_t`` from ``x_0 = 0``.

    The combined state is ``[x_t]`` and the action is the applied increment.
    Under a proposal, ``z_t`` is drawn from ``N(mean, scale**2)`` (first
    components of the proposal's noise parameters) and the log-likelihood
    ratio is accumulated.
    """

    def __init__(self, drift: float, sigma: float, horizon: int, dt: float = 1.0, proposal=None,
                 record_draws: bool = False):
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        self.drift = float(drift)
        self.sigma = float(sigma)
        self.horizon = int(horizon)
        self.dt = dt
        self.proposal = None if proposal is None or proposal.is_identity else proposal
        self.record_draws = record_draws
        self._stream = None
        self._x = 0.0
        self._t = 0
        self._lw = 0.0
        self.draws = [] if record_draws else None

    @property
    def log_weight(self) -> float:
        return self._lw

    def reset(self, stream: NoiseStream) -> np.ndarray:
        self._stream = stream
        self._x, self._t, self._lw = 0.0, 0, 0.0
        if self.record_draws:
            self.draws = []
        return np.array([self._x])

    def step(self):
        if self._t >= self.horizon:
            raise SimulationError("simulation already reached its horizon")
        z, lr, zs = gaussian_offsets(self._stream, np.ones(1), self.proposal)
        self._lw += lr
        if self.record_draws:
            self.draws.append(float(zs[0]))
        inc = self.drift + self.sigma * float(z[0])
        self._x = self._x + inc
        self._t += 1
        return np.array([inc]), np.array([self._x])

    def snapshot(self) -> SimulatorSnapshot:
        payload = (self._x, self._t, self._lw, self._stream.__getstate__(),
                   None if self.draws is None else list(self.draws))
        return SimulatorSnapshot(self._t, payload, state_checksum([self._x]))

    def restore(self, snap: SimulatorSnapshot, stream: NoiseStream | None = None) -> None:
        x, t, lw, sstate, draws = snap.payload
        self._x, self._t, self._lw = x, t, lw
        self._stream = NoiseStream(*sstate) if stream is None else stream
        if self.record_draws:
            self.draws = list(draws or [])


class ToyWalkScenario:
    """Random walk with barrier predicates.

    ``level`` has margin ``barrier - x`` so ``G[0,inf] level`` fails iff the
    walk exceeds the barrier; ``floor`` has margin ``x + barrier`` (mirror).
    """

    name = "toy_walk"

    def __init__(self, drift: float = 0.0, sigma: float = 1.0, horizon: int = 20,
                 barrier: float = 17.0, dt: float = 1.0):
        self.drift = drift
        self.sigma = sigma
        self.horizon = horizon
        self.barrier = barrier
        self.dt = dt
        c = float(barrier)
        self.predicates = {
            "level": lambda x, c=c: c - x[0],
            "floor": lambda x, c=c: x[0] + c,
            "positive": lambda x: x[0],
        }
        self.rules = {"barrier": "G[0,inf] level", "floor": "G[0,inf] floor"}
        self.default_rule = "barrier"

    def make_simulator(self, proposal=None, record_draws=False) -> ToyWalkSimulator:
        return ToyWalkSimulator(self.drift, self.sigma, self.horizon, self.dt, proposal, record_draws)

    def config(self) -> dict:
        return {"drift": self.drift, "sigma": self.sigma, "horizon": self.horizon,
                "barrier": self.barrier, "dt": self.dt}


def toy_walk_simulator(drift: float, sigma: float, T: int) -> ToyWalkSimulator:
    return ToyWalkSimulator(drift, sigma, T)
