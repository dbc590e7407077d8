import json
from importlib.resources import files

import numpy as np
import pytest

from stl_splitter.sim_core import (
    NoiseStream,
    SimulationError,
    SimulatorSnapshot,
    ToyWalkScenario,
    state_checksum,
)


class CoinSimulator:
    """One uniform draw at reset; ``x_t = u`` for every step.

    ``G[0,inf] ok`` with margin ``u - q`` fails with probability ``q``.
    """

    def __init__(self, horizon, proposal=None, record_draws=False):
        self.horizon = horizon
        self.dt = 1.0
        self.log_weight = 0.0
        self.draws = [] if record_draws else None
        self._u = None
        self._t = 0
        self._stream = None

    def reset(self, stream):
        self._stream = stream
        self._u = float(stream.uniform(1)[0])
        self._t = 0
        return np.array([self._u])

    def step(self):
        if self._t >= self.horizon:
            raise SimulationError("past horizon")
        self._t += 1
        return np.zeros(1), np.array([self._u])

    def snapshot(self):
        return SimulatorSnapshot(self._t, (self._u, self._t, self._stream.__getstate__()),
                                 state_checksum([self._u]))

    def restore(self, snap, stream=None):
        self._u, self._t, st = snap.payload
        self._stream = NoiseStream(*st) if stream is None else stream


class CoinScenario:
    name = "coin"

    def __init__(self, q, horizon=3):
        self.horizon = horizon
        self.dt = 1.0
        self.predicates = {"ok": lambda x, q=q: x[0] - q}
        self.rules = {"ok": "G[0,inf] ok"}
        self.default_rule = "ok"

    def make_simulator(self, proposal=None, record_draws=False):
        return CoinSimulator(self.horizon, proposal, record_draws)


@pytest.fixture
def coin():
    return CoinScenario


@pytest.fixture(scope="session")
def toy_scenario():
    return ToyWalkScenario(barrier=17.0)


@pytest.fixture(scope="session")
def lane_scenario():
    from stl_splitter.lane_change import LaneChangeScenario

    return LaneChangeScenario()


@pytest.fixture(scope="session")
def toy_oracle():
    """Frozen 10^7-sample Monte Carlo for the barrier-17 walk: ``{"p", "stderr", ...}``."""
    data = json.loads((files("stl_splitter") / "data" / "toy_oracle.json").read_text())
    return data["mc"]


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance():
    """``record(n, ok, detail)`` prints and keeps one PASS/FAIL line per criterion."""

    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
