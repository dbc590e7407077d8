"""The four traffic rules as STL formulas over the combined scenario state.

Predicate margins read the combined state vector laid out by
:func:`state_layout`: the ego's six fields, six fields per obstacle, then the
ego's last applied acceleration. Rules quantified over obstacles are unrolled
into a conjunction with one copy per obstacle; predicate names carry an
``_o<k>`` suffix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..stl import (
    INF,
    Always,
    And,
    Formula,
    Historically,
    Implies,
    Interval,
    Not,
    Once,
    Or,
    Pred,
    PredicateBinding,
    conjunction,
)
from .config import RuleConstants, ScenarioConfig, seconds_to_steps
from .dynamics import D, LEN, NV, S, V, WID

RULES = ("phi1", "phi2", "phi3", "phi4")
RULE_TITLES = {
    "phi1": "Safe distance from vehicles",
    "phi2": "Unnecessary braking",
    "phi3": "Preserve traffic flow",
    "phi4": "Don't drive faster than left traffic",
}


@dataclass(frozen=True)
class Layout:
    n_obstacles: int
    lane_width: float

    def ego(self, x):
        return x[:NV]

    def obstacle(self, x, k):
        return x[NV * (k + 1) : NV * (k + 2)]

    def accel_index(self) -> int:
        return NV * (self.n_obstacles + 1)

    @property
    def size(self) -> int:
        return NV * (self.n_obstacles + 1) + 1


def state_layout(cfg: ScenarioConfig) -> Layout:
    return Layout(len(cfg.obstacles), cfg.road.lane_width)


# ---------------------------------------------------------------------------
# margins on vehicle rows (s, d, psi, v, length, width)


def _lane(d, w):
    return math.floor(d / w)


def in_same_lane(e, o, w) -> float:
    """Positive iff both centres share a lane index; magnitude from the lateral offset."""
    dd = abs(e[D] - o[D])
    if _lane(e[D], w) == _lane(o[D], w):
        return (w - dd) / 2.0
    return -min(dd, w) / 2.0


def in_front_of(e, o) -> float:
    """Front-to-rear gap from the ego to ``o``; positive iff ``o`` is ahead."""
    return (o[S] - o[LEN] / 2.0) - (e[S] + e[LEN] / 2.0)


def safe_distance(e, o, c: RuleConstants) -> float:
    gap = in_front_of(e, o)
    d_safe = e[V] * c.t_react + max(0.0, e[V] ** 2 - o[V] ** 2) / (2.0 * abs(c.a_min_brake))
    return gap - d_safe


def lane_intrusion(e, o, w) -> float:
    """Depth of ``o``'s footprint inside the ego's lane; negative when clear of it."""
    lane = _lane(e[D], w)
    lo, hi = lane * w, (lane + 1) * w
    return min(hi, o[D] + o[WID] / 2.0) - max(lo, o[D] - o[WID] / 2.0)


def lateral_overlap(e, o) -> float:
    """Overlap of the two footprints across the road; negative is the clearance."""
    return min(e[D] + e[WID] / 2.0, o[D] + o[WID] / 2.0) - max(e[D] - e[WID] / 2.0, o[D] - o[WID] / 2.0)


def cut_in(e, o, w, c: RuleConstants) -> float:
    """Lateral penetration of ``o`` into the ego lane while moving towards it and ahead."""
    depth = lane_intrusion(e, o, w)
    centre = (_lane(e[D], w) + 0.5) * w
    vd = o[V] * math.sin(o[2])
    towards = c.cut_in_speed_gain * (vd * math.copysign(1.0, centre - o[D]) - c.cut_in_lateral_speed)
    return min(depth, towards, in_front_of(e, o))


def leader_margin(e, o, w, c: RuleConstants) -> float:
    """``o`` is ahead in the ego's path and within ``d_lead``.

    The path is the ego footprint's lateral extent, so a vehicle part-way
    through a cut-in counts, and so does one the ego is still leaving behind
    during its own lane change.
    """
    gap = in_front_of(e, o)
    return min(lateral_overlap(e, o), gap, c.d_lead - gap)


def is_lane_leader(e, o, w, c: RuleConstants) -> bool:
    """Same lane index, ahead, and no further than ``d_lead``."""
    gap = in_front_of(e, o)
    return _lane(e[D], w) == _lane(o[D], w) and 0.0 < gap <= c.d_lead


def left_of(e, o, w) -> float:
    """``lane(o) > lane(ego)``, with the margin as an L1 distance in ``(d_o, d_ego)``.

    When true, the margin is the smallest total lateral move that puts both
    centres into a common lane. When false, it is minus the smallest total
    move that places a lane boundary between them with ``o`` on the left.
    The sign always follows the lane indices.
    """
    do, de = o[D], e[D]
    lo, le = _lane(do, w), _lane(de, w)
    if lo > le:
        return min(max(do - (j + 1) * w, 0.0) + max(j * w - de, 0.0) for j in range(le, lo + 1))
    return -min(max(k * w - do, 0.0) + max(de - k * w, 0.0) for k in range(lo, le + 2))


class _Margins:
    """Predicate evaluators bound to one scenario layout and constant set."""

    def __init__(self, layout: Layout, consts: RuleConstants):
        self.L = layout
        self.c = consts

    def pair(self, k, fn):
        L = self.L

        def margin(x):
            return float(fn(L.ego(x), L.obstacle(x, k)))

        return margin

    def unnecessary_braking(self, x) -> float:
        e, c, w = self.L.ego(x), self.c, self.L.lane_width
        a_ego = x[self.L.accel_index()]
        # braking is justified by a slower leader within d_lead
        justified = max(
            (min(leader_margin(e, o, w, c), e[V] - o[V])
             for o in (self.L.obstacle(x, k) for k in range(self.L.n_obstacles))),
            default=-c.flag,
        )
        return float(min(c.a_braking_threshold - a_ego, -justified))

    def slow_leading_vehicle(self, x) -> float:
        e, c, w = self.L.ego(x), self.c, self.L.lane_width
        leaders = [o for o in (self.L.obstacle(x, k) for k in range(self.L.n_obstacles)) if is_lane_leader(e, o, w, c)]
        return float(max(
            (min(c.d_lead - in_front_of(e, o), c.v_slow - o[V]) for o in leaders),
            default=-c.flag,
        ))

    def preserves_flow(self, x) -> float:
        return float(x[V] - self.c.v_flow_min)

    def in_slow_traffic(self, k):
        L, c = self.L, self.c

        def margin(x):
            o = L.obstacle(x, k)
            speeds = [
                L.obstacle(x, j)[V]
                for j in range(L.n_obstacles)
                if j != k and math.hypot(*(L.obstacle(x, j)[[S, D]] - o[[S, D]])) <= c.near_radius
            ]
            return float(c.v_queue - max(speeds)) if speeds else -c.flag

        return margin


def _o(name, k):
    return f"{name}_o{k}"


def rule_formula(rule: str, cfg: ScenarioConfig | None = None):
    """STL formula and predicate bindings for ``rule`` in ``cfg``'s scene.

    Returns ``(formula, {name: PredicateBinding})``. ``phi1`` and ``phi4``
    quantify over moving vehicles; ``phi2`` and ``phi3`` consider every
    obstacle, static ones included.
    """
    cfg = cfg or ScenarioConfig()
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {', '.join(RULES)}")
    c = cfg.rules
    layout = state_layout(cfg)
    w = layout.lane_width
    m = _Margins(layout, c)
    moving = [k for k, o in enumerate(cfg.obstacles) if o.kind != "static"]
    preds: dict[str, Callable] = {}
    G = Interval(0, INF)

    if rule == "phi1":
        t_cut = seconds_to_steps(c.t_cut, cfg.dt)
        parts = []
        for k in moving:
            names = {n: _o(n, k) for n in ("in_same_lane", "in_front_of", "cut_in", "keeps_safe_distance_prec")}
            preds[names["in_same_lane"]] = m.pair(k, lambda e, o: in_same_lane(e, o, w))
            preds[names["in_front_of"]] = m.pair(k, in_front_of)
            preds[names["cut_in"]] = m.pair(k, lambda e, o: cut_in(e, o, w, c))
            preds[names["keeps_safe_distance_prec"]] = m.pair(k, lambda e, o: safe_distance(e, o, c))
            ci = Pred(names["cut_in"])
            recent_cut = Once(Interval(0, t_cut), And(ci, Historically(Interval(1, INF), Not(ci))))
            guard = And(Pred(names["in_same_lane"]), And(Pred(names["in_front_of"]), Not(recent_cut)))
            parts.append(Implies(guard, Pred(names["keeps_safe_distance_prec"])))
        body = conjunction(parts)
    elif rule == "phi2":
        preds["unnecessary_braking"] = m.unnecessary_braking
        body = Not(Pred("unnecessary_braking"))
    elif rule == "phi3":
        preds["slow_leading_vehicle"] = m.slow_leading_vehicle
        preds["preserves_flow"] = m.preserves_flow
        body = Implies(Not(Pred("slow_leading_vehicle")), Pred("preserves_flow"))
    else:
        flag = c.flag
        preds["on_access_ramp"] = lambda x: flag if c.on_access_ramp else -flag
        parts = []
        for k in moving:
            n = {q: _o(q, k) for q in ("left_of", "drives_faster", "in_slow_traffic",
                                       "slightly_higher_speed", "on_main_carriageway")}
            preds[n["left_of"]] = m.pair(k, lambda e, o: left_of(e, o, w))
            preds[n["drives_faster"]] = m.pair(k, lambda e, o: e[V] - o[V])
            preds[n["in_slow_traffic"]] = m.in_slow_traffic(k)
            preds[n["slightly_higher_speed"]] = m.pair(k, lambda e, o: c.dv_max - (e[V] - o[V]))
            preds[n["on_main_carriageway"]] = lambda x: flag if c.on_main_carriageway else -flag
            lhs = And(Pred(n["left_of"]), Pred(n["drives_faster"]))
            rhs = Or(
                And(Pred(n["in_slow_traffic"]), Pred(n["slightly_higher_speed"])),
                And(Pred("on_access_ramp"), Pred(n["on_main_carriageway"])),
            )
            parts.append(Implies(lhs, rhs))
        body = conjunction(parts)

    bindings = {name: PredicateBinding(name, fn) for name, fn in preds.items()}
    return Always(G, body), bindings


def all_rules(cfg: ScenarioConfig | None = None) -> dict[str, tuple[Formula, dict]]:
    return {r: rule_formula(r, cfg) for r in RULES}


def margin_table(cfg: ScenarioConfig | None = None) -> dict[str, Callable[[np.ndarray], float]]:
    """Every predicate used by any rule, merged into one table."""
    out = {}
    for _, preds in all_rules(cfg).values():
        out.update(preds)
    return out
