"""STL robustness over complete and partial trajectories.

``batch_robustness`` recomputes the prefix ("nominal") semantics from scratch
and serves as the reference. ``WorkList`` maintains the same values
incrementally as states arrive, one node buffer per subformula, using
monotonic-deque sliding windows for bounded temporal operators.
"""

from __future__ import annotations

import sys
from collections import deque
from typing import Callable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .stl import (
    INF,
    Always,
    And,
    Eventually,
    Formula,
    Historically,
    Implies,
    Not,
    Once,
    Or,
    Pred,
    TrueF,
    Until,
    parse_formula,
    subformulas,
    time_horizon,
)

__all__ = [
    "sliding_min",
    "sliding_max",
    "batch_robustness",
    "WorkList",
    "worklist_init",
    "worklist_update",
    "worklist_robustness",
    "RobustnessMonitor",
]

PredicateTable = Mapping[str, Callable[[np.ndarray], float]]

_CLEAN = sys.maxsize  # dirty-index sentinel: nothing changed


# ---------------------------------------------------------------------------
# sliding windows


def _sliding(values: Sequence[float], width: int, better) -> list[float]:
    # Lemire's streaming algorithm, run right-to-left so that out[i] covers
    # values[i : i + width] (clipped at the end). The deque holds indices of a
    # monotone subsequence; ties keep the earlier index.
    n = len(values)
    if width < 1:
        raise ValueError("window width must be >= 1")
    out = [0.0] * n
    dq: deque[int] = deque()
    for i in range(n - 1, -1, -1):
        v = values[i]
        while dq and not better(values[dq[-1]], v):
            dq.pop()
        dq.append(i)
        if dq[0] >= i + width:
            dq.popleft()
        out[i] = values[dq[0]]
    return out


def _lt(a, b):
    return a < b


def _gt(a, b):
    return a > b


def sliding_min(values: Sequence[float], width: int) -> list[float]:
    """``out[i] = min(values[i:i+width])`` for every ``i``, amortised O(1) each."""
    return _sliding(values, width, _lt)


def sliding_max(values: Sequence[float], width: int) -> list[float]:
    """``out[i] = max(values[i:i+width])`` for every ``i``, amortised O(1) each."""
    return _sliding(values, width, _gt)


def _trailing(values, width, better):
    # out[j] = agg(values[max(0, j - width + 1) : j + 1]) via the reversed buffer
    return _sliding(values[::-1], width, better)[::-1]


# ---------------------------------------------------------------------------
# batch (reference) semantics


def _states_of(traj):
    return traj.states if hasattr(traj, "states") else traj


def batch_robustness(
    f: Formula, traj, predicates: PredicateTable, i: int = 0, t: int | None = None
) -> float:
    """Prefix robustness of ``f`` on ``traj[0:t]`` evaluated at index ``i``.

    Temporal windows are intersected with ``[0, t]``; an empty inf is
    ``+inf`` and an empty sup is ``-inf``.
    """
    states = _states_of(traj)
    n = len(states)
    if t is None:
        t = n - 1
    if not (0 <= i <= t <= n - 1):
        raise IndexError(f"need 0 <= i <= t <= {n - 1}, got i={i}, t={t}")

    memo: dict[tuple[int, int], float] = {}
    pred_cache: dict[tuple[str, int], float] = {}

    def rho(name, k):
        key = (name, k)
        if key not in pred_cache:
            pred_cache[key] = float(predicates[name](states[k]))
        return pred_cache[key]

    def ev(node, k):
        key = (id(node), k)
        if key in memo:
            return memo[key]
        if isinstance(node, TrueF):
            val = INF
        elif isinstance(node, Pred):
            val = rho(node.name, k)
        elif isinstance(node, Not):
            val = -ev(node.arg, k)
        elif isinstance(node, And):
            val = min(ev(node.left, k), ev(node.right, k))
        elif isinstance(node, Or):
            val = max(ev(node.left, k), ev(node.right, k))
        elif isinstance(node, Implies):
            val = max(-ev(node.left, k), ev(node.right, k))
        elif isinstance(node, (Always, Eventually)):
            lo = k + node.interval.lo
            hi = min(t, k + node.interval.hi)
            vals = [ev(node.arg, j) for j in range(lo, int(hi) + 1)] if lo <= hi else []
            if isinstance(node, Always):
                val = min(vals, default=INF)
            else:
                val = max(vals, default=-INF)
        elif isinstance(node, (Historically, Once)):
            lo = max(0, k - node.interval.hi)
            hi = k - node.interval.lo
            vals = [ev(node.arg, j) for j in range(int(lo), hi + 1)] if lo <= hi else []
            if isinstance(node, Historically):
                val = min(vals, default=INF)
            else:
                val = max(vals, default=-INF)
        elif isinstance(node, Until):
            lo = k + node.interval.lo
            hi = min(t, k + node.interval.hi)
            best = -INF
            for i2 in range(lo, int(hi) + 1):
                inner = min(ev(node.left, i1) for i1 in range(k, i2 + 1))
                best = max(best, min(ev(node.right, i2), inner))
            val = best
        else:
            raise TypeError(f"not a formula: {node!r}")
        memo[key] = val
        return val

    return ev(f, i)


# ---------------------------------------------------------------------------
# incremental work-list


class _Node:
    """Incremental buffer for one subformula.

    ``buf[k]`` holds the prefix robustness at index ``k`` for
    ``k <= min(need, watermark)``; ``need`` is the largest index any ancestor
    can query. ``update`` returns the first index whose value changed.
    """

    __slots__ = ("need", "buf", "kids")

    def __init__(self, need, kids=()):
        self.need = need
        self.buf: list[float] = []
        self.kids = kids

    def clone(self):
        other = object.__new__(type(self))
        for cls in type(self).__mro__:
            for name in getattr(cls, "__slots__", ()):
                val = getattr(self, name)
                setattr(other, name, val[:] if isinstance(val, list) else val)
        return other

    def end(self, n):
        return n if n <= self.need else self.need


class _PredNode(_Node):
    __slots__ = ("fn",)

    def __init__(self, need, fn):
        super().__init__(need)
        self.fn = fn

    def update(self, n, x, nodes, dirty):
        if n > self.need:
            return _CLEAN
        self.buf.append(float(self.fn(x)) if self.fn is not None else INF)
        return n


class _NotNode(_Node):
    __slots__ = ()

    def update(self, n, x, nodes, dirty):
        (c,) = self.kids
        d = dirty[c]
        if d == _CLEAN:
            return _CLEAN
        child = nodes[c].buf
        del self.buf[d:]
        self.buf.extend([-v for v in child[d:]])
        return d


class _PointwiseNode(_Node):
    __slots__ = ("op",)

    def __init__(self, need, kids, op):
        super().__init__(need, kids)
        self.op = op

    def update(self, n, x, nodes, dirty):
        a, b = self.kids
        d = min(dirty[a], dirty[b])
        if d == _CLEAN:
            return _CLEAN
        la, lb = nodes[a].buf, nodes[b].buf
        op = self.op
        del self.buf[d:]
        self.buf.extend([op(la[k], lb[k]) for k in range(d, len(la))])
        return d


def _implies(a, b):
    return max(-a, b)


class _FutureWindow(_Node):
    """Always / Eventually over ``[lo, hi]``; forward windows on the child."""

    __slots__ = ("lo", "hi", "is_min", "child_h", "acc", "settled")

    def __init__(self, need, kids, interval, is_min, child_h):
        super().__init__(need, kids)
        self.lo, self.hi = interval.lo, interval.hi
        self.is_min = is_min
        self.child_h = child_h
        self.acc: list[float] = []  # per output index, aggregate over settled child entries
        self.settled = 0  # child indices < settled are final

    def update(self, n, x, nodes, dirty):
        (c,) = self.kids
        dc = dirty[c]
        if dc == _CLEAN:
            return _CLEAN
        child = nodes[c].buf
        end = self.end(n)
        empty = INF if self.is_min else -INF
        agg = min if self.is_min else max
        if self.hi != INF:
            d = max(0, dc - self.hi)
            if d > end:
                return _CLEAN
            seg = child[d + self.lo : end + self.hi + 1]
            width = self.hi - self.lo + 1
            vals = sliding_min(seg, width) if self.is_min else sliding_max(seg, width)
            count = end - d + 1
            if len(vals) < count:
                vals.extend([empty] * (count - len(vals)))
            del self.buf[d:]
            self.buf.extend(vals[:count])
            return d
        # unbounded: out[i] = agg(child[i+lo : n+1])
        if self.need == INF or self.child_h == INF:
            tail = child[self.lo :]
            acc_rev = list(_accumulate_rev(tail, agg))
            self.buf = [acc_rev[i] if i < len(acc_rev) else empty for i in range(end + 1)]
            return 0
        # finite need: fold settled child entries into per-index accumulators
        while len(self.acc) < end + 1:
            i = len(self.acc)
            start = i + self.lo
            self.acc.append(agg(child[start : self.settled], default=empty))
        new_settled = max(self.settled, n - self.child_h + 1)
        for k in range(self.settled, new_settled):
            v = child[k]
            for i in range(min(end, k - self.lo) + 1):
                self.acc[i] = agg(self.acc[i], v)
        self.settled = new_settled
        s0 = self.settled
        tail = child[s0:]
        tail_rev = list(_accumulate_rev(tail, agg))
        out = []
        for i in range(end + 1):
            start = i + self.lo
            if start > n:
                out.append(empty)
                continue
            j = max(start, s0) - s0
            t_part = tail_rev[j] if j < len(tail_rev) else empty
            out.append(agg(self.acc[i], t_part))
        self.buf = out
        return 0


def _accumulate_rev(values, agg):
    out = [0.0] * len(values)
    run = None
    for k in range(len(values) - 1, -1, -1):
        run = values[k] if run is None else agg(run, values[k])
        out[k] = run
    return out


class _PastWindow(_Node):
    """Historically / Once over ``[lo, hi]``; backward windows on the child."""

    __slots__ = ("lo", "hi", "is_min", "prefix")

    def __init__(self, need, kids, interval, is_min):
        super().__init__(need, kids)
        self.lo, self.hi = interval.lo, interval.hi
        self.is_min = is_min
        self.prefix: list[float] = []

    def update(self, n, x, nodes, dirty):
        (c,) = self.kids
        dc = dirty[c]
        end = self.end(n)
        d = _CLEAN if dc == _CLEAN else dc + self.lo
        if n <= self.need:
            d = min(d, n)
        if d > end:
            return _CLEAN
        child = nodes[c].buf
        empty = INF if self.is_min else -INF
        agg = min if self.is_min else max
        if self.hi == INF:
            if dc != _CLEAN:
                del self.prefix[dc:]
                run = self.prefix[-1] if self.prefix else None
                for v in child[dc:]:
                    run = v if run is None else agg(run, v)
                    self.prefix.append(run)
            vals = [self.prefix[i - self.lo] if i >= self.lo else empty for i in range(d, end + 1)]
        else:
            base = max(0, d - self.hi)
            seg = child[base : end - self.lo + 1]
            width = self.hi - self.lo + 1
            better = _lt if self.is_min else _gt
            tr = _trailing(seg, width, better) if seg else []
            vals = [tr[i - self.lo - base] if i >= self.lo else empty for i in range(d, end + 1)]
        del self.buf[d:]
        self.buf.extend(vals)
        return d


class _UntilNode(_Node):
    __slots__ = ("lo", "hi", "us")

    def __init__(self, need, kids, interval):
        super().__init__(need, kids)
        self.lo, self.hi = interval.lo, interval.hi
        self.us: list[float] = []

    def update(self, n, x, nodes, dirty):
        a, b = self.kids
        da, db = dirty[a], dirty[b]
        dmin = min(da, db)
        if dmin == _CLEAN:
            return _CLEAN
        phi1, phi2 = nodes[a].buf, nodes[b].buf
        end = self.end(n)
        if self.hi != INF:
            d = max(0, dmin - self.hi)
            if d > end:
                return _CLEAN
            del self.buf[d:]
            for i in range(d, end + 1):
                self.buf.append(_bounded_until(phi1, phi2, i, self.lo, self.hi, n))
            return d
        # unbounded: backward induction, us[n+1] = -inf
        m = len(phi1)  # == n + 1
        us = self.us
        us.extend([None] * (m - len(us)))
        nxt = -INF
        d_us = m
        for j in range(m - 1, -1, -1):
            p1 = phi1[j]
            val = max(min(p1, phi2[j]), min(p1, nxt))
            if j < dmin and us[j] == val:
                break
            us[j] = val
            d_us = j
            nxt = val
        lo = self.lo
        if lo == 0:
            d = d_us
            if d > end:
                return _CLEAN
            del self.buf[d:]
            self.buf.extend(us[d : end + 1])
            return d
        d = max(0, min(da, d_us) - lo)
        if d > end:
            return _CLEAN
        seg = phi1[d : end + lo]
        left = sliding_min(seg, lo) if seg else []
        del self.buf[d:]
        for i in range(d, end + 1):
            if i + lo > n:
                self.buf.append(-INF)
            else:
                self.buf.append(min(left[i - d], us[i + lo]))
        return d


def _bounded_until(phi1, phi2, i, lo, hi, n):
    best = -INF
    run = INF
    top = min(i + hi, n)
    for i2 in range(i, top + 1):
        run = min(run, phi1[i2])
        if i2 >= i + lo:
            cand = min(phi2[i2], run)
            if cand > best:
                best = cand
    return best


class WorkList:
    """Incremental prefix-robustness monitor for one trajectory.

    After ingesting ``x_0 .. x_t``, ``robustness()`` equals
    ``batch_robustness(formula, x[0:t], predicates, 0, t)``.
    """

    def __init__(self, formula: Formula, predicates: PredicateTable, final_step: int | None = None):
        self.formula = formula
        self.predicates = predicates
        self.final_step = final_step
        self.watermark = -1
        self._build()

    def _build(self):
        order = subformulas(self.formula)
        # child positions come from the walk itself: equal or shared subtrees
        # still get one node per occurrence
        kid_pos: list[tuple[int, ...]] = []
        stack: list[int] = []
        for k, node in order:
            n = len(node.children())
            kids = tuple(stack[len(stack) - n :]) if n else ()
            del stack[len(stack) - n :]
            kid_pos.append(kids)
            stack.append(k)
        need: dict[int, float] = {len(order) - 1: 0}
        for k, node in reversed(order):
            r = need[k]
            if isinstance(node, (Always, Eventually, Until)):
                r_child = r + node.interval.hi
            else:
                r_child = r
            for c in kid_pos[k]:
                need[c] = r_child
        nodes: list[_Node] = []
        for k, node in order:
            kids = kid_pos[k]
            r = need[k]
            if isinstance(node, Pred):
                try:
                    fn = self.predicates[node.name]
                except KeyError:
                    raise KeyError(f"no binding for predicate {node.name!r}") from None
                nodes.append(_PredNode(r, fn))
            elif isinstance(node, TrueF):
                nodes.append(_PredNode(r, None))
            elif isinstance(node, Not):
                nodes.append(_NotNode(r, kids))
            elif isinstance(node, And):
                nodes.append(_PointwiseNode(r, kids, min))
            elif isinstance(node, Or):
                nodes.append(_PointwiseNode(r, kids, max))
            elif isinstance(node, Implies):
                nodes.append(_PointwiseNode(r, kids, _implies))
            elif isinstance(node, (Always, Eventually)):
                nodes.append(
                    _FutureWindow(r, kids, node.interval, isinstance(node, Always), time_horizon(node.arg))
                )
            elif isinstance(node, (Historically, Once)):
                nodes.append(_PastWindow(r, kids, node.interval, isinstance(node, Historically)))
            elif isinstance(node, Until):
                nodes.append(_UntilNode(r, kids, node.interval))
            else:
                raise TypeError(f"not a formula: {node!r}")
        self._order = order
        self._nodes = nodes
        self._dirty = [_CLEAN] * len(nodes)

    @property
    def buffers(self) -> dict[int, list[float]]:
        """Node-id -> retained robustness values (index = timestep)."""
        return {k: node.buf for k, node in enumerate(self._nodes)}

    def update(self, x) -> float:
        n = self.watermark + 1
        if self.final_step is not None and n > self.final_step:
            raise ValueError(f"work-list already holds the final timestep {self.final_step}")
        nodes, dirty = self._nodes, self._dirty
        for k, node in enumerate(nodes):
            dirty[k] = node.update(n, x, nodes, dirty)
        self.watermark = n
        return nodes[-1].buf[0]

    def robustness(self) -> float:
        if self.watermark < 0:
            raise ValueError("no data ingested")
        return self._nodes[-1].buf[0]

    def copy(self) -> "WorkList":
        other = object.__new__(WorkList)
        other.formula = self.formula
        other.predicates = self.predicates
        other.final_step = self.final_step
        other.watermark = self.watermark
        other._order = self._order
        other._nodes = [node.clone() for node in self._nodes]
        other._dirty = [_CLEAN] * len(self._nodes)
        return other

    __copy__ = copy

    def __len__(self):
        return len(self._nodes)


def worklist_init(f: Formula, predicates: PredicateTable, final_step: int | None = None) -> WorkList:
    return WorkList(f, predicates, final_step)


def worklist_update(wl: WorkList, x_next) -> None:
    wl.update(x_next)


def worklist_robustness(wl: WorkList) -> float:
    return wl.robustness()


# ---------------------------------------------------------------------------
# estimator-style wrapper


class RobustnessMonitor(TransformerMixin, BaseEstimator):
    """Transform a state trace into its per-prefix robustness.

    Parameters
    ----------
    formula : str or Formula
        Specification to monitor; text is parsed against ``predicates``.
    predicates : mapping of name -> callable
        Predicate margins over one combined state row.
    """

    def __init__(self, formula=None, predicates=None):
        self.formula = formula
        self.predicates = predicates

    def fit(self, X=None, y=None):
        if self.formula is None:
            raise ValueError("formula is required")
        preds = dict(self.predicates or {})
        if isinstance(self.formula, Formula):
            self.formula_ = self.formula
        else:
            self.formula_ = parse_formula(str(self.formula), preds.keys())
        self.predicates_ = preds
        self.horizon_ = time_horizon(self.formula_)
        return self

    def transform(self, X) -> np.ndarray:
        """Return ``L_t`` for ``t = 0 .. len(X)-1``."""
        check_is_fitted(self, "formula_")
        X = check_array(X, ensure_2d=False, allow_nd=False, ensure_all_finite=True)
        if X.ndim == 1:
            X = X[:, None]
        wl = WorkList(self.formula_, self.predicates_)
        return np.array([wl.update(row) for row in X], dtype=float)

    def score_trace(self, X) -> float:
        """Robustness of the full trace (last prefix value)."""
        return float(self.transform(X)[-1])
