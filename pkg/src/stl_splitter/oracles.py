"""Independent reference implementations used to cross-check the fast paths.

Nothing here shares code with :mod:`stl_splitter.monitor`: the boolean
evaluator, the naive window and the vectorised random-walk Monte Carlo are
written directly from their definitions.
"""

from __future__ import annotations

import numpy as np

from .stl import (
    INF,
    Always,
    And,
    Eventually,
    Formula,
    Historically,
    Implies,
    Interval,
    Not,
    Once,
    Or,
    Pred,
    TrueF,
    Until,
)


def naive_window(values, width, op=min):
    """``op(values[i:i+width])`` for each ``i`` by direct scanning."""
    return [op(values[i : i + width]) for i in range(len(values))]


def boolean_satisfaction(f: Formula, states, predicates, i: int = 0, t: int | None = None) -> bool:
    """Qualitative prefix semantics: predicates hold iff their margin is > 0."""
    if t is None:
        t = len(states) - 1

    def sat(node, k):
        if isinstance(node, TrueF):
            return True
        if isinstance(node, Pred):
            return predicates[node.name](states[k]) > 0
        if isinstance(node, Not):
            return not sat(node.arg, k)
        if isinstance(node, And):
            return sat(node.left, k) and sat(node.right, k)
        if isinstance(node, Or):
            return sat(node.left, k) or sat(node.right, k)
        if isinstance(node, Implies):
            return (not sat(node.left, k)) or sat(node.right, k)
        iv = node.interval
        if isinstance(node, (Always, Eventually, Until)):
            window = [j for j in range(k + iv.lo, t + 1) if j - k <= iv.hi]
        else:
            window = [j for j in range(0, k + 1) if iv.lo <= k - j <= iv.hi]
        if isinstance(node, (Always, Historically)):
            return all(sat(node.arg, j) for j in window)
        if isinstance(node, (Eventually, Once)):
            return any(sat(node.arg, j) for j in window)
        if isinstance(node, Until):
            return any(
                sat(node.right, j) and all(sat(node.left, m) for m in range(k, j + 1))
                for j in window
            )
        raise TypeError(f"not a formula: {node!r}")

    return sat(f, i)


def random_formula(rng: np.random.Generator, depth: int, names=("p", "q", "r"), max_bound: int = 6) -> Formula:
    """Random formula of at most ``depth`` levels over every operator kind."""
    if depth <= 1 or rng.random() < 0.15:
        if rng.random() < 0.05:
            return TrueF()
        return Pred(str(rng.choice(names)))

    def interval():
        lo = int(rng.integers(0, max_bound))
        if rng.random() < 0.25:
            return Interval(lo, INF)
        return Interval(lo, lo + int(rng.integers(0, max_bound)))

    kind = int(rng.integers(0, 10))
    sub = lambda: random_formula(rng, depth - 1, names, max_bound)  # noqa: E731
    if kind == 0:
        return Not(sub())
    if kind == 1:
        return And(sub(), sub())
    if kind == 2:
        return Or(sub(), sub())
    if kind == 3:
        return Implies(sub(), sub())
    if kind == 4:
        return Always(interval(), sub())
    if kind == 5:
        return Eventually(interval(), sub())
    if kind == 6:
        return Until(interval(), sub(), sub())
    if kind == 7:
        return Historically(interval(), sub())
    if kind == 8:
        return Once(interval(), sub())
    return Until(interval(), sub(), sub())


def random_trace(rng: np.random.Generator, length: int, dim: int = 3) -> np.ndarray:
    return rng.normal(size=(length, dim))


def coordinate_predicates(names=("p", "q", "r")):
    """Predicates reading one coordinate each: ``name_k(x) = x[k]``."""
    return {name: (lambda x, k=k: float(x[k])) for k, name in enumerate(names)}


def random_walk_exceedance(
    drift: float,
    sigma: float,
    horizon: int,
    barrier: float,
    n_samples: int,
    seed: int,
    chunk: int = 250_000,
    side: str = "upper",
) -> tuple[float, float]:
    """Monte-Carlo P(max_t x_t > barrier) for x_0 = 0, x_{t+1} = x_t + drift + sigma z.

    ``side="lower"`` estimates P(min_t x_t < -barrier). Returns ``(p, stderr)``.
    """
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        steps = drift + sigma * rng.standard_normal((m, horizon))
        paths = np.cumsum(steps, axis=1)
        if side == "upper":
            hits += int(np.count_nonzero(paths.max(axis=1) > barrier))
        else:
            hits += int(np.count_nonzero(paths.min(axis=1) < -barrier))
        done += m
    p = hits / n_samples
    return p, float(np.sqrt(p * (1 - p) / n_samples))



def random_walk_exceedance_quadrature(
    drift: float, sigma: float, horizon: int, barrier: float, step: float = 0.005, width: float = 12.0
) -> float:
    """Deterministic counterpart of :func:`random_walk_exceedance` (upper side).

    Propagates the density of the walk killed at ``barrier`` on a grid and
    adds up the mass that crosses at each step, which avoids the cancellation
    in ``1 - survival``.
    """
    from scipy.signal import fftconvolve
    from scipy.stats import norm

    if barrier < 0:
        return 1.0
    lo = -width * sigma * np.sqrt(horizon) + min(drift, 0.0) * horizon
    n = int(np.ceil((barrier - lo) / step))
    step = (barrier - lo) / n
    grid = np.linspace(lo, barrier, n + 1)
    w = np.full(grid.size, step)
    w[[0, -1]] = step / 2
    kern_x = step * np.arange(-int(width * sigma / step), int(width * sigma / step) + 1)
    kernel = norm.pdf(kern_x, loc=drift, scale=sigma)
    cross = norm.sf(barrier - grid, loc=drift, scale=sigma)
    half = kern_x.size // 2

    p = float(norm.sf(barrier, loc=drift, scale=sigma))
    dens = norm.pdf(grid, loc=drift, scale=sigma)
    for _ in range(horizon - 1):
        p += float(np.sum(dens * w * cross))
        dens = fftconvolve(dens * w, kernel)[half : half + grid.size]
    return p
