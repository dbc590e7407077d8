"""Self-check suites behind ``stl-splitter validate``.

``differential`` compares the online monitor and the sliding-window helpers
against brute-force references on random inputs. ``oracle`` runs the
estimators on random walks whose failure probability is known. Both return a
list of check records ``{"name", "ok", ...stats}``.
"""

from __future__ import annotations

import math

import numpy as np

from .estimators import ams_estimate, ce_estimate, is_fixed_estimate, mc_estimate
from .monitor import WorkList, batch_robustness, sliding_max, sliding_min
from .oracles import (
    boolean_satisfaction,
    coordinate_predicates,
    naive_window,
    random_formula,
    random_trace,
    random_walk_exceedance_quadrature,
)
from .sim_core import ProposalParams, ToyWalkScenario

SUITES = ("differential", "oracle")


def _check(name, ok, **stats):
    return {"name": name, "ok": bool(ok), **stats}


def differential_suite(quick: bool = False, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    preds = coordinate_predicates()
    n_pairs, n_sign, n_buf = (200, 100, 1000) if quick else (1000, 500, 10_000)

    worst = 0.0
    for _ in range(n_pairs):
        f = random_formula(rng, int(rng.integers(1, 5)))
        X = random_trace(rng, int(rng.integers(1, 51)))
        wl = WorkList(f, preds)
        for t in range(len(X)):
            a, b = wl.update(X[t]), batch_robustness(f, X, preds, 0, t)
            if a != b:
                worst = max(worst, abs(a - b))
    out = [_check("worklist_vs_batch", worst <= 1e-9, pairs=n_pairs, max_abs_diff=worst)]

    bad = 0
    for _ in range(n_sign):
        f = random_formula(rng, int(rng.integers(1, 5)))
        X = random_trace(rng, int(rng.integers(1, 21)))
        rho = batch_robustness(f, X, preds)
        bad += rho != 0 and (rho > 0) != boolean_satisfaction(f, X, preds)
    out.append(_check("sign_vs_boolean", bad == 0, pairs=n_sign, mismatches=int(bad)))

    bad = 0
    for _ in range(n_buf):
        vals = rng.normal(size=int(rng.integers(1, 60))).tolist()
        w = int(rng.integers(1, 15))
        bad += sliding_min(vals, w) != naive_window(vals, w, min)
        bad += sliding_max(vals, w) != naive_window(vals, w, max)
    out.append(_check("sliding_window_vs_scan", bad == 0, buffers=n_buf, mismatches=int(bad)))
    return out


def oracle_suite(quick: bool = False, seed: int = 0) -> list[dict]:
    out = []

    easy = ToyWalkScenario(barrier=10.0)
    p_easy = random_walk_exceedance_quadrature(0.0, 1.0, easy.horizon, easy.barrier)
    n = 4000 if quick else 20_000
    mc = mc_estimate(easy, N=n, seed=seed)
    se = math.sqrt(p_easy * (1 - p_easy) / n)
    out.append(_check("mc_walk", abs(mc.p_hat - p_easy) <= 3 * se, p_hat=mc.p_hat, p_true=p_easy, n=n))

    rare = ToyWalkScenario(barrier=17.0)
    p_rare = random_walk_exceedance_quadrature(0.0, 1.0, rare.horizon, rare.barrier)
    reps, N = (20, 500) if quick else (50, 1000)
    # relative error of the mean scales like 1/sqrt(reps * N)
    tol = 0.25 * math.sqrt(50 * 1000 / (reps * N))
    p = np.array([ams_estimate(rare, N=N, K=N // 10, seed=seed + r).p_hat for r in range(reps)])
    off = abs(p.mean() - p_rare) / p_rare
    out.append(_check("ams_walk", off <= tol, mean=float(p.mean()), p_true=p_rare, rel_error=off,
                      tolerance=tol, reps=reps, n=N))

    a = is_fixed_estimate(easy, proposal=ProposalParams(), N=500, seed=seed)
    b = mc_estimate(easy, N=500, seed=seed)
    out.append(_check("is_identity", a.p_hat == b.p_hat, is_p_hat=a.p_hat, mc_p_hat=b.p_hat))

    half = ToyWalkScenario(barrier=0.0, horizon=1)
    n = 1000 if quick else 2000
    ce = ce_estimate(half, N=n, M=3, seed=seed)
    out.append(_check("ce_half", abs(ce.p_hat - 0.5) <= 3 * math.sqrt(0.25 / n), p_hat=ce.p_hat, n=n))
    return out


def run_suite(name: str, quick: bool = False, seed: int = 0) -> list[dict]:
    if name == "differential":
        return differential_suite(quick, seed)
    if name == "oracle":
        return oracle_suite(quick, seed)
    raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
