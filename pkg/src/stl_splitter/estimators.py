"""Failure-probability estimators over a monitored stochastic simulator.

Four estimators share one calling convention: a scenario (simulator factory
plus predicate table), a formula, a budget and a master seed. Each returns an
:class:`Estimate`. A trajectory fails when its final robustness is below
``gamma_final`` (0 unless stated).

Noise streams are labelled so that runs do not depend on scheduling:

* ``("init", i)``: the ``i``-th initial trajectory (MC, AMS, IS share these)
* ``("ams", m, slot)``: the re-simulation of ``slot`` at splitting stage ``m``
* ``("selection",)``: AMS choice of which survivor to clone
* ``("ce", m, i)``: trajectory ``i`` of cross-entropy stage ``m``
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from numbers import Integral, Real

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils import check_scalar

from .monitor import WorkList
from .sim_core import (
    NoiseStream,
    ProposalParams,
    SimulationError,
    resume_trajectory,
    run_trajectory,
    splice_point,
    stream_id,
)
from .stl import Formula, parse_formula

__all__ = [
    "Estimate",
    "mc_estimate",
    "ams_estimate",
    "is_fixed_estimate",
    "ce_estimate",
    "ams_probability",
    "resolve_formula",
    "MonteCarloEstimator",
    "AMSEstimator",
    "ImportanceSamplingEstimator",
    "CrossEntropyEstimator",
]

METHODS = ("mc", "ams", "is", "ce")
LOG_WEIGHT_FLOOR = -745.0  # exp() of anything lower underflows to zero


@dataclass
class Estimate:
    """Result of one estimator run.

    ``levels`` holds the AMS thresholds actually used for discarding (or the
    CE elite thresholds); it is empty for MC and IS. ``diagnostics`` carries
    method-specific extras (standard errors, ESS, stop reasons).
    """

    p_hat: float
    method: str
    levels: list = field(default_factory=list)
    discards_per_stage: list = field(default_factory=list)
    total_simulation_steps: int = 0
    trajectories_run: int = 0
    extinction: bool = False
    master_seed: int = 0
    wall_time_s: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 <= self.p_hat <= 1.0:
            raise ValueError(f"p_hat={self.p_hat} outside [0, 1]")

    def to_dict(self, include_wall_time: bool = True) -> dict:
        d = asdict(self)
        d["levels"] = [float(g) for g in self.levels]
        d["discards_per_stage"] = [int(k) for k in self.discards_per_stage]
        if not include_wall_time:
            d.pop("wall_time_s")
        return d

    def to_json(self, include_wall_time: bool = True, **kw) -> str:
        kw.setdefault("indent", 2)
        return json.dumps(_plain(self.to_dict(include_wall_time)), **kw)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    def write_levels_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "gamma", "discards"])
            for m, g in enumerate(self.levels):
                k = self.discards_per_stage[m] if m < len(self.discards_per_stage) else ""
                w.writerow([m, repr(float(g)), k])

    @property
    def std_error(self) -> float | None:
        return self.diagnostics.get("std_error")


def _plain(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


# ---------------------------------------------------------------------------
# shared plumbing


def resolve_formula(scenario, formula=None) -> Formula:
    """Formula object from a rule name, formula text, or ``None`` (default rule)."""
    rules = getattr(scenario, "rules", {}) or {}
    if formula is None:
        formula = getattr(scenario, "default_rule", None)
        if formula is None:
            raise ValueError("scenario has no default rule; pass a formula")
    if isinstance(formula, Formula):
        return formula
    if formula in rules:
        formula = rules[formula]
        if isinstance(formula, Formula):
            return formula
    return parse_formula(formula, scenario.predicates)


def _map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _check_common(N, seed, workers, gamma_final):
    check_scalar(N, "N", Integral, min_val=1)
    check_scalar(seed, "seed", Integral, min_val=0)
    check_scalar(workers, "workers", Integral, min_val=1)
    check_scalar(gamma_final, "gamma_final", Real)


class _Runner:
    """Runs monitored trajectories of one scenario/formula pair."""

    def __init__(self, scenario, formula, seed, proposal=None, record_draws=False, snapshot_stride=None):
        self.scenario = scenario
        self.formula = resolve_formula(scenario, formula)
        self.seed = int(seed)
        self.T = int(scenario.horizon)
        self.proposal = proposal
        self.record_draws = record_draws
        self.stride = snapshot_stride

    def _sim(self):
        return self.scenario.make_simulator(proposal=self.proposal, record_draws=self.record_draws)

    def _wl(self):
        return WorkList(self.formula, self.scenario.predicates, self.T)

    def run(self, label):
        stream = NoiseStream(self.seed, stream_id(*label))
        stride = self.stride if self.stride is not None else self.T + 1
        traj, levels = run_trajectory(self._sim(), self.T, stream, self._wl(), stride)
        return traj, levels

    def resume(self, task):
        traj, levels, t_splice, label = task
        sim = self._sim()
        snap, wl = splice_point(traj, levels, t_splice, sim, self.T)
        stream = NoiseStream(self.seed, stream_id(*label))
        return resume_trajectory(traj, snap, t_splice, self.T, stream, wl, sim, levels,
                                 self.stride or 1)


# ---------------------------------------------------------------------------
# raw Monte-Carlo


def mc_estimate(scenario, formula=None, N: int = 250, seed: int = 0, workers: int = 1,
                gamma_final: float = 0.0) -> Estimate:
    """Plain Monte-Carlo: fraction of ``N`` runs whose final robustness is below ``gamma_final``."""
    _check_common(N, seed, workers, gamma_final)
    t0 = time.perf_counter()
    runner = _Runner(scenario, formula, seed)
    out = _map(lambda i: runner.run(("init", i))[1][-1], list(range(N)), workers)
    finals = np.asarray(out)
    fails = int(np.sum(finals < gamma_final))
    p = fails / N
    return Estimate(
        p_hat=p,
        method="mc",
        total_simulation_steps=N * runner.T,
        trajectories_run=N,
        master_seed=seed,
        wall_time_s=time.perf_counter() - t0,
        diagnostics={"std_error": math.sqrt(p * (1 - p) / N), "n_failures": fails},
    )


# ---------------------------------------------------------------------------
# adaptive multilevel splitting


def ams_probability(N: int, discards, n_below: int) -> float:
    """``prod_m (N - K_m) / N * n_below / N``."""
    p = 1.0
    for k in discards:
        p *= (N - k) / N
    return p * n_below / N


def ams_estimate(scenario, formula=None, gamma_final: float = 0.0, N: int = 250, K: int = 25,
                 seed: int = 0, workers: int = 1, max_stages: int = 10_000,
                 snapshot_stride: int = 4) -> Estimate:
    """Adaptive multilevel splitting on the final robustness of ``formula``.

    Each stage sets ``gamma`` to the ``(K+1)``-th smallest final level, stops
    once ``gamma <= gamma_final``, otherwise discards every run at or above
    ``gamma`` and refills each discarded slot by cloning a uniformly chosen
    survivor at its first step below ``gamma`` and re-simulating the rest with
    a fresh stream. Extinction (no survivors, or a level that fails to
    decrease) stops the run with ``extinction=True``; ``p_hat`` is then the
    partial product and is not a valid estimate.
    """
    _check_common(N, seed, workers, gamma_final)
    check_scalar(K, "K", Integral, min_val=1)
    if K >= N:
        raise ValueError(f"K must satisfy 1 <= K < N (got K={K}, N={N})")
    check_scalar(snapshot_stride, "snapshot_stride", Integral, min_val=1)
    t0 = time.perf_counter()
    runner = _Runner(scenario, formula, seed, snapshot_stride=snapshot_stride)
    T = runner.T
    pop = _map(lambda i: runner.run(("init", i)), list(range(N)), workers)
    steps = N * T
    runs = N
    selection = NoiseStream(seed, stream_id("selection"))
    levels, discards = [], []
    extinction, reason = False, None
    prev = math.inf
    finals = np.array([lv[-1] for _, lv in pop])
    # the initial runs share their streams with mc_estimate at the same seed
    initial_fraction = float(np.mean(finals < gamma_final))
    for m in range(max_stages + 1):
        gamma = float(np.sort(finals)[K])
        if gamma <= gamma_final:
            break
        if m == max_stages:
            extinction, reason = True, "stage limit reached"
            break
        if not gamma < prev:
            extinction, reason = True, "level did not decrease"
            break
        dead = np.flatnonzero(finals >= gamma)
        alive = np.flatnonzero(finals < gamma)
        if alive.size == 0:
            extinction, reason = True, "no survivors"
            break
        levels.append(gamma)
        discards.append(int(dead.size))
        picks = np.floor(selection.uniform(dead.size) * alive.size).astype(int)
        tasks = []
        for slot, pick in zip(dead, picks):
            traj, lv = pop[alive[pick]]
            t_splice = int(np.flatnonzero(lv < gamma)[0])
            tasks.append((traj, lv, t_splice, ("ams", m, int(slot))))
            steps += T - t_splice
        for slot, res in zip(dead, _map(runner.resume, tasks, workers)):
            pop[slot] = res
            finals[slot] = res[1][-1]
        runs += dead.size
        prev = gamma
    n_below = int(np.sum(finals < gamma_final))
    product = ams_probability(N, discards, N)
    diag = {
        "n_stages": len(levels),
        "final_fraction": n_below / N,
        "initial_fraction": initial_fraction,
        "level_product": product,
        "stop_reason": reason or "reached gamma_final",
    }
    return Estimate(
        p_hat=ams_probability(N, discards, n_below),
        method="ams",
        levels=levels,
        discards_per_stage=discards,
        total_simulation_steps=int(steps),
        trajectories_run=int(runs),
        extinction=extinction,
        master_seed=seed,
        wall_time_s=time.perf_counter() - t0,
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# importance sampling


def _is_summary(log_w, failed):
    """IS estimate, standard error and effective sample size from log weights.

    The floor applies to the estimate only; ESS is scale-free, so it is taken
    from the raw log weights and still exposes a collapse below the floor.
    """
    log_w = np.asarray(log_w, dtype=float)
    N = log_w.size
    w = np.exp(np.maximum(log_w, LOG_WEIGHT_FLOOR))
    contrib = np.where(failed, w, 0.0)
    p = float(np.mean(contrib))
    se = float(np.std(contrib, ddof=1) / math.sqrt(N)) if N > 1 else math.inf
    ess = float(math.exp(2 * logsumexp(log_w) - logsumexp(2 * log_w)))
    if failed.any():
        lf = log_w[failed]
        ess_fail = float(math.exp(2 * logsumexp(lf) - logsumexp(2 * lf)))
    else:
        ess_fail = 0.0
    return min(max(p, 0.0), 1.0), se, ess, ess_fail


def is_fixed_estimate(scenario, formula=None, proposal: ProposalParams | None = None, N: int = 250,
                      seed: int = 0, workers: int = 1, gamma_final: float = 0.0) -> Estimate:
    """Importance sampling under a fixed noise proposal.

    Draws use the same streams as :func:`mc_estimate`, so the identity
    proposal reproduces it exactly.
    """
    _check_common(N, seed, workers, gamma_final)
    proposal = proposal or ProposalParams()
    t0 = time.perf_counter()
    runner = _Runner(scenario, formula, seed, proposal=proposal)

    def one(i):
        traj, lv = runner.run(("init", i))
        return lv[-1], traj.log_weight

    out = _map(one, list(range(N)), workers)
    finals = np.array([o[0] for o in out])
    log_w = np.array([o[1] for o in out])
    failed = finals < gamma_final
    p, se, ess, ess_fail = _is_summary(log_w, failed)
    return Estimate(
        p_hat=p,
        method="is",
        total_simulation_steps=N * runner.T,
        trajectories_run=N,
        master_seed=seed,
        wall_time_s=time.perf_counter() - t0,
        diagnostics={
            "std_error": se,
            "ess": ess,
            "ess_failures": ess_fail,
            "degenerate_ess": ess < 2,
            "n_failures": int(failed.sum()),
            "n_floored": int(np.sum(log_w < LOG_WEIGHT_FLOOR)),
            "proposal": proposal.to_dict(),
        },
    )


# ---------------------------------------------------------------------------
# cross-entropy adaptive importance sampling


def _flatten_draws(draws):
    """Split one trajectory's recorded draws into detection and offset samples.

    Returns ``(logits, detected, z)`` where ``z`` has one row per Gaussian
    draw that was actually used.
    """
    logits, detected, zs = [], [], []
    for step in draws or ():
        items = step if isinstance(step, (list, tuple)) else [step]
        for d in items:
            if isinstance(d, (float, int, np.floating)):
                zs.append([float(d)])
                continue
            logits.append(d.logit)
            detected.append(d.detected)
            if d.z is not None:
                zs.append(np.asarray(d.z, dtype=float))
    z = np.asarray(zs, dtype=float) if zs else np.empty((0, 0))
    return np.asarray(logits, dtype=float), np.asarray(detected, dtype=bool), z


class DegenerateFit(RuntimeError):
    pass


def _fit_proposal(samples, weights, previous: ProposalParams, shift_bound: float = 20.0):
    """Weighted maximum likelihood of the elite draws within the tilting family.

    ``samples`` is a list of ``(logits, detected, z)`` per elite trajectory;
    ``weights`` are their (self-normalised) likelihood ratios.
    """
    w = np.asarray(weights, dtype=float)
    logits = [s[0] for s in samples]
    if any(len(x) for x in logits):
        L = np.concatenate([np.asarray(s[0]) for s in samples])
        Y = np.concatenate([np.asarray(s[1], dtype=float) for s in samples])
        W = np.concatenate([np.full(len(s[0]), wi) for s, wi in zip(samples, w)])

        def score(delta):
            return float(np.sum(W * (Y - expit(L + delta))))

        lo, hi = score(-shift_bound), score(shift_bound)
        if lo <= 0:
            shift = -shift_bound
        elif hi >= 0:
            shift = shift_bound
        else:
            shift = brentq(score, -shift_bound, shift_bound, xtol=1e-10)
    else:
        shift = previous.logit_shift
    rows = [s[2] for s in samples]
    if any(r.size for r in rows):
        dim = max(r.shape[1] for r in rows if r.size)
        Z = np.concatenate([r for r in rows if r.size])
        WZ = np.concatenate([np.full(len(r), wi) for r, wi in zip(rows, w) if r.size])
        tot = WZ.sum()
        mean = (WZ[:, None] * Z).sum(axis=0) / tot
        var = (WZ[:, None] * (Z - mean) ** 2).sum(axis=0) / tot
        if np.any(var <= 1e-12):
            raise DegenerateFit("elite offsets have zero variance")
        pad = 3 - dim
        noise_mean = tuple(mean.tolist()) + tuple(previous.noise_mean[dim:])[:pad]
        noise_scale = tuple(np.sqrt(var).tolist()) + tuple(previous.noise_scale[dim:])[:pad]
    else:
        noise_mean, noise_scale = previous.noise_mean, previous.noise_scale
    return ProposalParams(
        miss_rate=None,
        logit_shift=float(shift),
        noise_mean=tuple(float(x) for x in noise_mean),
        noise_scale=tuple(float(x) for x in noise_scale),
    )


def ce_estimate(scenario, formula=None, N: int = 250, M: int = 10, elite_frac: float = 0.1,
                seed: int = 0, workers: int = 1, gamma_final: float = 0.0,
                initial: ProposalParams | None = None) -> Estimate:
    """Cross-entropy importance sampling over the noise tilting family.

    Each of ``M`` stages draws ``N`` runs under the current proposal, keeps
    the ``elite_frac`` lowest final levels (or every failure, once at least
    that many fail), and refits the proposal to the elite draws with weights
    target/proposal normalised over the elites. The last stage's draws give
    the IS estimate. ``levels`` records each stage's elite threshold.
    """
    _check_common(N, seed, workers, gamma_final)
    check_scalar(M, "M", Integral, min_val=1)
    check_scalar(elite_frac, "elite_frac", Real, min_val=0.0, max_val=0.5, include_boundaries="right")
    t0 = time.perf_counter()
    proposal = initial or ProposalParams()
    n_elite = max(1, int(math.ceil(elite_frac * N)))
    levels, proposals, stage_failures = [], [proposal.to_dict()], []
    steps = runs = 0
    degenerate, reason = False, None
    last = None
    for m in range(M):
        runner = _Runner(scenario, formula, seed, proposal=proposal, record_draws=True)

        def one(i, runner=runner, m=m):
            traj, lv = runner.run(("ce", m, i))
            return lv[-1], traj.log_weight, _flatten_draws(traj.draws)

        out = _map(one, list(range(N)), workers)
        steps += N * runner.T
        runs += N
        finals = np.array([o[0] for o in out])
        log_w = np.array([o[1] for o in out])
        last = (finals, log_w)
        order = np.argsort(finals, kind="stable")
        level = float(finals[order[n_elite - 1]])
        levels.append(level)
        stage_failures.append(int(np.sum(finals < gamma_final)))
        if m == M - 1:
            break
        cut = max(level, gamma_final)
        elite = np.flatnonzero(finals <= cut) if level < gamma_final else order[:n_elite]
        ew = np.exp(log_w[elite] - logsumexp(log_w[elite]))
        try:
            proposal = _fit_proposal([out[i][2] for i in elite], ew, proposal)
        except DegenerateFit as exc:
            degenerate, reason = True, str(exc)
            break
        proposals.append(proposal.to_dict())
    finals, log_w = last
    failed = finals < gamma_final
    p, se, ess, ess_fail = _is_summary(log_w, failed)
    return Estimate(
        p_hat=p,
        method="ce",
        levels=levels,
        total_simulation_steps=int(steps),
        trajectories_run=int(runs),
        extinction=degenerate,
        master_seed=seed,
        wall_time_s=time.perf_counter() - t0,
        diagnostics={
            "std_error": se,
            "ess": ess,
            "ess_failures": ess_fail,
            "stage_failures": stage_failures,
            "proposals": proposals,
            "degenerate_fit": degenerate,
            "stop_reason": reason or "completed",
        },
    )


# ---------------------------------------------------------------------------
# estimator objects


class _EstimatorBase(BaseEstimator):
    """Shared ``fit`` bookkeeping; subclasses implement ``_estimate``."""

    def fit(self, scenario, formula=None):
        """Run the estimator on ``scenario`` for ``formula`` (rule name, text or Formula)."""
        self.estimate_ = self._estimate(scenario, formula)
        self.p_hat_ = self.estimate_.p_hat
        self.levels_ = np.asarray(self.estimate_.levels, dtype=float)
        self.extinction_ = self.estimate_.extinction
        return self

    def predict_proba(self, scenario=None, formula=None):
        """Failure probability (fits first when ``scenario`` is given)."""
        if scenario is not None:
            self.fit(scenario, formula)
        if not hasattr(self, "estimate_"):
            raise AttributeError(f"{type(self).__name__} is not fitted yet")
        return self.p_hat_


class MonteCarloEstimator(_EstimatorBase):
    def __init__(self, n_samples=250, gamma_final=0.0, seed=0, n_workers=1):
        self.n_samples = n_samples
        self.gamma_final = gamma_final
        self.seed = seed
        self.n_workers = n_workers

    def _estimate(self, scenario, formula):
        return mc_estimate(scenario, formula, self.n_samples, self.seed, self.n_workers, self.gamma_final)


class AMSEstimator(_EstimatorBase):
    def __init__(self, n_samples=250, n_discard=25, gamma_final=0.0, seed=0, n_workers=1,
                 max_stages=10_000):
        self.n_samples = n_samples
        self.n_discard = n_discard
        self.gamma_final = gamma_final
        self.seed = seed
        self.n_workers = n_workers
        self.max_stages = max_stages

    def _estimate(self, scenario, formula):
        return ams_estimate(scenario, formula, self.gamma_final, self.n_samples, self.n_discard,
                            self.seed, self.n_workers, self.max_stages)


class ImportanceSamplingEstimator(_EstimatorBase):
    def __init__(self, proposal=None, n_samples=250, gamma_final=0.0, seed=0, n_workers=1):
        self.proposal = proposal
        self.n_samples = n_samples
        self.gamma_final = gamma_final
        self.seed = seed
        self.n_workers = n_workers

    def _estimate(self, scenario, formula):
        return is_fixed_estimate(scenario, formula, self.proposal, self.n_samples, self.seed,
                                 self.n_workers, self.gamma_final)


class CrossEntropyEstimator(_EstimatorBase):
    def __init__(self, n_samples=250, n_stages=10, elite_frac=0.1, gamma_final=0.0, seed=0,
                 n_workers=1, initial=None):
        self.n_samples = n_samples
        self.n_stages = n_stages
        self.elite_frac = elite_frac
        self.gamma_final = gamma_final
        self.seed = seed
        self.n_workers = n_workers
        self.initial = initial

    def _estimate(self, scenario, formula):
        return ce_estimate(scenario, formula, self.n_samples, self.n_stages, self.elite_frac,
                           self.seed, self.n_workers, self.gamma_final, self.initial)
