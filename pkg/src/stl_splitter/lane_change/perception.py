"""Parametric perception-error model: detection misses and noisy boxes.

Observation of obstacle ``o`` is ``H x_o + eps(g(w))``: a Bernoulli detection
whose probability depends on salient features (range, occlusion) and, when
detected, a Gaussian offset on (s, d, psi) that grows with range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..sim_core import NoiseStream, ProposalParams, gaussian_offsets
from .config import PemParams
from .dynamics import VehicleState


@dataclass(frozen=True)
class Features:
    range: float
    bearing: float
    rel_heading: float
    length: float
    width: float
    occluded: bool


@dataclass(frozen=True)
class Observation:
    detected: bool
    s: float = math.nan
    d: float = math.nan
    psi: float = math.nan


def _corner_bearings(ego: VehicleState, o: VehicleState):
    hl, hw = o.length / 2, o.width / 2
    c, s = math.cos(o.psi), math.sin(o.psi)
    out = []
    for ds, dd in ((hl, hw), (hl, -hw), (-hl, hw), (-hl, -hw)):
        px = o.s + ds * c - dd * s - ego.s
        py = o.d + ds * s + dd * c - ego.d
        out.append(math.atan2(py, px))
    return min(out), max(out)


def salient_features(ego: VehicleState, obstacles: list[VehicleState]) -> list[Features]:
    """Range, bearing, relative heading, extents and an occlusion flag.

    An obstacle is occluded when its bearing interval (seen from the ego
    centre) overlaps that of a strictly nearer obstacle.
    """
    ranges = [math.hypot(o.s - ego.s, o.d - ego.d) for o in obstacles]
    spans = [_corner_bearings(ego, o) for o in obstacles]
    feats = []
    for k, o in enumerate(obstacles):
        lo, hi = spans[k]
        occluded = any(
            ranges[j] < ranges[k] and spans[j][0] <= hi and lo <= spans[j][1]
            for j in range(len(obstacles))
            if j != k
        )
        feats.append(
            Features(
                range=ranges[k],
                bearing=math.atan2(o.d - ego.d, o.s - ego.s),
                rel_heading=o.psi - ego.psi,
                length=o.length,
                width=o.width,
                occluded=occluded,
            )
        )
    return feats


def detection_logit(f: Features, params: PemParams) -> float:
    c0, c_range, c_occ = params.detect_coeffs
    return c0 + c_range * f.range + c_occ * float(f.occluded)


def noise_sigma(f: Features, params: PemParams) -> np.ndarray:
    return np.asarray(params.noise_base) + np.asarray(params.noise_range_slope) * f.range


@dataclass
class PemDraw:
    """Per-obstacle record of one observation draw (for proposal fitting)."""

    logit: float
    detected: bool
    z: np.ndarray  # offsets in units of the target sigma


def pem_observe(
    ego: VehicleState,
    obstacles: list[VehicleState],
    params: PemParams,
    stream: NoiseStream,
    proposal: ProposalParams | None = None,
    feats: list[Features] | None = None,
):
    """Observe every obstacle once.

    Consumes exactly ``len(obstacles)`` uniforms then ``3 * len(obstacles)``
    normals from ``stream``. Returns ``(observations, log_ratio, draws)``
    where ``log_ratio`` is the log-likelihood ratio target/proposal of the
    draws that were used.
    """
    if feats is None:
        feats = salient_features(ego, obstacles)
    n = len(obstacles)
    u = stream.uniform(n)
    log_ratio = 0.0
    observations = []
    draws = []
    detected_flags = []
    logits = []
    for k in range(n):
        logit = detection_logit(feats[k], params)
        p = float(expit(logit))
        if proposal is None:
            q = p
        elif proposal.miss_rate is not None:
            q = 1.0 - proposal.miss_rate
        else:
            q = float(expit(logit + proposal.logit_shift))
        hit = bool(u[k] < q)
        if proposal is not None:
            log_ratio += math.log(p / q) if hit else math.log((1.0 - p) / (1.0 - q))
        detected_flags.append(hit)
        logits.append(logit)
    for k, o in enumerate(obstacles):
        sigma = noise_sigma(feats[k], params)
        if np.all(sigma > 0):
            eps, lr, z = gaussian_offsets(stream, sigma, proposal)
        else:
            stream.normal(3)
            eps, lr, z = np.zeros(3), 0.0, np.zeros(3)
        if detected_flags[k]:
            log_ratio += lr
            observations.append(Observation(True, o.s + eps[0], o.d + eps[1], o.psi + eps[2]))
        else:
            observations.append(Observation(False))
        draws.append(PemDraw(logits[k], detected_flags[k], z if detected_flags[k] else None))
    return observations, log_ratio, draws
