"""Chaos diagnostics per orbit: maximal Lyapunov exponent and SALI.

The maximal Lyapunov exponent is estimated with the classic deviation
vector renormalization procedure: one random unit tangent vector is
propagated through the exact tangent map alongside the orbit, rescaled
to unit length every iteration, and the mean log growth is returned.

Orbits are classified with the smaller alignment index (SALI): two
initially orthonormal random deviation vectors are propagated, each
normalized every step, and

    SALI = min(||w1 + w2||, ||w1 - w2||).

For chaotic orbits both vectors align with the dominant expanding
direction and SALI collapses exponentially; for regular orbits it
settles at an order-one value.  Classification thresholds:

    chaotic  : SALI < 1e-8        (screening terminates early)
    regular  : SALI > 1e-4
    sticky   : 1e-8 <= SALI <= 1e-4

All deviation vectors are drawn from their own seed stream so that
diagnostics are reproducible and independent of how the orbit itself
was sampled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dynamics import LatticeState, SystemParams, step_arrays, tangent_arrays
from .seeds import derive_seed, make_rng

SALI_CHAOTIC_THRESHOLD = 1e-8
SALI_REGULAR_THRESHOLD = 1e-4

ORBIT_CLASSES = ("regular", "sticky", "chaotic")

__all__ = [
    "SALI_CHAOTIC_THRESHOLD",
    "SALI_REGULAR_THRESHOLD",
    "ORBIT_CLASSES",
    "OrbitDiagnostics",
    "RegimeSummary",
    "classify_sali",
    "lyapunov_max",
    "lyapunov_max_batch",
    "sali_classify",
    "sali_classify_batch",
    "diagnose_orbit",
    "regime_stats",
    "write_diagnostics_csv",
    "read_diagnostics_csv",
]


def classify_sali(sali_final: float) -> str:
    """Three-tier orbit class from a final SALI value.

    Boundary values belong to the sticky band: chaotic requires a value
    strictly below 1e-8 and regular strictly above 1e-4.
    """
    if sali_final < SALI_CHAOTIC_THRESHOLD:
        return "chaotic"
    if sali_final > SALI_REGULAR_THRESHOLD:
        return "regular"
    return "sticky"


@dataclass(frozen=True)
class OrbitDiagnostics:
    """Per-orbit chaos indicators.

    ``lambda_max`` is the finite-time maximal Lyapunov exponent per map
    iteration; ``sali_final`` is the SALI value at screening
    termination, ``sali_steps`` the number of tangent iterations
    executed, and ``orbit_class`` the threshold classification.
    """

    lambda_max: float
    sali_final: float
    sali_steps: int
    orbit_class: str

    def __post_init__(self):
        if not math.isfinite(self.lambda_max):
            raise ValueError("lambda_max must be finite")
        if self.orbit_class != classify_sali(self.sali_final):
            raise ValueError(
                f"orbit_class {self.orbit_class!r} inconsistent with "
                f"sali_final={self.sali_final!r}"
            )


@dataclass(frozen=True)
class RegimeSummary:
    """Aggregate indicators over the orbits of one system instance."""

    mean_lambda_max: float
    lambda_max_range: tuple[float, float]
    chaos_fraction: float
    lyapunov_time: float

    def __post_init__(self):
        if not 0.0 <= self.chaos_fraction <= 1.0:
            raise ValueError("chaos_fraction must lie in [0, 1]")


def _unit_deviation(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _orthonormal_pair(rng: np.random.Generator, dim: int):
    a = _unit_deviation(rng, dim)
    b = rng.standard_normal(dim)
    b -= (b @ a) * a
    b /= np.linalg.norm(b)
    return a, b


def _advance(q, p, params, steps):
    for _ in range(steps):
        q, p = step_arrays(q, p, params.K, params.epsilon)
    return q, p


def lyapunov_max_batch(q0: np.ndarray, p0: np.ndarray, params: SystemParams,
                       transient: int, horizon: int,
                       dev_seeds: Sequence[int]) -> np.ndarray:
    """Benettin estimates for a batch of orbits; returns ``(B,)`` exponents."""
    if horizon < 100:
        raise ValueError("horizon must be >= 100 for a meaningful estimate")
    q = np.array(q0, dtype=np.float64)
    p = np.array(p0, dtype=np.float64)
    B, N = q.shape
    if len(dev_seeds) != B:
        raise ValueError("need one deviation seed per orbit")
    q, p = _advance(q, p, params, transient)
    dq = np.empty((B, N))
    dp = np.empty((B, N))
    for i, s in enumerate(dev_seeds):
        v = _unit_deviation(make_rng(s), 2 * N)
        dq[i] = v[:N]
        dp[i] = v[N:]
    K, eps = params.K, params.epsilon
    acc = np.zeros(B)
    for _ in range(horizon):
        dq, dp = tangent_arrays(q, dq, dp, K, eps)
        norm = np.sqrt(np.sum(dq * dq, axis=-1) + np.sum(dp * dp, axis=-1))
        acc += np.log(norm)
        dq /= norm[..., None]
        dp /= norm[..., None]
        q, p = step_arrays(q, p, K, eps)
    return acc / horizon


def lyapunov_max(ic: LatticeState, params: SystemParams,
                 transient: int = 1000, horizon: int = 10000,
                 *, dev_seed: int = 0) -> float:
    """Finite-time maximal Lyapunov exponent of the orbit through ``ic``.

    The transient is discarded, then a single random unit deviation
    vector (seeded by ``dev_seed``) is carried through the tangent map
    for ``horizon`` iterations with per-step renormalization; the
    exponent is the accumulated log growth divided by ``horizon``,
    in units of inverse map iterations.
    """
    if ic.N != params.N:
        raise ValueError(f"ic has N={ic.N} but params expect N={params.N}")
    out = lyapunov_max_batch(ic.q[None, :], ic.p[None, :], params,
                             transient, horizon, [dev_seed])
    return float(out[0])


def sali_classify_batch(q0: np.ndarray, p0: np.ndarray, params: SystemParams,
                        screen_horizon: int, transient: int,
                        dev_seeds: Sequence[int]):
    """SALI screening for a batch of orbits.

    Returns ``(sali_final, sali_steps, lambda_estimate)`` arrays.  The
    lambda estimate is the Benettin accumulation of the first deviation
    vector over the executed steps; it is a coarse screening-horizon
    figure, not the full-horizon exponent.

    Orbits whose SALI drops below the chaotic threshold stop
    contributing at that step: their recorded value is the one that
    triggered termination.
    """
    if screen_horizon < 1:
        raise ValueError("screen_horizon must be >= 1")
    q = np.array(q0, dtype=np.float64)
    p = np.array(p0, dtype=np.float64)
    B, N = q.shape
    if len(dev_seeds) != B:
        raise ValueError("need one deviation seed per orbit")
    q, p = _advance(q, p, params, transient)
    v1 = np.empty((B, 2 * N))
    v2 = np.empty((B, 2 * N))
    for i, s in enumerate(dev_seeds):
        a, b = _orthonormal_pair(make_rng(s), 2 * N)
        v1[i] = a
        v2[i] = b
    K, eps = params.K, params.epsilon
    sali_final = np.empty(B)
    sali_steps = np.zeros(B, dtype=np.int64)
    log_acc = np.zeros(B)
    lam = np.zeros(B)
    active = np.ones(B, dtype=bool)
    for n in range(1, screen_horizon + 1):
        d1q, d1p = tangent_arrays(q, v1[:, :N], v1[:, N:], K, eps)
        d2q, d2p = tangent_arrays(q, v2[:, :N], v2[:, N:], K, eps)
        n1 = np.sqrt(np.sum(d1q * d1q, -1) + np.sum(d1p * d1p, -1))
        n2 = np.sqrt(np.sum(d2q * d2q, -1) + np.sum(d2p * d2p, -1))
        v1[:, :N] = d1q / n1[..., None]
        v1[:, N:] = d1p / n1[..., None]
        v2[:, :N] = d2q / n2[..., None]
        v2[:, N:] = d2p / n2[..., None]
        log_acc += np.log(n1)
        sali = np.minimum(np.linalg.norm(v1 + v2, axis=-1),
                          np.linalg.norm(v1 - v2, axis=-1))
        crossed = active & (sali < SALI_CHAOTIC_THRESHOLD)
        sali_final[crossed] = sali[crossed]
        sali_steps[crossed] = n
        lam[crossed] = log_acc[crossed] / n
        active &= ~crossed
        q, p = step_arrays(q, p, K, eps)
        if not active.any():
            break
    sali_final[active] = sali[active]
    sali_steps[active] = n
    lam[active] = log_acc[active] / n
    return sali_final, sali_steps, lam


def sali_classify(ic: LatticeState, params: SystemParams,
                  screen_horizon: int = 1000, *, transient: int = 1000,
                  dev_seed: int = 0) -> OrbitDiagnostics:
    """Classify the orbit through ``ic`` as regular, sticky, or chaotic.

    Screening runs for at most ``screen_horizon`` tangent iterations
    after the transient and terminates as soon as SALI crosses the
    chaotic threshold.  The returned ``lambda_max`` is the screening
    estimate from the first deviation vector; dataset generation
    replaces it with the full-horizon Benettin value (see
    :func:`diagnose_orbit`).
    """
    if ic.N != params.N:
        raise ValueError(f"ic has N={ic.N} but params expect N={params.N}")
    sali, steps, lam = sali_classify_batch(
        ic.q[None, :], ic.p[None, :], params, screen_horizon, transient,
        [dev_seed])
    return OrbitDiagnostics(lambda_max=float(lam[0]),
                            sali_final=float(sali[0]),
                            sali_steps=int(steps[0]),
                            orbit_class=classify_sali(float(sali[0])))


def sali_series(ic: LatticeState, params: SystemParams, steps: int,
                *, transient: int = 1000, dev_seed: int = 0) -> np.ndarray:
    """Full SALI time series over ``steps`` iterations (no early stop).

    Diagnostic helper for inspecting alignment decay; values can
    underflow to zero for strongly chaotic orbits.
    """
    q = ic.q[None, :].copy()
    p = ic.p[None, :].copy()
    q, p = _advance(q, p, params, transient)
    N = params.N
    a, b = _orthonormal_pair(make_rng(dev_seed), 2 * N)
    v1, v2 = a[None, :].copy(), b[None, :].copy()
    K, eps = params.K, params.epsilon
    out = np.empty(steps)
    for n in range(steps):
        d1q, d1p = tangent_arrays(q, v1[:, :N], v1[:, N:], K, eps)
        d2q, d2p = tangent_arrays(q, v2[:, :N], v2[:, N:], K, eps)
        n1 = np.sqrt(np.sum(d1q * d1q, -1) + np.sum(d1p * d1p, -1))
        n2 = np.sqrt(np.sum(d2q * d2q, -1) + np.sum(d2p * d2p, -1))
        v1[:, :N] = d1q / n1[..., None]
        v1[:, N:] = d1p / n1[..., None]
        v2[:, :N] = d2q / n2[..., None]
        v2[:, N:] = d2p / n2[..., None]
        out[n] = min(np.linalg.norm(v1 + v2), np.linalg.norm(v1 - v2))
        q, p = step_arrays(q, p, K, eps)
    return out


def diagnose_orbit(ic: LatticeState, params: SystemParams, traj_seed: int,
                   *, transient: int = 1000, lyapunov_horizon: int = 10000,
                   screen_horizon: int = 1000) -> OrbitDiagnostics:
    """Full per-orbit diagnostics as persisted with the dataset.

    Combines the full-horizon Benettin exponent with the SALI
    classification; both deviation vectors draw from seed streams
    derived from ``traj_seed`` so the record is reproducible.
    """
    lam = lyapunov_max(ic, params, transient, lyapunov_horizon,
                       dev_seed=derive_seed(traj_seed, "benettin-deviation"))
    sali = sali_classify(ic, params, screen_horizon, transient=transient,
                         dev_seed=derive_seed(traj_seed, "sali-deviation"))
    return OrbitDiagnostics(lambda_max=lam, sali_final=sali.sali_final,
                            sali_steps=sali.sali_steps,
                            orbit_class=sali.orbit_class)


def regime_stats(diagnostics: Iterable[OrbitDiagnostics]) -> RegimeSummary:
    """Aggregate a collection of orbit diagnostics into a regime summary."""
    diags = list(diagnostics)
    if not diags:
        raise ValueError("regime_stats requires at least one orbit")
    lams = np.array([d.lambda_max for d in diags])
    chaotic = sum(d.orbit_class == "chaotic" for d in diags)
    mean_lam = float(lams.mean())
    t_l = 1.0 / mean_lam if mean_lam > 0 else math.inf
    return RegimeSummary(mean_lambda_max=mean_lam,
                         lambda_max_range=(float(lams.min()), float(lams.max())),
                         chaos_fraction=chaotic / len(diags),
                         lyapunov_time=t_l)


DIAGNOSTICS_FIELDS = ("instance", "ic_index", "lambda_max", "sali_final",
                      "sali_steps", "orbit_class")


def write_diagnostics_csv(path, rows: Iterable[tuple]):
    """Write diagnostics rows ``(instance_key, ic_index, OrbitDiagnostics)``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DIAGNOSTICS_FIELDS)
        for instance_key, ic_index, diag in rows:
            writer.writerow([instance_key, ic_index, repr(diag.lambda_max),
                             repr(diag.sali_final), diag.sali_steps,
                             diag.orbit_class])


def read_diagnostics_csv(path) -> list[tuple[str, int, OrbitDiagnostics]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            diag = OrbitDiagnostics(lambda_max=float(row["lambda_max"]),
                                    sali_final=float(row["sali_final"]),
                                    sali_steps=int(row["sali_steps"]),
                                    orbit_class=row["orbit_class"])
            out.append((row["instance"], int(row["ic_index"]), diag))
    return out
