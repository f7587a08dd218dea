"""Autoregressive rollout evaluation: NRMSE, valid prediction time, screening.

A rollout seeds the forecaster with the first ``L`` true normalized
states of a test trajectory and then feeds the model's own predictions
back as context in blocks of ``H`` steps.  Per-step NRMSE is the RMSE
over the 2N state columns divided by the pooled standard deviation of
the true rollout segment (all columns, all rollout steps, in
normalized units).

Two quantities summarize a rollout:

* the valid prediction time (VPT): the number of leading steps before
  NRMSE first exceeds 1.0;
* the test MSE over the whole rollout, screened at 0.95.  A mean
  predictor scores about 1.0 under z-score normalization, so rollouts
  at or above the screen are degenerate mean-collapses rather than
  informative forecasts.

Forecaster failures (protocol violations, timeouts, non-finite output)
mark the rollout degenerate; they never crash the harness.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .dataset import (GridInstance, NormStats, SplitSpec, WindowSet,
                      apply_normalization, fit_normalization, make_windows)
from .dynamics import ring_adjacency
from .forecasters import (Forecaster, ForecasterError, ForecastRequest,
                          InstanceContext, make_forecaster)

VALIDITY_MSE_THRESHOLD = 0.95
VPT_NRMSE_THRESHOLD = 1.0
DEFAULT_ROLLOUT_CAP = 240
NORM_SCALE_FLOOR = 1e-8

__all__ = [
    "VALIDITY_MSE_THRESHOLD",
    "VPT_NRMSE_THRESHOLD",
    "DEFAULT_ROLLOUT_CAP",
    "RolloutResult",
    "InstanceResult",
    "nrmse_at_step",
    "vpt",
    "rollout",
    "evaluate_instance",
    "seed_mean",
    "write_results_csv",
    "read_results_csv",
    "write_details_csv",
    "RESULTS_FIELDS",
]


def nrmse_at_step(pred_row: np.ndarray, true_row: np.ndarray,
                  norm_scale: float) -> float:
    """RMSE over the state columns at one step, divided by ``norm_scale``."""
    pred_row = np.asarray(pred_row, dtype=np.float64)
    true_row = np.asarray(true_row, dtype=np.float64)
    if pred_row.shape != true_row.shape:
        raise ValueError("prediction and truth rows must have equal length")
    err = pred_row - true_row
    return float(np.sqrt(np.mean(err * err)) / norm_scale)


def vpt(nrmse_series: Sequence[float],
        threshold: float = VPT_NRMSE_THRESHOLD) -> int:
    """Number of leading steps with NRMSE at or below ``threshold``.

    A series that first exceeds the threshold at step ``k`` (0-based)
    has VPT ``k``; a series that never exceeds it scores its full
    length.
    """
    series = np.asarray(nrmse_series, dtype=np.float64)
    if series.size == 0:
        raise ValueError("vpt requires a non-empty series")
    exceeded = series > threshold
    if not exceeded.any():
        return int(series.size)
    return int(np.argmax(exceeded))


@dataclass(frozen=True)
class RolloutResult:
    """Outcome of one (forecaster, test trajectory) rollout."""

    nrmse_series: np.ndarray
    vpt: int
    test_mse: float
    valid: bool
    degenerate_reason: Optional[str] = None

    def __post_init__(self):
        series = np.asarray(self.nrmse_series, dtype=np.float64)
        series.flags.writeable = False
        object.__setattr__(self, "nrmse_series", series)
        if self.vpt > series.size:
            raise ValueError("vpt cannot exceed the rollout length")
        expected_valid = (self.degenerate_reason is None
                          and self.test_mse < VALIDITY_MSE_THRESHOLD)
        if self.valid != expected_valid:
            raise ValueError("valid flag inconsistent with test_mse/degeneracy")

    @property
    def degenerate(self) -> bool:
        return self.degenerate_reason is not None


def _degenerate(nrmse_prefix: list[float], reason: str) -> RolloutResult:
    series = np.asarray(nrmse_prefix, dtype=np.float64)
    steps = vpt(series) if series.size else 0
    return RolloutResult(nrmse_series=series, vpt=steps, test_mse=math.nan,
                         valid=False, degenerate_reason=reason)


def rollout(forecaster: Forecaster, states: np.ndarray, stats: NormStats,
            *, length: int = 48, horizon: int = 12,
            cap: int = DEFAULT_ROLLOUT_CAP,
            instance: Optional[GridInstance] = None) -> RolloutResult:
    """Roll a forecaster out against one raw test trajectory.

    ``states`` is the raw ``(T, 2N)`` trajectory; normalization happens
    here so every forecaster sees z-scored values.  ``cap`` must be a
    multiple of ``horizon`` and fit the trajectory (``T >= length +
    cap``).  ``instance`` fills the request metadata; without it the
    K and epsilon fields are reported as NaN.
    """
    states = np.asarray(states, dtype=np.float64)
    if cap < horizon or cap % horizon:
        raise ValueError(f"cap must be a positive multiple of horizon, got {cap}")
    if states.shape[0] < length + cap:
        raise ValueError(
            f"trajectory of length {states.shape[0]} too short for "
            f"L={length}, cap={cap}")
    n_nodes = states.shape[1] // 2
    meta_k = instance.K if instance is not None else math.nan
    meta_eps = instance.epsilon if instance is not None else math.nan
    adjacency = ring_adjacency(n_nodes)
    segment = apply_normalization(states[:length + cap], stats)
    truth = segment[length:]
    norm_scale = max(float(truth.std()), NORM_SCALE_FLOOR)

    context = segment[:length].copy()
    if forecaster.needs_raw_anchor:
        forecaster.begin_rollout(states[:length])

    nrmse_values: list[float] = []
    sq_err_sum = 0.0
    done = 0
    while done < cap:
        request = ForecastRequest(context=context, horizon=horizon,
                                  K=meta_k, epsilon=meta_eps,
                                  N=n_nodes, adjacency=adjacency)
        try:
            response = forecaster.predict(request)
        except ForecasterError as exc:
            return _degenerate(nrmse_values, getattr(exc, "reason",
                                                     "forecaster-error"))
        pred = response.prediction
        if pred.shape != (horizon, 2 * n_nodes):
            return _degenerate(nrmse_values, "bad-prediction-shape")
        if not np.isfinite(pred).all():
            return _degenerate(nrmse_values, "nonfinite-prediction")
        block_truth = truth[done:done + horizon]
        err = pred - block_truth
        sq_err_sum += float((err * err).sum())
        nrmse_values.extend(
            np.sqrt(np.mean(err * err, axis=1)) / norm_scale)
        context = np.vstack([context[horizon:], pred])
        done += horizon

    series = np.asarray(nrmse_values)
    test_mse = sq_err_sum / (cap * 2 * n_nodes)
    return RolloutResult(nrmse_series=series, vpt=vpt(series),
                         test_mse=test_mse,
                         valid=test_mse < VALIDITY_MSE_THRESHOLD)


@dataclass(frozen=True)
class InstanceResult:
    """Aggregated rollouts of one model on one instance for one seed."""

    instance: GridInstance
    model: str
    seed: int
    mean_vpt: float
    test_mse: float
    valid: bool
    n_degenerate: int
    per_trajectory: tuple[RolloutResult, ...] = ()

    @property
    def key(self) -> str:
        return self.instance.key


def _aggregate(instance: GridInstance, model: str, seed: int,
               results: Sequence[RolloutResult]) -> InstanceResult:
    ok = [r for r in results if not r.degenerate]
    n_degenerate = len(results) - len(ok)
    if ok:
        mean_vpt = float(np.mean([r.vpt for r in ok]))
        test_mse = float(np.mean([r.test_mse for r in ok]))
    else:
        mean_vpt = math.nan
        test_mse = math.nan
    valid = (n_degenerate == 0 and not math.isnan(test_mse)
             and test_mse < VALIDITY_MSE_THRESHOLD)
    return InstanceResult(instance=instance, model=model, seed=seed,
                          mean_vpt=mean_vpt, test_mse=test_mse, valid=valid,
                          n_degenerate=n_degenerate,
                          per_trajectory=tuple(results))


def evaluate_instance(trajectories: Mapping[int, np.ndarray],
                      instance: GridInstance, split: SplitSpec,
                      model_spec: str, *, seeds: Sequence[int] = (0,),
                      cap: int = DEFAULT_ROLLOUT_CAP, length: int = 48,
                      horizon: int = 12, train_stride: int = 12,
                      timeout: float = 60.0,
                      forecaster_factory: Optional[Callable[[], Forecaster]] = None,
                      ) -> list[InstanceResult]:
    """Fit and roll out one model on one instance, once per seed.

    ``trajectories`` maps IC index to the raw ``(T, 2N)`` array;
    normalization statistics and train windows come exclusively from
    the split's train ICs.  Built-in forecasters are deterministic, so
    their per-seed results are identical; the seed is recorded for
    parity with stochastic external models.
    """
    missing = [i for i in split.train + split.test if i not in trajectories]
    if missing:
        raise KeyError(f"trajectories missing for ICs {missing}")
    stats = fit_normalization(trajectories[i] for i in split.train)
    train_windows = [
        make_windows(apply_normalization(trajectories[i], stats),
                     length, horizon, train_stride)
        for i in split.train
    ]
    merged = WindowSet(
        contexts=np.concatenate([w.contexts for w in train_windows]),
        targets=np.concatenate([w.targets for w in train_windows]),
        length=length, horizon=horizon, stride=train_stride)
    context = InstanceContext(params=instance.params,
                              adjacency=ring_adjacency(instance.N),
                              norm=stats)
    out = []
    for seed in seeds:
        if forecaster_factory is not None:
            forecaster = forecaster_factory()
        else:
            forecaster = make_forecaster(model_spec, timeout=timeout)
        try:
            try:
                forecaster.fit(merged, context)
            except ForecasterError as exc:
                # A model that cannot even fit degenerates every rollout.
                reason = getattr(exc, "reason", "forecaster-error")
                results = [_degenerate([], reason) for _ in split.test]
            else:
                results = [
                    rollout(forecaster, trajectories[i], stats,
                            length=length, horizon=horizon, cap=cap,
                            instance=instance)
                    for i in split.test
                ]
        finally:
            forecaster.close()
        out.append(_aggregate(instance, model_spec, seed, results))
    return out


def seed_mean(results: Sequence[InstanceResult]) -> InstanceResult:
    """Average one model's per-seed results on one instance.

    The seed-mean is valid when no seed produced a degenerate
    trajectory and the mean test MSE stays under the screen.
    """
    if not results:
        raise ValueError("seed_mean requires at least one result")
    first = results[0]
    if any(r.instance != first.instance or r.model != first.model
           for r in results):
        raise ValueError("seed_mean requires results of one (model, instance)")
    mean_vpt = float(np.mean([r.mean_vpt for r in results]))
    test_mse = float(np.mean([r.test_mse for r in results]))
    n_degenerate = sum(r.n_degenerate for r in results)
    valid = (n_degenerate == 0 and not math.isnan(test_mse)
             and test_mse < VALIDITY_MSE_THRESHOLD)
    return InstanceResult(instance=first.instance, model=first.model,
                          seed=-1, mean_vpt=mean_vpt, test_mse=test_mse,
                          valid=valid, n_degenerate=n_degenerate)


RESULTS_FIELDS = ("K", "rho", "N", "model", "seed", "mean_vpt", "test_mse",
                  "valid", "n_degenerate")


def write_results_csv(path, results: Sequence[InstanceResult]):
    """One row per (model, instance, seed), in grid-then-model order."""
    rows = sorted(results, key=lambda r: (r.instance.K, r.instance.rho,
                                          r.instance.N, r.model, r.seed))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_FIELDS)
        for r in rows:
            writer.writerow([repr(r.instance.K), repr(r.instance.rho),
                             r.instance.N, r.model, r.seed,
                             repr(r.mean_vpt), repr(r.test_mse),
                             int(r.valid), r.n_degenerate])


@dataclass(frozen=True)
class ResultRow:
    """One results-CSV row; the comparison stage works on these."""

    K: float
    rho: float
    N: int
    model: str
    seed: int
    mean_vpt: float
    test_mse: float
    valid: bool
    n_degenerate: int

    @property
    def instance_key(self) -> tuple[float, float, int]:
        return (self.K, self.rho, self.N)


def read_results_csv(path) -> list[ResultRow]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(ResultRow(
                K=float(row["K"]), rho=float(row["rho"]), N=int(row["N"]),
                model=row["model"], seed=int(row["seed"]),
                mean_vpt=float(row["mean_vpt"]),
                test_mse=float(row["test_mse"]),
                valid=bool(int(row["valid"])),
                n_degenerate=int(row["n_degenerate"])))
    return out


DETAILS_FIELDS = ("K", "rho", "N", "model", "seed", "ic_index", "vpt",
                  "test_mse", "valid", "degenerate_reason")


def write_details_csv(path, results: Sequence[InstanceResult],
                      split_by_result: Mapping[int, Sequence[int]] | None = None):
    """Optional per-trajectory detail rows.

    ``split_by_result`` maps the index of each InstanceResult to the
    test IC indices its rollouts correspond to (in order); without it,
    positional indices are used.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DETAILS_FIELDS)
        for ridx, res in enumerate(results):
            ics = (split_by_result or {}).get(ridx,
                                              range(len(res.per_trajectory)))
            for ic, traj_res in zip(ics, res.per_trajectory):
                writer.writerow([
                    repr(res.instance.K), repr(res.instance.rho),
                    res.instance.N, res.model, res.seed, ic, traj_res.vpt,
                    repr(traj_res.test_mse), int(traj_res.valid),
                    traj_res.degenerate_reason or ""])
