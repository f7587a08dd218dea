"""Forecaster interface and the built-in baselines.

A forecaster consumes a normalized context window of ``L`` lattice
states and emits the next ``H`` states, optionally using the instance
metadata and the ring adjacency supplied with every request.  All
values crossing this interface are in normalized (z-scored) units.

Built-ins:

* ``persistence`` repeats the last context row.
* ``climatology`` repeats the per-column train mean (about zero in
  normalized units), the reference point for the validity screen.
* ``ridge`` fits a one-step linear map on the flattened context in
  closed form and applies it autoregressively within each block.
* ``oracle`` continues the exact map from the context, a diagnostic
  ceiling control rather than a learned model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import NormStats, WindowSet, invert_normalization, apply_normalization
from .dynamics import RingAdjacency, SystemParams, step_arrays, wrap_momenta, wrap_positions

RIDGE_PENALTY = 1e-4

__all__ = [
    "RIDGE_PENALTY",
    "BUILTIN_MODELS",
    "ForecasterError",
    "NonFinitePrediction",
    "InstanceContext",
    "ForecastRequest",
    "ForecastResponse",
    "Forecaster",
    "PersistenceForecaster",
    "ClimatologyForecaster",
    "RidgeForecaster",
    "OracleForecaster",
    "make_forecaster",
]


class ForecasterError(RuntimeError):
    """A modeled forecaster failure; rollouts turn these into degenerate results."""

    reason = "forecaster-error"


class NonFinitePrediction(ForecasterError):
    reason = "nonfinite-prediction"


@dataclass(frozen=True)
class InstanceContext:
    """Everything a forecaster may know about the instance it is fitted on."""

    params: SystemParams
    adjacency: RingAdjacency
    norm: Optional[NormStats] = None

    @property
    def K(self) -> float:
        return self.params.K

    @property
    def epsilon(self) -> float:
        return self.params.epsilon

    @property
    def N(self) -> int:
        return self.params.N


@dataclass(frozen=True)
class ForecastRequest:
    """One prediction request: context window plus instance metadata."""

    context: np.ndarray
    horizon: int
    K: float
    epsilon: float
    N: int
    adjacency: RingAdjacency

    def __post_init__(self):
        ctx = np.asarray(self.context, dtype=np.float64)
        if ctx.ndim != 2 or ctx.shape[1] != 2 * self.N:
            raise ValueError(
                f"context must have shape (L, {2 * self.N}), got {ctx.shape}")
        if not np.isfinite(ctx).all():
            raise ValueError("context contains non-finite values")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        object.__setattr__(self, "context", ctx)


@dataclass(frozen=True)
class ForecastResponse:
    """Prediction block: exactly ``horizon`` rows of 2N normalized values."""

    prediction: np.ndarray

    def __post_init__(self):
        pred = np.asarray(self.prediction, dtype=np.float64)
        if pred.ndim != 2:
            raise ValueError("prediction must be a 2-d array")
        object.__setattr__(self, "prediction", pred)


class Forecaster:
    """Base class for all forecasters.

    ``fit`` receives the train windows and the instance context;
    ``predict`` must be pure given the fitted state.  Forecasters that
    need the raw (denormalized) rollout seed, currently only the
    oracle, set ``needs_raw_anchor`` and receive ``begin_rollout``
    before the first predict call of each rollout.
    """

    name = "forecaster"
    needs_raw_anchor = False

    def fit(self, windows: WindowSet, context: InstanceContext) -> None:
        raise NotImplementedError

    def predict(self, request: ForecastRequest) -> ForecastResponse:
        raise NotImplementedError

    def begin_rollout(self, raw_context: np.ndarray) -> None:
        """Called by the rollout harness before the first block."""

    def close(self) -> None:
        """Release external resources; a no-op for built-ins."""


class PersistenceForecaster(Forecaster):
    """Repeat the last context row for the whole horizon."""

    name = "persistence"

    def fit(self, windows, context):
        pass

    def predict(self, request: ForecastRequest) -> ForecastResponse:
        last = request.context[-1]
        return ForecastResponse(prediction=np.tile(last, (request.horizon, 1)))


class ClimatologyForecaster(Forecaster):
    """Repeat the per-column train mean for the whole horizon."""

    name = "climatology"

    def __init__(self):
        self._mean = None

    def fit(self, windows: WindowSet, context: InstanceContext):
        rows = np.vstack([windows.contexts.reshape(-1, windows.contexts.shape[-1]),
                          windows.targets.reshape(-1, windows.targets.shape[-1])])
        self._mean = rows.mean(axis=0)

    def predict(self, request: ForecastRequest) -> ForecastResponse:
        if self._mean is None:
            raise ForecasterError("climatology used before fit")
        if self._mean.shape[0] != request.context.shape[1]:
            raise ForecasterError("climatology fitted for a different width")
        return ForecastResponse(
            prediction=np.tile(self._mean, (request.horizon, 1)))


class RidgeForecaster(Forecaster):
    """Closed-form linear one-step map on the flattened context.

    The map sends the row-major flattening of the ``(L, 2N)`` context
    to the next state; within a block it is applied autoregressively,
    sliding its own predictions into the context.  Fitting solves the
    regularized normal equations accumulated over all train windows.
    """

    name = "ridge"

    def __init__(self, penalty: float = RIDGE_PENALTY):
        self.penalty = penalty
        self._weights = None
        self._length = None

    def fit(self, windows: WindowSet, context: InstanceContext):
        n, L, width = windows.contexts.shape
        X = windows.contexts.reshape(n, L * width)
        y = windows.targets[:, 0, :]
        gram = X.T @ X
        gram[np.diag_indices_from(gram)] += self.penalty
        self._weights = np.linalg.solve(gram, X.T @ y)
        self._length = L

    def predict(self, request: ForecastRequest) -> ForecastResponse:
        if self._weights is None:
            raise ForecasterError("ridge used before fit")
        ctx = request.context
        if ctx.shape[0] < self._length:
            raise ForecasterError(
                f"ridge needs {self._length} context rows, got {ctx.shape[0]}")
        buf = ctx[-self._length:].copy()
        out = np.empty((request.horizon, ctx.shape[1]))
        for h in range(request.horizon):
            nxt = buf.reshape(-1) @ self._weights
            out[h] = nxt
            buf[:-1] = buf[1:]
            buf[-1] = nxt
        return ForecastResponse(prediction=out)


class OracleForecaster(Forecaster):
    """Exact-map continuation: the perfect-model diagnostic control.

    Follows the true dynamics from the context.  Within a rollout the
    oracle keeps the raw lattice state it reached after its previous
    block and continues from it whenever the incoming context tail is
    bit-identical to its own last prediction, so no
    normalize/denormalize round-trip error is ever amplified by the
    chaotic flow.  The rollout harness supplies the exact raw seed via
    ``begin_rollout``; used standalone, the oracle falls back to
    denormalizing the last context row.
    """

    name = "oracle"
    needs_raw_anchor = True

    def __init__(self):
        self._params = None
        self._norm = None
        self._raw_state = None
        self._expected_tail = None

    def fit(self, windows: WindowSet, context: InstanceContext):
        if context.norm is None:
            raise ForecasterError("oracle requires normalization stats")
        self._params = context.params
        self._norm = context.norm
        self._raw_state = None
        self._expected_tail = None

    def begin_rollout(self, raw_context: np.ndarray):
        raw_context = np.asarray(raw_context, dtype=np.float64)
        self._raw_state = raw_context[-1].copy()
        self._expected_tail = apply_normalization(raw_context[-1],
                                                  self._norm).copy()

    def predict(self, request: ForecastRequest) -> ForecastResponse:
        if self._params is None:
            raise ForecasterError("oracle used before fit")
        N = self._params.N
        if request.context.shape[1] != 2 * N:
            raise ForecasterError("oracle fitted for a different lattice size")
        tail = request.context[-1]
        if (self._raw_state is not None and self._expected_tail is not None
                and np.array_equal(tail, self._expected_tail)):
            row = self._raw_state
        else:
            row = invert_normalization(tail, self._norm)
            row = np.concatenate([wrap_positions(row[:N].copy()),
                                  wrap_momenta(row[N:].copy())])
        q, p = row[:N].copy(), row[N:].copy()
        raw = np.empty((request.horizon, 2 * N))
        for h in range(request.horizon):
            q, p = step_arrays(q, p, self._params.K, self._params.epsilon)
            raw[h, :N] = q
            raw[h, N:] = p
        self._raw_state = raw[-1].copy()
        prediction = apply_normalization(raw, self._norm)
        self._expected_tail = prediction[-1].copy()
        return ForecastResponse(prediction=prediction)


BUILTIN_MODELS = ("persistence", "climatology", "ridge", "oracle")


def make_forecaster(spec: str, *, timeout: float = 60.0) -> Forecaster:
    """Instantiate a forecaster from a model spec string.

    Built-in names are ``persistence``, ``climatology``, ``ridge``, and
    ``oracle``; ``extern:<command line>`` launches an external process
    speaking the line-delimited wire protocol.
    """
    if spec == "persistence":
        return PersistenceForecaster()
    if spec == "climatology":
        return ClimatologyForecaster()
    if spec == "ridge":
        return RidgeForecaster()
    if spec == "oracle":
        return OracleForecaster()
    if spec.startswith("extern:"):
        from .external import ExternalForecaster
        command = spec[len("extern:"):].strip()
        if not command:
            raise ValueError("extern: spec requires a command line")
        return ExternalForecaster(command, timeout=timeout)
    raise ValueError(f"unknown model spec {spec!r}")
