"""Adapter for forecasters running as external processes.

The wire protocol is line-delimited JSON over the child's stdin/stdout,
one record per line, UTF-8:

* ``{"type": "init", "L": 48, "H": 12, "N": 8, "channels": 2,
  "K": 2.0, "epsilon": 0.2, "adjacency": [[0, 1, ...], ...]}``
  is sent once after launch; the client does not answer it.
* ``{"type": "predict", "id": 3, "context": [[...2N floats...] x L]}``
  asks for one prediction; ids are strictly increasing.
* ``{"type": "prediction", "id": 3, "values": [[...2N floats...] x H]}``
  is the only record the client may send back.

Floats are serialized as shortest round-trip decimals, so values
survive the pipe bit for bit.  Any protocol violation, timeout, or
process exit surfaces as a :class:`ForecasterError` subclass, which the
rollout harness converts into a degenerate-rollout marking; the harness
itself never crashes on a misbehaving client.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading

import numpy as np

from .forecasters import (Forecaster, ForecasterError, ForecastRequest,
                          ForecastResponse, InstanceContext, NonFinitePrediction)

__all__ = [
    "ProtocolError",
    "PredictTimeout",
    "ProcessExited",
    "ExternalForecaster",
]


class ProtocolError(ForecasterError):
    reason = "protocol"


class PredictTimeout(ForecasterError):
    reason = "timeout"


class ProcessExited(ForecasterError):
    reason = "process-exit"


_EOF = object()


class _LineReader:
    """Background reader so predict calls can time out cleanly."""

    def __init__(self, stream):
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._run, args=(stream,),
                                        daemon=True)
        self._thread.start()

    def _run(self, stream):
        for line in stream:
            self._queue.put(line)
        self._queue.put(_EOF)

    def readline(self, timeout: float) -> str:
        try:
            item = self._queue.get(timeout=timeout)
        except queue.Empty:
            raise PredictTimeout(f"no response within {timeout} s") from None
        if item is _EOF:
            self._queue.put(_EOF)  # sticky: every later read fails fast
            raise ProcessExited("external forecaster closed its output")
        return item


class ExternalForecaster(Forecaster):
    """Run an external forecaster process behind the wire protocol.

    The child is launched at ``fit`` time (one process per fitted
    instance), receives the init record, and then serves predict
    requests serially.  Responses are validated for record type, id,
    shape, and finiteness before anything reaches the harness.
    """

    name = "external"

    def __init__(self, command: str, *, timeout: float = 60.0):
        self.command = command
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._reader: _LineReader | None = None
        self._next_id = 0
        self._horizon = None
        self._width = None

    def fit(self, windows, context: InstanceContext):
        self.close()
        argv = shlex.split(self.command)
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
        except OSError as exc:
            raise ProcessExited(f"could not launch {argv[0]!r}: {exc}") from exc
        self._reader = _LineReader(self._proc.stdout)
        self._next_id = 0
        self._horizon = windows.horizon
        self._width = 2 * context.N
        self._send({
            "type": "init",
            "L": windows.length,
            "H": windows.horizon,
            "N": context.N,
            "channels": 2,
            "K": context.K,
            "epsilon": context.epsilon,
            "adjacency": context.adjacency.matrix.tolist(),
        })

    def _send(self, record: dict):
        if self._proc is None or self._proc.stdin is None:
            raise ProcessExited("external forecaster is not running")
        if self._proc.poll() is not None:
            raise ProcessExited(
                f"external forecaster exited with code {self._proc.returncode}")
        try:
            self._proc.stdin.write(json.dumps(record, separators=(",", ":"))
                                   + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProcessExited(f"external forecaster pipe closed: {exc}") from exc

    def predict(self, request: ForecastRequest) -> ForecastResponse:
        if self._proc is None:
            raise ForecasterError("external forecaster used before fit")
        request_id = self._next_id
        self._next_id += 1
        self._send({
            "type": "predict",
            "id": request_id,
            "context": request.context.tolist(),
        })
        line = self._reader.readline(self.timeout)
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(
                f"request {request_id}: response is not valid JSON ({exc})"
            ) from None
        if not isinstance(record, dict) or record.get("type") != "prediction":
            raise ProtocolError(
                f"request {request_id}: unknown record type "
                f"{record.get('type') if isinstance(record, dict) else record!r}")
        if record.get("id") != request_id:
            raise ProtocolError(
                f"request {request_id}: response carries id {record.get('id')}")
        try:
            values = np.asarray(record.get("values"), dtype=np.float64)
        except (TypeError, ValueError):
            raise ProtocolError(
                f"request {request_id}: malformed values payload") from None
        expected = (request.horizon, request.context.shape[1])
        if values.shape != expected:
            raise ProtocolError(
                f"request {request_id}: expected values of shape {expected}, "
                f"got {values.shape}")
        if not np.isfinite(values).all():
            raise NonFinitePrediction(
                f"request {request_id}: response contains non-finite values")
        return ForecastResponse(prediction=values)

    def close(self):
        proc, self._proc = self._proc, None
        self._reader = None
        if proc is None:
            return
        try:
            if proc.stdin is not None:
                proc.stdin.close()
            proc.terminate()
            proc.wait(timeout=5.0)
        except Exception:
            proc.kill()
            proc.wait()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass
