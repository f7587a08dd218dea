"""Coupled standard map on a ring: exact map, tangent map, and simulation.

The system is a lattice of ``N`` standard maps with sinusoidal
nearest-neighbor coupling on a periodic ring.  One iteration updates
momenta from the local kick and the coupling force, then advances
positions:

    p'_i = p_i + K sin(q_i) - eps [sin(q_{i+1} - q_i) + sin(q_{i-1} - q_i)]
    q'_i = (q_i + p'_i)  mod 2 pi

Positions live on ``[0, 2 pi)`` and momenta are reduced to the centered
torus ``[-pi, pi)`` after every step, so recorded states are stationary
in every regime (see the module notes in the README on why momenta are
wrapped).  All arithmetic is 64-bit IEEE with a frozen evaluation order,
so trajectories are reproducible bit for bit.

The array kernels (:func:`step_arrays`, :func:`tangent_arrays`) accept
any ``(..., N)``-shaped inputs and are the hot path; the object API
(:func:`step`, :func:`simulate`) wraps them with validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .seeds import make_rng

TWO_PI = 2.0 * np.pi

__all__ = [
    "TWO_PI",
    "SystemParams",
    "LatticeState",
    "Trajectory",
    "RingAdjacency",
    "ring_adjacency",
    "step",
    "step_arrays",
    "tangent_arrays",
    "jacobian",
    "sample_ic",
    "simulate",
    "simulate_batch",
    "wrap_positions",
    "wrap_momenta",
]


@dataclass(frozen=True)
class SystemParams:
    """Controlled factors of one system instance.

    Attributes
    ----------
    K : float
        Local nonlinearity (kick) strength, dimensionless, >= 0.
    epsilon : float
        Nearest-neighbor coupling strength, dimensionless, >= 0.
    N : int
        Number of lattice sites on the ring, >= 3.
    """

    K: float
    epsilon: float
    N: int

    def __post_init__(self):
        if not np.isfinite(self.K) or self.K < 0:
            raise ValueError(f"K must be finite and >= 0, got {self.K}")
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if self.N < 3:
            raise ValueError(f"N must be >= 3 (ring with distinct neighbors), got {self.N}")

    @property
    def rho(self) -> float:
        """Coupling-to-chaos ratio eps/K (inf when K == 0 and eps > 0)."""
        if self.K > 0:
            return self.epsilon / self.K
        return 0.0 if self.epsilon == 0.0 else float("inf")


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out is a:
        out = out.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class LatticeState:
    """One time slice of the ring: positions ``q`` and momenta ``p``.

    Positions must lie in ``[0, 2 pi)`` and momenta in ``[-pi, pi)``;
    both arrays are copied and frozen on construction.
    """

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = _readonly(np.atleast_1d(self.q))
        p = _readonly(np.atleast_1d(self.p))
        if q.ndim != 1 or p.ndim != 1 or q.shape != p.shape:
            raise ValueError("q and p must be 1-d arrays of identical length")
        if not (np.isfinite(q).all() and np.isfinite(p).all()):
            raise ValueError("state contains non-finite entries")
        if (q < 0).any() or (q >= TWO_PI).any():
            raise ValueError("positions must lie in [0, 2*pi)")
        if (p < -np.pi).any() or (p >= np.pi).any():
            raise ValueError("momenta must lie in [-pi, pi)")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def N(self) -> int:
        return self.q.shape[0]

    def as_row(self) -> np.ndarray:
        """Flat ``(2N,)`` vector in the persistence layout (q first, p second)."""
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_row(cls, row: np.ndarray) -> "LatticeState":
        row = np.asarray(row, dtype=np.float64)
        if row.ndim != 1 or row.shape[0] % 2:
            raise ValueError("row must be a flat (2N,) vector")
        n = row.shape[0] // 2
        return cls(q=row[:n], p=row[n:])


@dataclass(frozen=True)
class Trajectory:
    """A recorded orbit plus its generation provenance.

    ``states`` is a ``(T, 2N)`` float64 array whose columns are ordered
    ``(q_1 .. q_N, p_1 .. p_N)``.
    """

    states: np.ndarray
    params: SystemParams
    ic_index: int
    seed: int
    transient_discarded: int

    def __post_init__(self):
        states = _readonly(self.states)
        if states.ndim != 2 or states.shape[1] != 2 * self.params.N:
            raise ValueError(
                f"states must have shape (T, {2 * self.params.N}), got {states.shape}"
            )
        object.__setattr__(self, "states", states)

    @property
    def T(self) -> int:
        return self.states.shape[0]

    def positions(self) -> np.ndarray:
        return self.states[:, : self.params.N]

    def momenta(self) -> np.ndarray:
        return self.states[:, self.params.N:]


@dataclass(frozen=True)
class RingAdjacency:
    """Binary adjacency of the ring: ``A[i, j] = 1`` iff ``j = i +- 1 mod N``."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 3:
            raise ValueError("adjacency must be square with N >= 3")
        if not np.array_equal(m, m.T):
            raise ValueError("adjacency must be symmetric")
        if np.diagonal(m).any():
            raise ValueError("adjacency must have a zero diagonal")
        if not np.array_equal(m.sum(axis=1), np.full(m.shape[0], 2)):
            raise ValueError("every ring node must have exactly two neighbors")
        out = np.ascontiguousarray(m, dtype=np.int8)
        out.flags.writeable = False
        object.__setattr__(self, "matrix", out)

    @property
    def N(self) -> int:
        return self.matrix.shape[0]


def ring_adjacency(N: int) -> RingAdjacency:
    """Adjacency matrix of the N-site ring."""
    if N < 3:
        raise ValueError(f"ring requires N >= 3, got {N}")
    idx = np.arange(N)
    m = np.zeros((N, N), dtype=np.int8)
    m[idx, (idx + 1) % N] = 1
    m[idx, (idx - 1) % N] = 1
    return RingAdjacency(matrix=m)


def wrap_positions(q: np.ndarray) -> np.ndarray:
    """Reduce angles to ``[0, 2 pi)``.

    ``np.mod`` can return exactly ``2 pi`` for tiny negative inputs, so
    the boundary is folded back to zero explicitly.
    """
    out = np.mod(q, TWO_PI)
    out[out >= TWO_PI] = 0.0
    return out


def wrap_momenta(p: np.ndarray) -> np.ndarray:
    """Reduce momenta to the centered torus ``[-pi, pi)``.

    In-range values pass through untouched; shifting by pi and back
    would otherwise cost a rounding error on every step.
    """
    folded = np.mod(p + np.pi, TWO_PI)
    folded[folded >= TWO_PI] = 0.0
    folded -= np.pi
    return np.where((p >= -np.pi) & (p < np.pi), p, folded)


def step_arrays(q: np.ndarray, p: np.ndarray, K: float, epsilon: float):
    """One map iteration on raw ``(..., N)`` arrays.

    Returns fresh ``(q', p')`` arrays; the inputs are left untouched.
    The evaluation order below is frozen: do not reassociate it, or
    stored trajectories stop being reproducible.
    """
    q_next = np.roll(q, -1, axis=-1)
    q_prev = np.roll(q, 1, axis=-1)
    coupling = np.sin(q_next - q) + np.sin(q_prev - q)
    p_new = wrap_momenta((p + K * np.sin(q)) - epsilon * coupling)
    q_new = wrap_positions(q + p_new)
    return q_new, p_new


def step(state: LatticeState, params: SystemParams) -> LatticeState:
    """Advance one lattice state by a single map iteration."""
    if state.N != params.N:
        raise ValueError(f"state has N={state.N} but params expect N={params.N}")
    q_new, p_new = step_arrays(state.q, state.p, params.K, params.epsilon)
    return LatticeState(q=q_new, p=p_new)


def tangent_arrays(q: np.ndarray, dq: np.ndarray, dp: np.ndarray,
                   K: float, epsilon: float):
    """Apply the exact tangent (derivative) map at base point ``q``.

    Matrix-free form of :func:`jacobian` acting on a deviation vector
    ``(dq, dp)``; shapes follow the base arrays ``(..., N)``.  The
    modular reductions in :func:`step_arrays` have unit derivative and
    do not appear here.
    """
    c_plus = np.cos(np.roll(q, -1, axis=-1) - q)
    c_minus = np.cos(np.roll(q, 1, axis=-1) - q)
    dp_new = dp + K * np.cos(q) * dq + epsilon * (
        c_plus * (dq - np.roll(dq, -1, axis=-1))
        + c_minus * (dq - np.roll(dq, 1, axis=-1))
    )
    dq_new = dq + dp_new
    return dq_new, dp_new


def jacobian(state: LatticeState, params: SystemParams) -> np.ndarray:
    """Exact ``2N x 2N`` derivative of :func:`step` at ``state``.

    Row and column blocks are ordered (q, p), matching the trajectory
    column layout, so the uncoupled zero-kick limit is the shear
    ``[[I, I], [0, I]]``.  The map is symplectic: ``det J = 1``.
    """
    if state.N != params.N:
        raise ValueError(f"state has N={state.N} but params expect N={params.N}")
    N = params.N
    q = state.q
    K, eps = params.K, params.epsilon
    idx = np.arange(N)
    c_plus = np.cos(q[(idx + 1) % N] - q)
    c_minus = np.cos(q[(idx - 1) % N] - q)

    dpdq = np.zeros((N, N))
    dpdq[idx, idx] = K * np.cos(q) + eps * (c_plus + c_minus)
    dpdq[idx, (idx + 1) % N] += -eps * c_plus
    dpdq[idx, (idx - 1) % N] += -eps * c_minus

    eye = np.eye(N)
    top = np.hstack([eye + dpdq, eye])
    bottom = np.hstack([dpdq, eye])
    return np.vstack([top, bottom])


def sample_ic(rng_seed: int, N: int) -> LatticeState:
    """Draw a uniform random initial condition from a seeded generator.

    Positions are uniform on ``[0, 2 pi)`` and momenta on ``[-pi, pi)``.
    Identical seeds produce bit-identical states.
    """
    if N < 3:
        raise ValueError(f"N must be >= 3, got {N}")
    rng = make_rng(rng_seed)
    q = rng.uniform(0.0, TWO_PI, N)
    p = rng.uniform(-np.pi, np.pi, N)
    return LatticeState(q=q, p=p)


def _check_finite(states: np.ndarray, params: SystemParams):
    if not np.isfinite(states).all():
        raise FloatingPointError(
            f"non-finite state encountered for {params}; "
            "this signals a parameter pathology"
        )


def simulate(ic: LatticeState, params: SystemParams,
             transient: int = 1000, record: int = 10000,
             *, ic_index: int = 0, seed: int = 0) -> Trajectory:
    """Iterate the map from ``ic``, discard ``transient`` steps, record the rest.

    A pure function of its inputs: the same ``(ic, params, transient,
    record)`` always produces the same trajectory, bit for bit.
    """
    if transient < 0:
        raise ValueError("transient must be >= 0")
    if record < 1:
        raise ValueError("record must be >= 1")
    if ic.N != params.N:
        raise ValueError(f"ic has N={ic.N} but params expect N={params.N}")
    q, p = ic.q.copy(), ic.p.copy()
    K, eps = params.K, params.epsilon
    for _ in range(transient):
        q, p = step_arrays(q, p, K, eps)
    N = params.N
    states = np.empty((record, 2 * N))
    for t in range(record):
        q, p = step_arrays(q, p, K, eps)
        states[t, :N] = q
        states[t, N:] = p
    _check_finite(states, params)
    return Trajectory(states=states, params=params, ic_index=ic_index,
                      seed=seed, transient_discarded=transient)


def simulate_batch(q0: np.ndarray, p0: np.ndarray, params: SystemParams,
                   transient: int, record: int) -> np.ndarray:
    """Simulate many orbits at once; returns a ``(B, record, 2N)`` array.

    Row ``b`` is bit-identical to ``simulate`` run on orbit ``b`` alone
    (elementwise kernels are batch-invariant); batching only amortizes
    the per-step dispatch cost.
    """
    if transient < 0 or record < 1:
        raise ValueError("transient must be >= 0 and record >= 1")
    q = np.array(q0, dtype=np.float64)
    p = np.array(p0, dtype=np.float64)
    if q.ndim != 2 or q.shape != p.shape or q.shape[1] != params.N:
        raise ValueError(f"batch arrays must have shape (B, {params.N})")
    K, eps = params.K, params.epsilon
    for _ in range(transient):
        q, p = step_arrays(q, p, K, eps)
    B, N = q.shape
    out = np.empty((B, record, 2 * N))
    for t in range(record):
        q, p = step_arrays(q, p, K, eps)
        out[:, t, :N] = q
        out[:, t, N:] = p
    _check_finite(out, params)
    return out
