"""Benchmark construction: design grid, generation, splits, windows, storage.

A benchmark run sweeps a Cartesian grid over the kick strength ``K``,
the coupling-to-chaos ratio ``rho = eps / K``, and the lattice size
``N``; every cell of the grid is one *system instance* holding a fixed
number of trajectories from independently sampled initial conditions.

Trajectories are persisted in a single HDF5 container under
``/K{K}/rho{rho}/N{N}/ic{index}`` as ``(T, 2N)`` float64 datasets with
gzip compression; the per-dataset attributes carry the parameters, the
IC seed, and the orbit diagnostics, so any slice of the file is
self-describing and can be regenerated independently.

Splitting is by initial condition, never by time: windows are cut only
after trajectories are assigned to train/val/test, so no window ever
straddles a split boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import h5py
import numpy as np

from .dynamics import SystemParams, Trajectory, sample_ic, simulate_batch
from .indicators import (OrbitDiagnostics, classify_sali, lyapunov_max_batch,
                         sali_classify_batch)
from .seeds import derive_seed, make_rng

STD_FLOOR = 1e-8

__all__ = [
    "STD_FLOOR",
    "DesignGrid",
    "GridInstance",
    "SplitSpec",
    "NormStats",
    "WindowSet",
    "GridConfigError",
    "build_grid",
    "instance_ic_seed",
    "split_ics",
    "default_split_ratios",
    "fit_normalization",
    "apply_normalization",
    "invert_normalization",
    "make_windows",
    "generate_instance_arrays",
    "generate_instance",
    "TrajectoryStore",
    "parse_grid_config",
    "write_grid_config",
]


@dataclass(frozen=True)
class DesignGrid:
    """The controlled design space of the benchmark.

    Defaults reproduce the full 96-instance, 9,600-trajectory grid.
    ``desk()`` gives the 20-IC profile used for quick regeneration of
    the regime statistics on a laptop.
    """

    k_values: tuple[float, ...] = (0.5, 0.97, 2.0, 6.5)
    rho_values: tuple[float, ...] = (0.05, 0.075, 0.10, 0.15, 0.20, 0.30, 0.40, 0.50)
    n_values: tuple[int, ...] = (8, 16, 32)
    ics_per_instance: int = 100
    master_seed: int = 20260810
    transient: int = 1000
    record: int = 10000

    def __post_init__(self):
        if not (self.k_values and self.rho_values and self.n_values):
            raise ValueError("grid value lists must be non-empty")
        if self.ics_per_instance < 1:
            raise ValueError("ics_per_instance must be >= 1")

    @classmethod
    def desk(cls, **overrides) -> "DesignGrid":
        """Desk-scale profile: same grid, 20 ICs per instance."""
        overrides.setdefault("ics_per_instance", 20)
        return cls(**overrides)

    @property
    def n_instances(self) -> int:
        return len(self.k_values) * len(self.rho_values) * len(self.n_values)


@dataclass(frozen=True)
class GridInstance:
    """One cell of the design grid: system parameters plus its rho label."""

    params: SystemParams
    rho: float

    @property
    def K(self) -> float:
        return self.params.K

    @property
    def epsilon(self) -> float:
        return self.params.epsilon

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def key(self) -> str:
        """Stable instance key, also the HDF5 group path."""
        return f"K{self.K!r}/rho{self.rho!r}/N{self.N}"


def build_grid(grid: DesignGrid) -> list[GridInstance]:
    """Cartesian product of the grid, ordered K-major, then rho, then N."""
    out = []
    for K in grid.k_values:
        for rho in grid.rho_values:
            for N in grid.n_values:
                params = SystemParams(K=K, epsilon=rho * K, N=N)
                out.append(GridInstance(params=params, rho=rho))
    return out


def instance_ic_seed(master_seed: int, instance: GridInstance, ic_index: int) -> int:
    """Trajectory seed derived from (master seed, K, rho, N, IC index)."""
    return derive_seed(master_seed, "K", instance.K, "rho", instance.rho,
                       "N", instance.N, "ic", ic_index)


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/val/test IC index sets covering ``0 .. n_ics-1``."""

    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    split_seed: int

    def __post_init__(self):
        all_idx = self.train + self.val + self.test
        if len(set(all_idx)) != len(all_idx):
            raise ValueError("split sets must be disjoint")
        if set(all_idx) != set(range(len(all_idx))):
            raise ValueError("split sets must cover 0 .. n_ics-1 exactly")

    @property
    def n_ics(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)


def default_split_ratios(n_ics: int) -> tuple[int, int, int]:
    """70/10/20 proportions scaled to ``n_ics`` (remainder goes to test)."""
    train = n_ics * 70 // 100
    val = n_ics * 10 // 100
    return train, val, n_ics - train - val


def split_ics(n_ics: int, ratios: tuple[int, int, int], split_seed: int) -> SplitSpec:
    """Seeded random partition of IC indices into train/val/test."""
    n_train, n_val, n_test = ratios
    if n_train + n_val + n_test != n_ics:
        raise ValueError(f"ratios {ratios} do not sum to n_ics={n_ics}")
    rng = make_rng(derive_seed(split_seed, "ic-split", n_ics))
    perm = rng.permutation(n_ics)
    return SplitSpec(
        train=tuple(sorted(int(i) for i in perm[:n_train])),
        val=tuple(sorted(int(i) for i in perm[n_train:n_train + n_val])),
        test=tuple(sorted(int(i) for i in perm[n_train + n_val:])),
        split_seed=split_seed,
    )


@dataclass(frozen=True)
class NormStats:
    """Per-column z-score parameters, fitted on train trajectories only.

    One (mean, std) pair per trajectory column, i.e. per node and
    channel; stds are floored at :data:`STD_FLOOR` so constant columns
    normalize to zero instead of blowing up.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).copy()
        std = np.asarray(self.std, dtype=np.float64).copy()
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be 1-d arrays of equal length")
        if (std < STD_FLOOR).any():
            raise ValueError(f"std entries must be >= {STD_FLOOR}")
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


def fit_normalization(train_states: Iterable[np.ndarray]) -> NormStats:
    """Fit per-column mean/std over all timesteps of all train trajectories."""
    count = 0
    total = None
    total_sq = None
    for states in train_states:
        states = np.asarray(states, dtype=np.float64)
        if total is None:
            total = np.zeros(states.shape[1])
            total_sq = np.zeros(states.shape[1])
        total += states.sum(axis=0)
        total_sq += (states * states).sum(axis=0)
        count += states.shape[0]
    if count == 0:
        raise ValueError("fit_normalization requires at least one trajectory")
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return NormStats(mean=mean, std=std)


def apply_normalization(data: np.ndarray, stats: NormStats) -> np.ndarray:
    """z-score ``data`` column-wise: ``(x - mean) / std``."""
    return (np.asarray(data, dtype=np.float64) - stats.mean) / stats.std


def invert_normalization(data: np.ndarray, stats: NormStats) -> np.ndarray:
    """Invert :func:`apply_normalization`: ``z * std + mean``."""
    return np.asarray(data, dtype=np.float64) * stats.std + stats.mean


@dataclass(frozen=True)
class WindowSet:
    """Supervised (context, target) windows cut from one trajectory.

    ``contexts`` has shape ``(n, L, 2N)`` and ``targets`` ``(n, H, 2N)``;
    window ``i`` starts at trajectory row ``i * stride``.
    """

    contexts: np.ndarray
    targets: np.ndarray
    length: int
    horizon: int
    stride: int

    def __post_init__(self):
        if self.contexts.shape[0] != self.targets.shape[0]:
            raise ValueError("contexts and targets must pair up")
        if self.contexts.shape[1] != self.length:
            raise ValueError("context rows must equal the configured length")
        if self.targets.shape[1] != self.horizon:
            raise ValueError("target rows must equal the configured horizon")

    @property
    def n(self) -> int:
        return self.contexts.shape[0]


def make_windows(states: np.ndarray, length: int = 48, horizon: int = 12,
                 stride: int = 12) -> WindowSet:
    """Cut sliding windows from a single trajectory's ``(T, 2N)`` array.

    Offsets run ``0, stride, 2*stride, ...`` while the full
    ``length + horizon`` block still fits; windows never cross
    trajectory boundaries because they are cut per trajectory.
    """
    states = np.asarray(states, dtype=np.float64)
    T = states.shape[0]
    if stride < 1 or length < 1 or horizon < 1:
        raise ValueError("length, horizon, and stride must be >= 1")
    if T < length + horizon:
        raise ValueError(
            f"trajectory of length {T} too short for L={length}, H={horizon}")
    offsets = np.arange(0, T - length - horizon + 1, stride)
    ctx_idx = offsets[:, None] + np.arange(length)[None, :]
    tgt_idx = offsets[:, None] + length + np.arange(horizon)[None, :]
    return WindowSet(contexts=states[ctx_idx], targets=states[tgt_idx],
                     length=length, horizon=horizon, stride=stride)


def generate_instance_arrays(instance: GridInstance, n_ics: int,
                             master_seed: int, *, transient: int = 1000,
                             record: int = 10000,
                             lyapunov_horizon: int = 10000,
                             screen_horizon: int = 1000,
                             with_diagnostics: bool = True,
                             chunk_size: int = 32):
    """Generate one instance in memory.

    Returns ``(states, seeds, diagnostics)`` where ``states`` has shape
    ``(n_ics, record, 2N)`` and ``diagnostics`` is a list of
    :class:`OrbitDiagnostics` (or ``None`` when skipped).  Orbits are
    simulated in batches; per-orbit results are bit-identical to
    one-at-a-time generation.
    """
    if n_ics < 1:
        raise ValueError("n_ics must be >= 1")
    N = instance.N
    params = instance.params
    states = np.empty((n_ics, record, 2 * N))
    seeds = [instance_ic_seed(master_seed, instance, i) for i in range(n_ics)]
    diags: list[OrbitDiagnostics] | None = [] if with_diagnostics else None
    for start in range(0, n_ics, chunk_size):
        idx = range(start, min(start + chunk_size, n_ics))
        q0 = np.empty((len(idx), N))
        p0 = np.empty((len(idx), N))
        for j, i in enumerate(idx):
            ic = sample_ic(seeds[i], N)
            q0[j] = ic.q
            p0[j] = ic.p
        states[idx.start:idx.stop] = simulate_batch(q0, p0, params,
                                                    transient, record)
        if with_diagnostics:
            lam = lyapunov_max_batch(
                q0, p0, params, transient, lyapunov_horizon,
                [derive_seed(seeds[i], "benettin-deviation") for i in idx])
            sali, steps, _ = sali_classify_batch(
                q0, p0, params, screen_horizon, transient,
                [derive_seed(seeds[i], "sali-deviation") for i in idx])
            for j in range(len(idx)):
                diags.append(OrbitDiagnostics(
                    lambda_max=float(lam[j]),
                    sali_final=float(sali[j]),
                    sali_steps=int(steps[j]),
                    orbit_class=classify_sali(float(sali[j]))))
    return states, seeds, diags


class TrajectoryStore:
    """HDF5 container for benchmark trajectories.

    Layout: one dataset per trajectory at ``/K{K}/rho{rho}/N{N}/ic{i}``,
    shape ``(T, 2N)`` float64, gzip-compressed, with parameters, seed,
    and diagnostics stored as attributes.
    """

    def __init__(self, path, mode: str = "r"):
        self.path = str(path)
        self._file = h5py.File(path, mode)

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @staticmethod
    def group_path(instance: GridInstance) -> str:
        return instance.key

    def set_grid_metadata(self, grid: DesignGrid):
        root = self._file.attrs
        root["k_values"] = np.asarray(grid.k_values)
        root["rho_values"] = np.asarray(grid.rho_values)
        root["n_values"] = np.asarray(grid.n_values)
        root["ics_per_instance"] = grid.ics_per_instance
        root["master_seed"] = np.uint64(grid.master_seed)
        root["transient"] = grid.transient
        root["record"] = grid.record

    def write_trajectory(self, instance: GridInstance, ic_index: int,
                         states: np.ndarray, seed: int,
                         diag: OrbitDiagnostics, transient: int):
        path = f"{self.group_path(instance)}/ic{ic_index}"
        ds = self._file.create_dataset(
            path, data=np.asarray(states, dtype=np.float64),
            compression="gzip", compression_opts=4, shuffle=True,
            chunks=(min(states.shape[0], 2048), states.shape[1]),
            track_times=False)
        ds.attrs["K"] = instance.K
        ds.attrs["epsilon"] = instance.epsilon
        ds.attrs["rho"] = instance.rho
        ds.attrs["N"] = instance.N
        ds.attrs["seed"] = np.uint64(seed)
        ds.attrs["ic_index"] = ic_index
        ds.attrs["transient_discarded"] = transient
        ds.attrs["lambda_max"] = diag.lambda_max
        ds.attrs["sali_final"] = diag.sali_final
        ds.attrs["sali_steps"] = diag.sali_steps
        ds.attrs["orbit_class"] = diag.orbit_class

    def read_states(self, instance: GridInstance, ic_index: int) -> np.ndarray:
        return self._dataset(instance, ic_index)[...]

    def read_trajectory(self, instance: GridInstance, ic_index: int):
        """Load one trajectory and its diagnostics record."""
        ds = self._dataset(instance, ic_index)
        a = ds.attrs
        traj = Trajectory(states=ds[...], params=instance.params,
                          ic_index=int(a["ic_index"]), seed=int(a["seed"]),
                          transient_discarded=int(a["transient_discarded"]))
        diag = OrbitDiagnostics(lambda_max=float(a["lambda_max"]),
                                sali_final=float(a["sali_final"]),
                                sali_steps=int(a["sali_steps"]),
                                orbit_class=str(a["orbit_class"]))
        return traj, diag

    def _dataset(self, instance: GridInstance, ic_index: int) -> h5py.Dataset:
        path = f"{self.group_path(instance)}/ic{ic_index}"
        if path not in self._file:
            raise KeyError(f"no trajectory at {path}")
        return self._file[path]

    def instances(self) -> list[GridInstance]:
        """Discover stored instances, ordered K-major, then rho, then N."""
        found = []
        for k_name, k_grp in self._file.items():
            if not k_name.startswith("K"):
                continue
            for r_name, r_grp in k_grp.items():
                for n_name in r_grp:
                    K = float(k_name[1:])
                    rho = float(r_name[3:])
                    N = int(n_name[1:])
                    params = SystemParams(K=K, epsilon=rho * K, N=N)
                    found.append(GridInstance(params=params, rho=rho))
        found.sort(key=lambda g: (g.K, g.rho, g.N))
        return found

    def ic_indices(self, instance: GridInstance) -> list[int]:
        grp = self._file[self.group_path(instance)]
        return sorted(int(name[2:]) for name in grp)

    def load_instance(self, instance: GridInstance) -> dict[int, np.ndarray]:
        """All trajectories of one instance as ``{ic_index: (T, 2N)}``."""
        return {i: self.read_states(instance, i)
                for i in self.ic_indices(instance)}


def generate_instance(instance: GridInstance, n_ics: int, master_seed: int,
                      store: TrajectoryStore, *, transient: int = 1000,
                      record: int = 10000, lyapunov_horizon: int = 10000,
                      screen_horizon: int = 1000, chunk_size: int = 32):
    """Generate, diagnose, and persist all trajectories of one instance.

    Returns the diagnostics rows ``(instance_key, ic_index, diag)`` in
    IC order.  Writes are serialized through ``store``; the payloads
    depend only on the seeds, so regeneration is byte-identical.
    """
    states, seeds, diags = generate_instance_arrays(
        instance, n_ics, master_seed, transient=transient, record=record,
        lyapunov_horizon=lyapunov_horizon, screen_horizon=screen_horizon,
        chunk_size=chunk_size)
    rows = []
    for i in range(n_ics):
        store.write_trajectory(instance, i, states[i], seeds[i], diags[i],
                               transient)
        rows.append((instance.key, i, diags[i]))
    return rows


class GridConfigError(ValueError):
    """Raised for malformed grid configuration files."""


_GRID_KEYS = {
    "K_values": ("k_values", float),
    "rho_values": ("rho_values", float),
    "N_values": ("n_values", int),
    "ics_per_instance": ("ics_per_instance", int),
    "master_seed": ("master_seed", int),
    "transient": ("transient", int),
    "record": ("record", int),
}

_LIST_KEYS = {"K_values", "rho_values", "N_values"}


def parse_grid_config(path) -> DesignGrid:
    """Parse a flat ``key = value`` grid configuration file.

    Unknown keys and unparsable values raise :class:`GridConfigError`
    naming the offending key; keys left out fall back to the grid
    defaults.
    """
    overrides = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise GridConfigError(
                    f"line {lineno}: expected 'key = value', got {text!r}")
            key, _, value = text.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _GRID_KEYS:
                raise GridConfigError(f"unknown key {key!r} (line {lineno})")
            field_name, cast = _GRID_KEYS[key]
            try:
                if key in _LIST_KEYS:
                    parsed = tuple(cast(v.strip())
                                   for v in value.split(",") if v.strip())
                    if not parsed:
                        raise ValueError("empty list")
                else:
                    parsed = cast(value)
            except ValueError as exc:
                raise GridConfigError(
                    f"invalid value for key {key!r}: {value!r} ({exc})") from None
            overrides[field_name] = parsed
    try:
        return DesignGrid(**overrides)
    except ValueError as exc:
        raise GridConfigError(str(exc)) from None


def write_grid_config(grid: DesignGrid, path):
    """Write a grid back out in the flat key/value format."""
    lines = [
        "K_values = " + ", ".join(repr(k) for k in grid.k_values),
        "rho_values = " + ", ".join(repr(r) for r in grid.rho_values),
        "N_values = " + ", ".join(str(n) for n in grid.n_values),
        f"ics_per_instance = {grid.ics_per_instance}",
        f"master_seed = {grid.master_seed}",
        f"transient = {grid.transient}",
        f"record = {grid.record}",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
