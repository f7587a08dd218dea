"""Coupled standard map lattice benchmark: simulation, datasets, evaluation.

The package regenerates a controlled forecasting benchmark from first
principles: a ring of coupled standard maps swept over kick strength,
coupling-to-chaos ratio, and lattice size, with per-orbit chaos
diagnostics, IC-based splits, autoregressive rollout evaluation, and
paired nonparametric model comparison.
"""

from .comparison import (ComparisonReport, CrossoverResult, InstanceScore,
                         PairedComparison, RegimeCell, WilcoxonResult,
                         WinTable, crossover_threshold, fractional_wins,
                         mcnemar_exact, regime_report, wilcoxon_signed_rank)
from .dataset import (DesignGrid, GridInstance, NormStats, SplitSpec,
                      TrajectoryStore, WindowSet, apply_normalization,
                      build_grid, fit_normalization, generate_instance,
                      generate_instance_arrays, instance_ic_seed,
                      invert_normalization, make_windows, split_ics)
from .dynamics import (LatticeState, RingAdjacency, SystemParams, Trajectory,
                       jacobian, ring_adjacency, sample_ic, simulate,
                       simulate_batch, step, step_arrays, tangent_arrays)
from .evaluation import (DEFAULT_ROLLOUT_CAP, VALIDITY_MSE_THRESHOLD,
                         VPT_NRMSE_THRESHOLD, InstanceResult, RolloutResult,
                         evaluate_instance, nrmse_at_step, rollout, seed_mean,
                         vpt)
from .forecasters import (BUILTIN_MODELS, ClimatologyForecaster, Forecaster,
                          ForecasterError, ForecastRequest, ForecastResponse,
                          InstanceContext, OracleForecaster,
                          PersistenceForecaster, RidgeForecaster,
                          make_forecaster)
from .indicators import (OrbitDiagnostics, RegimeSummary, classify_sali,
                         diagnose_orbit, lyapunov_max, regime_stats,
                         sali_classify)
from .seeds import derive_seed, make_rng

__version__ = "0.1.0"
