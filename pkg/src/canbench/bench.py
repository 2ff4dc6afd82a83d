"""Attack-time and adversarial-training-time measurement, sweeps and OLS trends.

All timing goes through an injected clock so tests can drive it with
:class:`FakeClock` and get exact, machine-independent numbers.
"""

from __future__ import annotations

import dataclasses
import itertools
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .candata import FULL_SCALE_ADV_SET_SIZE, DataSplits, LabeledDataset, concat
from .forest import EnsembleModel, fit_model
from .zoo import ZooConfig, model_oracle, zoo_attack

DEFAULT_BUDGET_S = 300.0
DEFAULT_N_TARGET = FULL_SCALE_ADV_SET_SIZE
DEFAULT_GRID = (1,) + tuple(range(5, 106, 5))
REFERENCE_HARDWARE = "AMD Ryzen 5 2600, 16 GB RAM"

# Oracle kernel for timed attacks. The NumPy backend pays a per-tree cost on
# every query, like the reference libraries' per-estimator predict path; the
# compiled backend makes ensemble size nearly free (see README).
TIMING_BACKEND = "python"

PARAM_NAME = {"RF": "n_trees", "GB": "n_rounds", "XGB": "n_rounds"}

Clock = Callable[[], float]


class BenchError(ValueError):
    pass


class FakeClock:
    """Deterministic clock: ``tick`` seconds pass on every reading, plus ``advance``."""

    def __init__(self, start: float = 0.0, tick: float = 0.0):
        self.now = float(start)
        self.tick = float(tick)

    def __call__(self) -> float:
        t = self.now
        self.now += self.tick
        return t

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise BenchError("clocks do not run backwards")
        self.now += seconds


@dataclass(frozen=True)
class SweepRecord:
    model_kind: str
    param: str
    value: int
    n_done: int
    elapsed: float
    est_total: float
    at_time: float | None = None


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    r2: float
    n_points: int

    def predict(self, x):
        return self.slope * np.asarray(x, dtype=np.float64) + self.intercept


def measure_attack_throughput(model: EnsembleModel, examples: Sequence[tuple[np.ndarray, int]],
                              budget: float, zoo_cfg: ZooConfig = ZooConfig(),
                              clock: Clock = time.perf_counter, attack=zoo_attack,
                              cycle: bool = True, n_jobs: int = 1,
                              backend: str | None = TIMING_BACKEND) -> tuple[int, float]:
    """Attack examples one at a time until the elapsed time reaches ``budget``.

    The attack in flight when the budget expires completes and counts. With
    ``cycle`` the examples are revisited when exhausted (desk-scale sets are
    smaller than a budget's worth of attacks). ``attack`` is injectable for
    testing; it is called as ``attack(oracle, x, y, cfg)``. ``backend`` names
    the kernel the victim oracle runs on.
    """
    if not budget > 0:
        raise BenchError("budget must be > 0")
    if len(examples) == 0:
        raise BenchError("no examples to attack")
    if n_jobs != 1:
        raise BenchError("timing runs are single-threaded; n_jobs must be 1")
    oracle = model_oracle(model, backend)
    source = itertools.cycle(enumerate(examples)) if cycle else enumerate(examples)
    n_done = 0
    elapsed = 0.0
    start = clock()
    for i, (x, y) in source:
        attack(oracle, x, int(y), dataclasses.replace(zoo_cfg, seed=zoo_cfg.seed + i))
        n_done += 1
        elapsed = clock() - start
        if elapsed >= budget:
            break
    return n_done, elapsed


def extrapolate_total_time(n_done: int, elapsed: float, n_target: int = DEFAULT_N_TARGET) -> float:
    if n_done < 1:
        raise BenchError("nothing completed; cannot extrapolate")
    if not elapsed > 0:
        raise BenchError("elapsed must be > 0")
    if n_target < 1:
        raise BenchError("n_target must be >= 1")
    return elapsed * n_target / n_done


def fit_linear_regression(points: Sequence[tuple[float, float]]) -> RegressionFit:
    """Closed-form OLS with R^2.

    R^2 is 1 when y is constant up to rounding noise (relative spread below 1e-12).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    if len(np.unique(x)) < 2:
        raise BenchError("need at least two distinct x values")
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    slope = float(np.dot(dx, dy) / np.dot(dx, dx))
    intercept = float(ym - slope * xm)
    ss_tot = float(np.dot(dy, dy))
    resid = y - (slope * x + intercept)
    ss_res = float(np.dot(resid, resid))
    flat = ss_tot <= len(y) * (1e-12 * max(1.0, float(np.abs(y).max()))) ** 2
    r2 = 1.0 if flat else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RegressionFit(slope, intercept, r2, len(pts))


def _check_grid(grid: Sequence[int]) -> list[int]:
    grid = [int(v) for v in grid]
    if not grid:
        raise BenchError("empty grid")
    if grid[0] < 1 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise BenchError("grid must be strictly increasing and >= 1")
    return grid


def _fit_for(kind: str, ds: LabeledDataset, value: int, seed: int, clock: Clock, params):
    return fit_model(kind, ds, value, seed=seed, clock=clock, **(params or {}))


def run_attack_time_sweep(splits: DataSplits, model_kind: str, grid: Sequence[int],
                          zoo_cfg: ZooConfig = ZooConfig(), budget: float = DEFAULT_BUDGET_S,
                          n_target: int = DEFAULT_N_TARGET, clock: Clock = time.perf_counter,
                          seed: int = 0, model_params: Mapping | None = None,
                          attack=zoo_attack, progress: Callable[[SweepRecord], None] | None = None,
                          backend: str | None = TIMING_BACKEND
                          ) -> tuple[list[SweepRecord], RegressionFit]:
    """Fit Model_A per grid value, time attacks on B, extrapolate to ``n_target``."""
    kind = model_kind.upper()
    grid = _check_grid(grid)
    examples = list(zip(splits.b.X, splits.b.y))
    records = []
    for value in grid:
        model, _ = _fit_for(kind, splits.a, value, seed, time.perf_counter, model_params)
        n_done, elapsed = measure_attack_throughput(model, examples, budget, zoo_cfg, clock,
                                                    attack, backend=backend)
        rec = SweepRecord(kind, PARAM_NAME[kind], value, n_done, elapsed,
                          extrapolate_total_time(n_done, elapsed, n_target))
        records.append(rec)
        if progress:
            progress(rec)
    fit = fit_linear_regression([(r.value, r.est_total) for r in records]) \
        if len(records) >= 2 else RegressionFit(0.0, records[0].est_total, 1.0, 1)
    return records, fit


def run_at_time_sweep(splits: DataSplits,
                      b_prime: LabeledDataset | Mapping[int, LabeledDataset],
                      model_kind: str, grid: Sequence[int], clock: Clock = time.perf_counter,
                      seed: int = 0, model_params: Mapping | None = None,
                      progress: Callable[[SweepRecord], None] | None = None
                      ) -> tuple[list[SweepRecord], RegressionFit]:
    """Time the adversarial-training fit on A+B+B' for each grid value.

    ``b_prime`` is either one adversarial set or a mapping grid value -> set
    (B' crafted against the Model_A of that value).
    """
    kind = model_kind.upper()
    grid = _check_grid(grid)
    records = []
    for value in grid:
        bp = b_prime[value] if isinstance(b_prime, Mapping) else b_prime
        train = concat(splits.a, splits.b, bp)
        _, report = _fit_for(kind, train, value, seed, clock, model_params)
        rec = SweepRecord(kind, PARAM_NAME[kind], value, 0, 0.0, 0.0, report.fit_wall_time)
        records.append(rec)
        if progress:
            progress(rec)
    fit = fit_linear_regression([(r.value, r.at_time) for r in records]) \
        if len(records) >= 2 else RegressionFit(0.0, records[0].at_time, 1.0, 1)
    return records, fit
