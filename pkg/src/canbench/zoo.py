"""Black-box zeroth-order (ZOO) evasion attack with coordinate-wise Adam.

The attacker only sees class probabilities. An oracle is any callable that
maps an ``(n, d)`` array of points in ``[0, 1]^d`` to an ``(n, K)`` array of
class probabilities; a query is one evaluated point, so a batch of ``n``
points costs ``n`` queries.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

PROB_FLOOR = 1e-12

Oracle = Callable[[np.ndarray], np.ndarray]
Clock = Callable[[], float]


class ZooError(ValueError):
    pass


@dataclass(frozen=True)
class ZooConfig:
    learning_rate: float = 0.1
    max_iter: int = 50
    variable_h: float = 0.2
    coord_batch: int = 10
    kappa: float = 0.0
    init_const: float = 1e-3
    clip_min: float = 0.0
    clip_max: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    abort_early: bool = True
    seed: int = 0

    def validate(self, dimension: int | None = None) -> None:
        if not self.learning_rate > 0:
            raise ZooError("learning_rate must be > 0")
        if not self.variable_h > 0:
            raise ZooError("variable_h must be > 0")
        if self.max_iter < 0:
            raise ZooError("max_iter must be >= 0")
        if self.kappa < 0:
            raise ZooError("kappa must be >= 0")
        if self.coord_batch < 1 or (dimension is not None and self.coord_batch > dimension):
            raise ZooError(f"coord_batch must be in 1..{dimension}")
        if not self.clip_min < self.clip_max:
            raise ZooError("empty clip box")


@dataclass(frozen=True)
class AdversarialExample:
    original: np.ndarray
    adversarial: np.ndarray
    true_class: int
    predicted_class_after: int
    success: bool
    queries: int
    wall_time: float
    l2_distortion: float
    iterations: int = 0


def attack_loss(probs, true_class: int, kappa: float = 0.0) -> float:
    """Untargeted hinge on log-probabilities: max(log p_t - max_{j!=t} log p_j, -kappa)."""
    return float(_attack_losses(np.asarray(probs, dtype=np.float64)[None, :],
                                true_class, kappa)[0])


def _attack_losses(probs: np.ndarray, true_class: int, kappa: float) -> np.ndarray:
    K = probs.shape[1]
    if not 0 <= true_class < K:
        raise ZooError(f"true_class {true_class} outside 0..{K - 1}")
    logp = np.log(np.clip(probs, PROB_FLOOR, 1.0))
    others = np.delete(logp, true_class, axis=1)
    return np.maximum(logp[:, true_class] - others.max(axis=1), -kappa)


def _objectives(points, probs, x0, true_class, c, kappa) -> np.ndarray:
    diff = points - x0
    return np.einsum("ij,ij->i", diff, diff) + c * _attack_losses(probs, true_class, kappa)


def zoo_objective(x, x0, oracle: Oracle, true_class: int, c: float, kappa: float = 0.0) -> float:
    """Squared L2 distortion plus ``c`` times the attack loss at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x.shape != x0.shape:
        raise ZooError(f"shape mismatch {x.shape} vs {x0.shape}")
    probs = np.atleast_2d(oracle(x[None, :]))
    return float(_objectives(x[None, :], probs, x0, true_class, c, kappa)[0])


def estimate_coord_gradient(objective: Callable[[np.ndarray], float], x, i: int, h: float,
                            lo: float = 0.0, hi: float = 1.0) -> float:
    """Central difference along coordinate ``i`` with box-clipped probes.

    Divides by the displacement actually realised after clipping.
    """
    if not h > 0:
        raise ZooError("h must be > 0")
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= i < x.shape[0]:
        raise ZooError(f"coordinate {i} outside 0..{x.shape[0] - 1}")
    plus = x.copy()
    minus = x.copy()
    plus[i] = min(x[i] + h, hi)
    minus[i] = max(x[i] - h, lo)
    return (objective(plus) - objective(minus)) / (plus[i] - minus[i])


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), np.zeros(n, dtype=np.int64))


def adam_coord_update(state, g, cfg: ZooConfig = ZooConfig()):
    """One bias-corrected Adam step per coordinate.

    ``state`` is ``(m, v, t)`` (scalars or equal-length arrays). Returns
    ``(delta, (m, v, t))``; inputs are not modified.
    """
    m, v, t = state
    g = np.asarray(g, dtype=np.float64)
    t = np.asarray(t) + 1
    m = cfg.adam_beta1 * np.asarray(m) + (1 - cfg.adam_beta1) * g
    v = cfg.adam_beta2 * np.asarray(v) + (1 - cfg.adam_beta2) * g * g
    m_hat = m / (1 - cfg.adam_beta1 ** t)
    v_hat = v / (1 - cfg.adam_beta2 ** t)
    delta = -cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    if delta.ndim == 0:
        return float(delta), (float(m), float(v), int(t))
    return delta, (m, v, t)


def zoo_attack(oracle: Oracle, x, y: int, cfg: ZooConfig = ZooConfig(),
               clock: Clock = time.perf_counter) -> AdversarialExample:
    """Untargeted ZOO-Adam attack on one input.

    Each iteration picks ``coord_batch`` distinct coordinates, spends two
    queries per coordinate on central differences, applies the Adam steps,
    clips to the box and checks the new iterate's label. The check reuses
    the previous answer when the iterate has not moved. Returns the
    lowest-distortion misclassified iterate, otherwise the final one.
    """
    t_start = clock()
    x0 = np.array(x, dtype=np.float64)
    if x0.ndim != 1:
        raise ZooError("x must be a single feature vector")
    d = x0.shape[0]
    cfg.validate(d)
    if np.any(x0 < cfg.clip_min) or np.any(x0 > cfg.clip_max):
        raise ZooError("x lies outside the clip box")

    queries = 0

    def query(points: np.ndarray) -> np.ndarray:
        nonlocal queries
        probs = np.atleast_2d(np.asarray(oracle(points), dtype=np.float64))
        queries += points.shape[0]
        if probs.shape[0] != points.shape[0]:
            raise ZooError("oracle returned wrong number of rows")
        return probs

    p0 = query(x0[None, :])[0]
    if not 0 <= y < p0.shape[0]:
        raise ZooError(f"true class {y} outside 0..{p0.shape[0] - 1}")
    label0 = int(np.argmax(p0))
    if label0 != y:
        return AdversarialExample(x0, x0.copy(), y, label0, True, queries,
                                  clock() - t_start, 0.0, 0)

    rng = np.random.default_rng(cfg.seed)
    c, kappa, h = cfg.init_const, cfg.kappa, cfg.variable_h
    lo, hi = cfg.clip_min, cfg.clip_max
    state = AdamState.zeros(d)
    xk = x0.copy()
    checked_x, checked_label = x0.copy(), label0
    best_x, best_label, best_dist = None, y, np.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        coords = rng.choice(d, size=cfg.coord_batch, replace=False)
        b = coords.size
        probes = np.repeat(xk[None, :], 2 * b, axis=0)
        rows = np.arange(b)
        probes[rows, coords] = np.minimum(xk[coords] + h, hi)
        probes[b + rows, coords] = np.maximum(xk[coords] - h, lo)
        loss = c * _attack_losses(query(probes), y, kappa)
        up, down = probes[rows, coords], probes[b + rows, coords]
        # The distortion term's difference quotient is (up + down - 2 x0), or
        # 2 (xk - x0) when neither probe was clipped. Written out so rounding
        # noise at xk == x0 does not reach Adam, which would rescale it to a
        # full step.
        unclipped = (up - xk[coords] == h) & (xk[coords] - down == h)
        dist_grad = np.where(unclipped, 2.0 * (xk[coords] - x0[coords]),
                             up + down - 2.0 * x0[coords])
        grad = (loss[:b] - loss[b:]) / (up - down) + dist_grad

        delta, (m, v, t) = adam_coord_update(
            (state.m[coords], state.v[coords], state.t[coords]), grad, cfg)
        state.m[coords], state.v[coords], state.t[coords] = m, v, t
        xk[coords] = np.clip(xk[coords] + delta, lo, hi)

        if not np.array_equal(xk, checked_x):
            checked_x = xk.copy()
            checked_label = int(np.argmax(query(checked_x[None, :])[0]))
        if checked_label != y:
            dist = float(np.linalg.norm(checked_x - x0))
            if dist < best_dist:
                best_x, best_label, best_dist = checked_x.copy(), checked_label, dist
            if cfg.abort_early:
                break

    if best_x is None:
        # failed: final iterate, whose label is the last check
        best_x, best_label = checked_x, checked_label
        best_dist = float(np.linalg.norm(best_x - x0))
    return AdversarialExample(x0, best_x, y, best_label, best_label != y, queries,
                              clock() - t_start, best_dist, it)


@dataclass(frozen=True)
class BatchStats:
    results: tuple[AdversarialExample, ...]
    success_rate: float
    mean_queries: float
    total_wall_time: float

    @property
    def total_queries(self) -> int:
        return sum(r.queries for r in self.results)

    @property
    def n_done(self) -> int:
        return len(self.results)


def batch_stats(results: Sequence[AdversarialExample]) -> BatchStats:
    results = tuple(results)
    if not results:
        return BatchStats((), 0.0, 0.0, 0.0)
    return BatchStats(results,
                      sum(r.success for r in results) / len(results),
                      sum(r.queries for r in results) / len(results),
                      sum(r.wall_time for r in results))


def attack_batch(oracle: Oracle, examples: Sequence[tuple[np.ndarray, int]],
                 cfg: ZooConfig = ZooConfig(),
                 stop: Callable[[int, AdversarialExample], bool] | None = None,
                 clock: Clock = time.perf_counter) -> BatchStats:
    """Attack ``examples`` in order, one after another.

    Example ``i`` uses seed ``cfg.seed + i``. ``stop(n_done, last)`` is
    consulted after every completed example; returning True ends the batch.
    """
    results = []
    for i, (x, y) in enumerate(examples):
        ex_cfg = dataclasses.replace(cfg, seed=cfg.seed + i)
        res = zoo_attack(oracle, x, int(y), ex_cfg, clock)
        results.append(res)
        if stop is not None and stop(len(results), res):
            break
    return batch_stats(results)


class CountingOracle:
    """Wraps an oracle and counts evaluated points."""

    def __init__(self, oracle: Oracle):
        self.oracle = oracle
        self.count = 0

    def __call__(self, points):
        points = np.atleast_2d(points)
        self.count += points.shape[0]
        return self.oracle(points)


def model_oracle(model, backend: str | None = None) -> Oracle:
    """Probability-only view of a fitted model."""
    def oracle(points):
        return np.atleast_2d(model.predict_proba(np.atleast_2d(points), backend))
    return oracle
