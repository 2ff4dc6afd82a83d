"""Acceptance criteria AC1-AC11, one test each.

Every test prints a single ``AC<n> PASS|FAIL  <detail>`` line (shown even
under output capture) before asserting. Run directly for a summary:

    python3 tests/test_acceptance.py
"""

import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canbench.bench import (DEFAULT_N_TARGET, FakeClock, extrapolate_total_time,
                            fit_linear_regression, measure_attack_throughput, run_at_time_sweep,
                            run_attack_time_sweep)
from canbench.candata import (FULL_SCALE_ADV_SET_SIZE, FULL_SCALE_DATASET_SIZE, _allocate,
                              _check_ratios)
from canbench.cli import parse_cli
from canbench.forest import fit_model
from canbench.pipeline import (PipelineConfig, evaluate_model, evasion_rate, generate_adversarial,
                               run_pipeline)
from canbench.zoo import ZooConfig, adam_coord_update, estimate_coord_gradient

from conftest import make_ds
from test_candata import check_folds, check_partition
from test_report import check_svg_structure
from test_zoo import attack_cases, check_attack_invariants

SWEEP_GRID = list(range(5, 51, 5))
BUDGET_S = 2.0
PROPERTY_CASES = 1000


@pytest.fixture
def verdict(capsys):
    def emit(ac, ok, detail):
        with capsys.disabled():
            print(f"\n{ac} {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"{ac}: {detail}"
    return emit


@pytest.fixture(scope="module")
def sweeps(splits):
    """Attack-time sweeps shared by AC1-AC3."""
    assert (len(splits.a), len(splits.b)) == (600, 200)
    return {kind: run_attack_time_sweep(splits, kind, SWEEP_GRID, ZooConfig(), BUDGET_S,
                                        DEFAULT_N_TARGET)
            for kind in ("RF", "GB", "XGB")}


def fit_line(fit):
    return f"slope={fit.slope:.4g} s/estimator  intercept={fit.intercept:.4g} s  R2={fit.r2:.3f}"


@pytest.mark.slow
def test_ac1_rf_attack_time_linear(sweeps, verdict):
    _, fit = sweeps["RF"]
    verdict("AC1", fit.slope > 0 and fit.r2 >= 0.90, "RF " + fit_line(fit) + "  (need R2>=0.90)")


@pytest.mark.slow
def test_ac2_gb_attack_time_linear(sweeps, verdict):
    _, fit = sweeps["GB"]
    verdict("AC2", fit.slope > 0 and fit.r2 >= 0.85, "GB " + fit_line(fit) + "  (need R2>=0.85)")


@pytest.mark.slow
def test_ac3_xgb_observational(sweeps, verdict):
    records, fit = sweeps["XGB"]
    ok = len(records) == len(SWEEP_GRID) and 0.0 <= fit.r2 <= 1.0
    verdict("AC3", ok, "XGB " + fit_line(fit) + "  (reported, no linearity assertion)")


@pytest.mark.slow
def test_ac4_cost_grows_10_to_80(splits, verdict):
    parts, ok = [], True
    for kind in ("RF", "GB"):
        records, _ = run_attack_time_sweep(splits, kind, [10, 80], ZooConfig(), BUDGET_S,
                                           DEFAULT_N_TARGET)
        t10, t80 = records[0].est_total, records[1].est_total
        ok &= t80 > t10
        parts.append(f"{kind}: {t10:.4g}s@10 -> {t80:.4g}s@80")
    verdict("AC4", ok, "; ".join(parts))


@pytest.mark.slow
def test_ac5_at_time_trend(splits, verdict):
    parts, ok = [], True
    for kind in ("RF", "GB"):
        b_primes = {}
        for value in SWEEP_GRID:
            model_a, _ = fit_model(kind, splits.a, value, seed=0)
            b_primes[value], _ = generate_adversarial(model_a, splits.b, ZooConfig())
        records, fit = run_at_time_sweep(splits, b_primes, kind, SWEEP_GRID)
        assert all(len(splits.a) + len(splits.b) + len(b_primes[v]) == 1000 for v in SWEEP_GRID)
        ok &= fit.slope > 0
        parts.append(f"{kind} slope={fit.slope:.4g} s/estimator R2={fit.r2:.3f}")
    verdict("AC5", ok, "; ".join(parts) + "  (|A+B+B'|=1000)")


@pytest.fixture(scope="module")
def pipelines(splits):
    return {kind: run_pipeline(splits, PipelineConfig(model_kind=kind))
            for kind in ("RF", "GB", "XGB")}


@pytest.mark.slow
def test_ac6_attack_and_adversarial_training_efficacy(pipelines, splits, verdict):
    parts, ok = [], True
    for kind, art in pipelines.items():
        acc_b = evaluate_model(art.model_a, splits.b).accuracy
        acc_bp = evaluate_model(art.model_a, art.b_prime).accuracy
        ev_a = evasion_rate(art.model_a, art.c_prime)
        ev_abb = evasion_rate(art.model_abb, art.c_prime)
        ok &= (acc_b - acc_bp >= 0.20) and ev_abb < ev_a
        parts.append(f"{kind}: acc B {acc_b:.3f} -> B' {acc_bp:.3f} "
                     f"(drop {100 * (acc_b - acc_bp):.1f}pp); C' evasion "
                     f"Model_A {ev_a:.3f} vs Model_ABB {ev_abb:.3f}")
    verdict("AC6", ok, "; ".join(parts))


def test_ac7_estimator_and_adam(verdict):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(1, 12))
        A = rng.normal(size=(d, d))
        Q = A @ A.T
        b = rng.normal(size=d)
        f = lambda v: float(v @ Q @ v + b @ v)
        x = rng.random(d) * 0.6 + 0.2
        i = int(rng.integers(d))
        h = float(rng.uniform(1e-3, 0.2))
        est = estimate_coord_gradient(f, x, i, h)
        worst = max(worst, abs(est - (2 * Q[i] @ x + b[i])))
    delta, _ = adam_coord_update((0.0, 0.0, 0), 1.0, ZooConfig(learning_rate=0.1))
    ok = worst <= 1e-9 and abs(delta + 0.1) <= 1e-9
    verdict("AC7", ok, f"max |estimate - analytic| = {worst:.2e}; Adam first step {delta:.12f}")


@pytest.mark.slow
def test_ac8_cardinalities(pipelines, splits, verdict):
    art = pipelines["RF"]
    full = _allocate([FULL_SCALE_DATASET_SIZE], _check_ratios((0.6, 0.2, 0.2)))[0].tolist()
    cfg = parse_cli(["sweep"], env={})
    ok = (len(art.b_prime) == len(splits.b)
          and art.train_size_abb == len(splits.a) + 2 * len(splits.b)
          and FULL_SCALE_ADV_SET_SIZE == 92270 == cfg.n_target == DEFAULT_N_TARGET
          and FULL_SCALE_DATASET_SIZE == 461350
          and full == [276810, 92270, 92270]
          and full[0] + 2 * full[1] == FULL_SCALE_DATASET_SIZE)
    verdict("AC8", ok, f"|B'|={len(art.b_prime)}=|B|; |train ABB|={art.train_size_abb}; "
                       f"full-scale split {full}, default n_target {cfg.n_target}")


def test_ac9_fake_clock_harness(splits, verdict):
    model, _ = fit_model("RF", splits.a, 1)
    clock = FakeClock()

    def one_second_attack(oracle, x, y, cfg):
        clock.advance(1.0)

    examples = list(zip(splits.b.X, splits.b.y)) * 2
    n, elapsed = measure_attack_throughput(model, examples, 300.0, clock=clock,
                                           attack=one_second_attack)
    est = extrapolate_total_time(n, elapsed, 92270)
    verdict("AC9", (n, elapsed, est) == (300, 300.0, 92270.0),
            f"(n_done, elapsed, estimate) = ({n}, {elapsed}, {est})")


def test_ac10_ols_fixtures(verdict):
    fixtures = [([(0, 0), (1, 2), (2, 4)], (2, 0, 1)),
                ([(0, 5), (1, 5), (2, 5)], (0, 5, 1)),
                ([(0, 0), (1, 1), (2, 0)], (0, 1 / 3, 0))]
    errs = []
    for pts, expected in fixtures:
        f = fit_linear_regression(pts)
        errs.append(max(abs(a - b) for a, b in zip((f.slope, f.intercept, f.r2), expected)))
    verdict("AC10", max(errs) <= 1e-9, f"max abs error over 3 fixtures = {max(errs):.1e}")


# AC11: property suites at >= 1000 cases each -------------------------------------------

counts: dict[str, int] = {}


def counted(name):
    counts[name] = counts.get(name, 0) + 1


@given(st.sampled_from(["RF", "GB", "XGB"]), st.integers(0, 2**32 - 1), st.integers(2, 4),
       st.integers(1, 3))
@settings(max_examples=PROPERTY_CASES)
def prop_normalization(kind, seed, k, n_est):
    counted("probability normalization")
    rng = np.random.default_rng(seed)
    y = np.concatenate([np.arange(k), rng.integers(0, k, 8)])
    ds = make_ds(rng.random((y.size, 3)), y)
    m, _ = fit_model(kind, ds, n_est, seed=seed)
    p = m.predict_proba(rng.random((10, 3)) * 2 - 0.5)
    assert np.all(p >= 0) and np.allclose(p.sum(axis=1), 1.0, atol=1e-9, rtol=0)


@given(attack_cases)
@settings(max_examples=PROPERTY_CASES)
def prop_box(case):
    counted("adversarial box containment")
    check_attack_invariants(case)


@given(st.lists(st.integers(3, 40), min_size=1, max_size=4), st.integers(0, 2**32 - 1))
@settings(max_examples=PROPERTY_CASES)
def prop_split(class_counts, seed):
    counted("split partition")
    check_partition(class_counts, seed)


@given(st.integers(2, 6).flatmap(
    lambda k: st.tuples(st.just(k), st.lists(st.integers(k, 30), min_size=1, max_size=4))),
    st.integers(0, 2**32 - 1))
@settings(max_examples=PROPERTY_CASES)
def prop_folds(k_counts, seed):
    counted("fold partition")
    check_folds(k_counts[1], k_counts[0], seed)


@given(st.lists(st.tuples(st.integers(1, 200), st.floats(0, 1e6)), min_size=0, max_size=12,
                unique_by=lambda t: t[0]))
@settings(max_examples=PROPERTY_CASES)
def prop_csv_svg(points):
    counted("CSV/SVG structure")
    from canbench.bench import SweepRecord
    from canbench.report import SweepTable, parse_sweep_csv, sweep_csv_text
    records = [SweepRecord("RF", "n_trees", v, 1, 1.0, y) for v, y in points]
    table = SweepTable.from_records(records)
    text = sweep_csv_text(table)
    assert text == sweep_csv_text(table) and text.count("\n") == len(points) + 1
    assert len(parse_sweep_csv(text)[0]) == len(points)
    if points:
        check_svg_structure(points)


def test_ac11_property_suites(verdict):
    counts.clear()
    for prop in (prop_normalization, prop_box, prop_split, prop_folds, prop_csv_svg):
        prop()
    ok = len(counts) == 5 and min(counts.values()) >= PROPERTY_CASES
    verdict("AC11", ok, "; ".join(f"{k}: {v} cases" for k, v in counts.items()))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
