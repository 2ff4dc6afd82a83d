"""Train Model_A, craft B'/C' against it, retrain on A+B+B'."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .candata import DataSplits, LabeledDataset, concat, save_dataset, stratified_kfold
from .forest import EnsembleModel, TrainReport, fit_model, save_model
from .zoo import BatchStats, ZooConfig, attack_batch, model_oracle

Clock = Callable[[], float]


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    model_kind: str = "RF"
    n_estimators: int | None = None  # None: library default for the kind
    model_params: dict = field(default_factory=dict)
    zoo: ZooConfig = ZooConfig()
    split_seed: int = 42
    model_seed: int = 0
    k: int = 5
    attack_c: bool = True

    def __post_init__(self):
        if self.k < 2:
            raise PipelineError("k must be >= 2")


@dataclass(frozen=True)
class PipelineArtifacts:
    splits: DataSplits
    model_a: EnsembleModel
    b_prime: LabeledDataset
    c_prime: LabeledDataset | None
    model_abb: EnsembleModel
    reports: dict[str, TrainReport]
    cv_scores: tuple[float, ...]
    attack_stats: dict[str, BatchStats]
    train_size_abb: int


def _fit(ds: LabeledDataset, cfg: PipelineConfig, clock: Clock):
    return fit_model(cfg.model_kind, ds, cfg.n_estimators, seed=cfg.model_seed, clock=clock,
                     **cfg.model_params)


def run_phase1_train_a(splits: DataSplits, cfg: PipelineConfig = PipelineConfig(),
                       clock: Clock = time.perf_counter):
    """Stratified k-fold CV on A (diagnostic only), then the final fit on all of A."""
    scores = []
    for train, val in stratified_kfold(splits.a, cfg.k, cfg.split_seed):
        model, _ = _fit(train, cfg, clock)
        scores.append(float(np.mean(model.predict(val.X) == val.y)))
    model_a, report = _fit(splits.a, cfg, clock)
    return model_a, report, tuple(scores)


def adversarial_set(stats: BatchStats, class_names) -> LabeledDataset:
    """Adversarial rows labeled with their source rows' true classes."""
    X = np.array([r.adversarial for r in stats.results]).reshape(len(stats.results), -1)
    y = np.array([r.true_class for r in stats.results], dtype=np.intp)
    return LabeledDataset(X, y, class_names)


def generate_adversarial(model: EnsembleModel, ds: LabeledDataset,
                         zoo_cfg: ZooConfig = ZooConfig(), clock: Clock = time.perf_counter):
    stats = attack_batch(model_oracle(model), list(zip(ds.X, ds.y)), zoo_cfg, clock=clock)
    return adversarial_set(stats, ds.class_names), stats


def run_phase2_generate_adv(model_a: EnsembleModel, splits: DataSplits,
                            zoo_cfg: ZooConfig = ZooConfig(), attack_c: bool = True,
                            clock: Clock = time.perf_counter):
    """One adversarial row per row of B (and C); failed attacks keep their final iterate."""
    b_prime, b_stats = generate_adversarial(model_a, splits.b, zoo_cfg, clock)
    if not attack_c:
        return b_prime, None, b_stats, None
    c_prime, c_stats = generate_adversarial(model_a, splits.c, zoo_cfg, clock)
    return b_prime, c_prime, b_stats, c_stats


def run_phase3_adv_training(splits: DataSplits, b_prime: LabeledDataset,
                            cfg: PipelineConfig = PipelineConfig(),
                            clock: Clock = time.perf_counter):
    """Fit on A + B + B'; returns the model, its report and the training-set size."""
    train = concat(splits.a, splits.b, b_prime)
    model, report = _fit(train, cfg, clock)
    return model, report, len(train)


def run_pipeline(splits: DataSplits, cfg: PipelineConfig = PipelineConfig(),
                 clock: Clock = time.perf_counter,
                 log: Callable[[str], None] | None = None) -> PipelineArtifacts:
    say = log or (lambda msg: None)
    say(f"phase 1: {cfg.model_kind} on A ({len(splits.a)} rows), {cfg.k}-fold CV")
    model_a, rep_a, cv = run_phase1_train_a(splits, cfg, clock)
    say(f"phase 2: ZOO against Model_A on B ({len(splits.b)}) and C ({len(splits.c)})")
    b_prime, c_prime, b_stats, c_stats = run_phase2_generate_adv(model_a, splits, cfg.zoo,
                                                                 cfg.attack_c, clock)
    say("phase 3: adversarial training on A+B+B'")
    model_abb, rep_abb, n_train = run_phase3_adv_training(splits, b_prime, cfg, clock)
    stats = {"b": b_stats}
    if c_stats is not None:
        stats["c"] = c_stats
    return PipelineArtifacts(splits, model_a, b_prime, c_prime, model_abb,
                             {"model_a": rep_a, "model_abb": rep_abb}, cv, stats, n_train)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    per_class: dict[str, ClassMetrics]


def evaluate_predictions(y_true, y_pred, class_names) -> Evaluation:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise PipelineError("cannot evaluate on an empty dataset")
    per_class = {}
    for k, name in enumerate(class_names):
        tp = int(np.sum((y_pred == k) & (y_true == k)))
        pred_k = int(np.sum(y_pred == k))
        true_k = int(np.sum(y_true == k))
        precision = tp / pred_k if pred_k else 0.0
        recall = tp / true_k if true_k else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[name] = ClassMetrics(precision, recall, f1, true_k)
    return Evaluation(float(np.mean(y_true == y_pred)), per_class)


def evaluate_model(model, ds: LabeledDataset) -> Evaluation:
    if len(ds) == 0:
        raise PipelineError("cannot evaluate on an empty dataset")
    return evaluate_predictions(ds.y, model.predict(ds.X), ds.class_names)


def evasion_rate(model, adv: LabeledDataset) -> float:
    """Share of adversarial rows the model misclassifies."""
    return 1.0 - evaluate_model(model, adv).accuracy


def write_manifest(path, entries: dict) -> None:
    """Flat ``key = value`` file, keys sorted."""
    lines = [f"{k} = {entries[k]}" for k in sorted(entries)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict[str, str]:
    out = {}
    for no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise PipelineError(f"{path}:{no}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def save_artifacts(art: PipelineArtifacts, out_dir) -> dict[str, Path]:
    """Models, B'/C' caches and metrics into ``out_dir``; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"model_a": out / "model_a.json", "model_abb": out / "model_abb.json",
             "b_prime": out / "b_prime.csv", "metrics": out / "metrics.txt"}
    save_model(art.model_a, paths["model_a"])
    save_model(art.model_abb, paths["model_abb"])
    save_dataset(art.b_prime, paths["b_prime"])
    if art.c_prime is not None:
        paths["c_prime"] = out / "c_prime.csv"
        save_dataset(art.c_prime, paths["c_prime"])
    write_manifest(paths["metrics"], pipeline_metrics(art))
    return paths


def pipeline_metrics(art: PipelineArtifacts) -> dict:
    m = {
        "cv_scores": ",".join(f"{s:.6g}" for s in art.cv_scores),
        "cv_mean": f"{np.mean(art.cv_scores):.6g}",
        "model_a.accuracy_b": f"{evaluate_model(art.model_a, art.splits.b).accuracy:.6g}",
        "model_a.accuracy_b_prime": f"{evaluate_model(art.model_a, art.b_prime).accuracy:.6g}",
        "model_a.fit_s": f"{art.reports['model_a'].fit_wall_time:.6g}",
        "model_abb.fit_s": f"{art.reports['model_abb'].fit_wall_time:.6g}",
        "model_abb.train_size": art.train_size_abb,
        "attack_b.success_rate": f"{art.attack_stats['b'].success_rate:.6g}",
        "attack_b.mean_queries": f"{art.attack_stats['b'].mean_queries:.6g}",
        "attack_b.wall_s": f"{art.attack_stats['b'].total_wall_time:.6g}",
    }
    if art.c_prime is not None:
        m["c_prime.evasion_model_a"] = f"{evasion_rate(art.model_a, art.c_prime):.6g}"
        m["c_prime.evasion_model_abb"] = f"{evasion_rate(art.model_abb, art.c_prime):.6g}"
    return m
