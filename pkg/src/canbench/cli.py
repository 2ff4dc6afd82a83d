"""``canbench`` command line: synth, prepare, train, attack, pipeline, sweep, report.

Precedence is flag > ``--config`` file (``key = value`` lines) > default.
Exit codes: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, _kernels
from .bench import (DEFAULT_BUDGET_S, DEFAULT_GRID, DEFAULT_N_TARGET, REFERENCE_HARDWARE,
                    TIMING_BACKEND, FakeClock, run_at_time_sweep, run_attack_time_sweep)
from .candata import (DEFAULT_CLASSES, CanDataError, LabeledDataset, SyntheticConfig,
                      generate_synthetic, load_dataset, parse_otids_log, save_dataset,
                      split_dataset)
from .forest import KINDS, ForestError, fit_model, load_model, save_model
from .pipeline import (PipelineConfig, evaluate_model, generate_adversarial, pipeline_metrics,
                       read_manifest, run_phase1_train_a, run_pipeline, save_artifacts,
                       write_manifest)
from .report import SweepTable, emit_impact_report, emit_svg_plot, emit_sweep_csv, \
    parse_sweep_csv
from .zoo import ZooConfig

log = logging.getLogger("canbench")

COMMANDS = ("synth", "prepare", "train", "attack", "pipeline", "sweep", "report")
EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    out: str = "canbench-out"
    config: str | None = None
    seed: int = 0
    split_seed: int = 42
    # data
    dataset: str | None = None
    logs: list[str] = field(default_factory=list)
    classes: tuple[str, ...] = DEFAULT_CLASSES
    n: int = 1000
    separation: float = 4.0
    include_remote: bool = False
    # model
    model: str = "RF"
    n_estimators: int | None = None
    model_file: str | None = None
    k: int = 5
    # attack
    zoo: ZooConfig = ZooConfig()
    skip_c: bool = False
    # sweep
    grid: tuple[int, ...] = DEFAULT_GRID
    budget_s: float = DEFAULT_BUDGET_S
    n_target: int = DEFAULT_N_TARGET
    at: bool = False
    backend: str = TIMING_BACKEND
    fake_clock_step: float | None = None
    # report
    impact: bool = False
    impact_format: str = "text"
    from_csv: str | None = None
    plot_kind: str = "attack-time"


def parse_grid(text: str) -> tuple[int, ...]:
    """``start:stop:step`` (stop always included) or a comma list."""
    text = str(text).strip()
    try:
        if ":" in text:
            start, stop, step = (int(p) for p in text.split(":"))
            if step < 1 or stop < start:
                raise CliError(f"bad grid range {text!r}")
            values = list(range(start, stop + 1, step))
            if values[-1] != stop:
                values.append(stop)
        else:
            values = [int(p) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise CliError(f"bad grid {text!r}") from exc
    if not values or values[0] < 1 or any(b <= a for a, b in zip(values, values[1:])):
        raise CliError(f"grid {text!r} must be increasing and >= 1")
    return tuple(values)


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off", ""):
        return False
    raise CliError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text in (None, "", "None", "default") else int(text)


def _opt_float(text):
    return None if text in (None, "", "None") else float(text)


# key -> (converter, where): where is "run" or "zoo"
KEYS = {
    "out": (str, "run"), "seed": (int, "run"), "split_seed": (int, "run"),
    "dataset": (str, "run"), "n": (int, "run"), "separation": (float, "run"),
    "classes": (lambda s: tuple(c.strip() for c in str(s).split(",") if c.strip()), "run"),
    "model": (lambda s: str(s).upper(), "run"), "n_estimators": (_opt_int, "run"),
    "model_file": (str, "run"), "k": (int, "run"), "skip_c": (_bool, "run"),
    "include_remote": (_bool, "run"),
    "grid": (parse_grid, "run"), "budget_s": (float, "run"), "n_target": (int, "run"),
    "at": (_bool, "run"), "backend": (str, "run"), "fake_clock_step": (_opt_float, "run"),
    "impact": (_bool, "run"), "impact_format": (str, "run"), "from_csv": (str, "run"),
    "plot_kind": (str, "run"),
    "learning_rate": (float, "zoo"), "max_iter": (int, "zoo"), "variable_h": (float, "zoo"),
    "coord_batch": (int, "zoo"), "kappa": (float, "zoo"), "init_const": (float, "zoo"),
    "abort_early": (_bool, "zoo"), "zoo_seed": (int, "zoo"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="canbench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"canbench {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    def common(sp):
        sp.add_argument("--config", help="key = value file; flags override it")
        sp.add_argument("--out", help="output directory (default $CANBENCH_OUT or ./canbench-out)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--split-seed", type=int)
        sp.add_argument("--dataset", help="dataset cache file (synthetic data if omitted)")
        sp.add_argument("--n", type=int, help="synthetic dataset size")
        sp.add_argument("--separation", type=float, help="synthetic class separation")
        sp.add_argument("--classes", help="comma-separated class list")

    def model(sp):
        sp.add_argument("--model", type=str.upper, choices=KINDS)
        sp.add_argument("--n-estimators", type=int, help="trees (RF) or rounds (GB/XGB)")
        sp.add_argument("--k", type=int, help="cross-validation folds")

    def zoo(sp):
        sp.add_argument("--learning-rate", type=float)
        sp.add_argument("--max-iter", type=int)
        sp.add_argument("--variable-h", type=float)
        sp.add_argument("--coord-batch", type=int)
        sp.add_argument("--kappa", type=float)
        sp.add_argument("--init-const", type=float)
        sp.add_argument("--abort-early", type=_bool)
        sp.add_argument("--zoo-seed", type=int)

    sp = sub.add_parser("synth", help="generate a synthetic labeled CAN dataset")
    common(sp)

    sp = sub.add_parser("prepare", help="parse OTIDS logs into a dataset cache")
    common(sp)
    sp.add_argument("--log", action="append", dest="logs", metavar="PATH:LABEL",
                    help="OTIDS log and the traffic label of the whole file (repeatable)")
    sp.add_argument("--include-remote", action="store_const", const=True,
                    help="add the remote-frame bit as an eleventh feature")

    sp = sub.add_parser("train", help="fit Model_A with k-fold CV")
    common(sp)
    model(sp)

    sp = sub.add_parser("attack", help="craft B' against Model_A")
    common(sp)
    model(sp)
    zoo(sp)
    sp.add_argument("--model-file", help="attack this saved model instead of training one")

    sp = sub.add_parser("pipeline", help="train / attack / adversarially retrain")
    common(sp)
    model(sp)
    zoo(sp)
    sp.add_argument("--skip-c", action="store_const", const=True, help="do not craft C'")

    sp = sub.add_parser("sweep", help="attack-time (and AT-time) sweep over ensemble size")
    common(sp)
    model(sp)
    zoo(sp)
    sp.add_argument("--grid", help="start:stop:step (inclusive) or comma list")
    sp.add_argument("--budget-s", type=float, help="attack budget per grid value")
    sp.add_argument("--n-target", type=int, help="workload to extrapolate to")
    sp.add_argument("--at", action="store_const", const=True, help="also sweep AT time")
    sp.add_argument("--backend", choices=sorted(_kernels.backends()),
                    help="kernel the timed oracle runs on")
    sp.add_argument("--fake-clock-step", type=float,
                    help="deterministic clock advancing this much per reading")

    sp = sub.add_parser("report", help="impact table or plots from a sweep CSV")
    common(sp)
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--impact", action="store_const", const=True)
    grp.add_argument("--from-csv", help="re-render the SVG plot of a sweep CSV")
    sp.add_argument("--impact-format", choices=("text", "csv"))
    sp.add_argument("--plot-kind", choices=("attack-time", "at-time"))
    return p


def parse_cli(argv: Sequence[str], env: dict | None = None) -> RunConfig:
    env = os.environ if env is None else env
    parser = build_parser()
    ns = parser.parse_args(list(argv))
    if ns.command is None:
        raise CliError(f"no command given\n{parser.format_usage()}")
    cfg = RunConfig(command=ns.command)
    if env.get("CANBENCH_OUT"):
        cfg.out = env["CANBENCH_OUT"]
    values: dict = {}
    if getattr(ns, "config", None):
        path = Path(ns.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}")
        for key, raw in read_manifest(path).items():
            if key in KEYS:
                values[key] = KEYS[key][0](raw)
            elif not key.startswith(("meta.", "command")):
                raise CliError(f"{path}: unknown key {key!r}")
        cfg.config = str(path)
    for key, val in vars(ns).items():
        if key in ("command", "config") or val is None:
            continue
        values[key] = KEYS[key][0](val) if key in KEYS and key != "logs" else val
    zoo_changes = {}
    for key, val in values.items():
        if key == "logs":
            cfg.logs = list(val)
        elif KEYS[key][1] == "zoo":
            zoo_changes["seed" if key == "zoo_seed" else key] = val
        else:
            setattr(cfg, key, val)
    cfg.zoo = dataclasses.replace(cfg.zoo, **zoo_changes)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.model not in KINDS:
        raise CliError(f"unknown model {cfg.model!r}")
    try:
        cfg.zoo.validate()
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if cfg.command == "prepare" and not cfg.logs:
        raise CliError("prepare needs at least one --log PATH:LABEL")
    if cfg.command == "report" and not (cfg.impact or cfg.from_csv):
        raise CliError("report needs --impact or --from-csv")
    if cfg.budget_s <= 0:
        raise CliError("--budget-s must be > 0")
    if cfg.n_estimators is not None and cfg.n_estimators < 0:
        raise CliError("--n-estimators must be >= 0")
    for path in (cfg.dataset, cfg.model_file, cfg.from_csv):
        if path and not Path(path).is_file():
            raise CliError(f"file not found: {path}")


# commands --------------------------------------------------------------------

def _dataset(cfg: RunConfig) -> LabeledDataset:
    if cfg.dataset:
        return load_dataset(cfg.dataset)
    return generate_synthetic(SyntheticConfig(cfg.n, len(cfg.classes), cfg.separation, cfg.seed,
                                              cfg.classes))


def _pipeline_cfg(cfg: RunConfig) -> PipelineConfig:
    return PipelineConfig(cfg.model, cfg.n_estimators, {}, cfg.zoo, cfg.split_seed, cfg.seed,
                          cfg.k, not cfg.skip_c)


def _clock(cfg: RunConfig):
    return FakeClock(tick=cfg.fake_clock_step) if cfg.fake_clock_step else time.perf_counter


def cmd_synth(cfg, out: Path, meta: dict) -> None:
    ds = _dataset(cfg)
    save_dataset(ds, out / "dataset.csv")
    meta["meta.rows"] = len(ds)


def cmd_prepare(cfg, out: Path, meta: dict) -> None:
    frames = []
    for item in cfg.logs:
        path, sep, label = item.rpartition(":")
        if not sep or not path:
            raise CliError(f"--log expects PATH:LABEL, got {item!r}")
        if label not in cfg.classes:
            raise CliError(f"label {label!r} not in class list {cfg.classes}")
        if not Path(path).is_file():
            raise CliError(f"log file not found: {path}")
        with open(path, encoding="ascii", errors="replace") as fh:
            frames.extend(parse_otids_log(fh, label))
    ds = LabeledDataset.from_frames(frames, cfg.classes, cfg.include_remote)
    save_dataset(ds, out / "dataset.csv")
    meta["meta.rows"] = len(ds)


def cmd_train(cfg, out: Path, meta: dict) -> None:
    splits = split_dataset(_dataset(cfg), seed=cfg.split_seed)
    model_a, report, cv = run_phase1_train_a(splits, _pipeline_cfg(cfg))
    save_model(model_a, out / "model_a.json")
    ev = evaluate_model(model_a, splits.b)
    write_manifest(out / "metrics.txt", {
        "cv_scores": ",".join(f"{s:.6g}" for s in cv), "accuracy_b": f"{ev.accuracy:.6g}",
        "training_accuracy": f"{report.training_accuracy:.6g}"})
    meta["meta.fit_s.model_a"] = f"{report.fit_wall_time:.6g}"


def cmd_attack(cfg, out: Path, meta: dict) -> None:
    splits = split_dataset(_dataset(cfg), seed=cfg.split_seed)
    if cfg.model_file:
        model_a = load_model(cfg.model_file)
    else:
        model_a, _, _ = run_phase1_train_a(splits, _pipeline_cfg(cfg))
        save_model(model_a, out / "model_a.json")
    b_prime, stats = generate_adversarial(model_a, splits.b, cfg.zoo)
    save_dataset(b_prime, out / "b_prime.csv")
    write_manifest(out / "attack_stats.txt", {
        "n": stats.n_done, "success_rate": f"{stats.success_rate:.6g}",
        "mean_queries": f"{stats.mean_queries:.6g}", "total_queries": stats.total_queries,
        "accuracy_b": f"{evaluate_model(model_a, splits.b).accuracy:.6g}",
        "accuracy_b_prime": f"{evaluate_model(model_a, b_prime).accuracy:.6g}"})
    meta["meta.attack_wall_s"] = f"{stats.total_wall_time:.6g}"


def cmd_pipeline(cfg, out: Path, meta: dict) -> None:
    splits = split_dataset(_dataset(cfg), seed=cfg.split_seed)
    art = run_pipeline(splits, _pipeline_cfg(cfg), log=log.info)
    save_artifacts(art, out)
    meta["meta.fit_s.model_a"] = f"{art.reports['model_a'].fit_wall_time:.6g}"
    meta["meta.fit_s.model_abb"] = f"{art.reports['model_abb'].fit_wall_time:.6g}"
    log.info("metrics: %s", pipeline_metrics(art))


def cmd_sweep(cfg, out: Path, meta: dict) -> None:
    splits = split_dataset(_dataset(cfg), seed=cfg.split_seed)
    kind = cfg.model
    stem = kind.lower()
    common = {"model": kind, "budget_s": cfg.budget_s, "n_target": cfg.n_target,
              "grid": ",".join(map(str, cfg.grid)), "hardware": platform.processor() or
              platform.machine(), "seed": cfg.seed, "backend": cfg.backend}

    def progress(rec):
        log.info("%s %s=%d: n_done=%d elapsed=%.3gs est_total=%.6gs", rec.model_kind,
                 rec.param, rec.value, rec.n_done, rec.elapsed, rec.est_total)

    records, _ = run_attack_time_sweep(splits, kind, cfg.grid, cfg.zoo, cfg.budget_s,
                                       cfg.n_target, _clock(cfg), cfg.seed, progress=progress,
                                       backend=cfg.backend)
    table = SweepTable.from_records(records, "attack-time", **common)
    emit_sweep_csv(table, out / f"sweep_{stem}_attack.csv")
    emit_svg_plot(table, "attack-time", out / f"sweep_{stem}_attack.svg")
    if table.fit:
        meta["meta.attack_fit"] = (f"slope={table.fit.slope:.6g} "
                                   f"intercept={table.fit.intercept:.6g} r2={table.fit.r2:.6g}")
    if cfg.at:
        b_primes = {}
        for value in cfg.grid:
            model_a, _ = fit_model(kind, splits.a, value, seed=cfg.seed)
            b_primes[value], _ = generate_adversarial(model_a, splits.b, cfg.zoo)
        at_records, _ = run_at_time_sweep(splits, b_primes, kind, cfg.grid, _clock(cfg),
                                          cfg.seed)
        at_table = SweepTable.from_records(at_records, "at-time", **common)
        emit_sweep_csv(at_table, out / f"sweep_{stem}_at.csv")
        emit_svg_plot(at_table, "at-time", out / f"sweep_{stem}_at.svg")
        if at_table.fit:
            meta["meta.at_fit"] = (f"slope={at_table.fit.slope:.6g} "
                                   f"intercept={at_table.fit.intercept:.6g} "
                                   f"r2={at_table.fit.r2:.6g}")


def cmd_report(cfg, out: Path, meta: dict) -> None:
    if cfg.impact:
        name = "impact.csv" if cfg.impact_format == "csv" else "impact.txt"
        emit_impact_report(out / name, cfg.impact_format)
        return
    text = Path(cfg.from_csv).read_text()
    records, _ = parse_sweep_csv(text)
    table = SweepTable.from_records(records, cfg.plot_kind)
    emit_svg_plot(table, cfg.plot_kind, out / (Path(cfg.from_csv).stem + ".svg"))


HANDLERS = {"synth": cmd_synth, "prepare": cmd_prepare, "train": cmd_train,
            "attack": cmd_attack, "pipeline": cmd_pipeline, "sweep": cmd_sweep,
            "report": cmd_report}


def manifest_entries(cfg: RunConfig) -> dict:
    """Replayable config keys plus ``meta.*`` provenance."""
    entries = {"command": cfg.command}
    for key, (_, where) in KEYS.items():
        if where == "zoo":
            val = getattr(cfg.zoo, "seed" if key == "zoo_seed" else key)
        else:
            val = getattr(cfg, key)
        if val is None or key in ("out",):
            continue
        if key == "grid" or key == "classes":
            val = ",".join(map(str, val))
        elif key == "dataset":
            val = str(Path(val).resolve())
        elif key == "from_csv" or key == "model_file":
            val = str(Path(val).resolve())
        entries[key] = val
    entries.update({
        "meta.version": __version__, "meta.kernel_backend": _kernels.BACKEND,
        "meta.python": platform.python_version(), "meta.numpy": np.__version__,
        "meta.hardware": platform.processor() or platform.machine(),
        "meta.reference_hardware": REFERENCE_HARDWARE,
    })
    return entries


def run_command(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = manifest_entries(cfg)
    t0 = time.perf_counter()
    HANDLERS[cfg.command](cfg, out, meta)
    meta["meta.wall_s"] = f"{time.perf_counter() - t0:.6g}"
    write_manifest(out / "manifest.txt", meta)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_cli(argv)
        return run_command(cfg)
    except (CliError, CanDataError, ForestError, ValueError, OSError) as exc:
        print(f"canbench: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"canbench: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
