"""Command-line driver: train/eval/sweep/ood/flops/correlate.

Every command is deterministic given its config and seeds; CSV outputs are
semicolon-separated with '.' decimal points, UTF-8, LF line endings, and
floats printed in their shortest round-trip form, so golden files and
reruns are byte-stable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import Dataset, load_idx, synthetic_ood, synthetic_train_test
from .ensemble import (DeepEnsemble, SubEnsemble, TrainConfig, combine,
                       load_ensemble, member_probabilities, predict,
                       save_ensemble, train_deep_ensemble, train_sub_ensemble)
from .errors import (ConfigurationError, DataFormatError, NumericalError,
                     TrainingError)
from .metrics import (calibration_curve, entropy_rows, evaluate,
                      evaluate_probabilities, roc_auc)
from .network import NetworkSpec, init_params, parse_spec, split
from .perf import ensemble_flops, flops_report
from .presets import ARCH_BUILDERS, blob_cnn, build_arch, split_index

OUT_DIR_ENV = "SUBENS_OUT_DIR"

SYNTH_DEFAULTS = {
    "classes": 4,
    "size": 12,
    "per_class": 200,
    "test_per_class": 100,
    "noise": 1.0,
    "seed": 12345,  # independent of --seed so reruns vary training, not data
}

_stage = ["startup"]


def _set_stage(name: str) -> None:
    _stage[0] = name


@dataclass
class RunConfig:
    arch: str = "blobs"
    split: str = "SE-1"
    members: str = "5"
    mode: str = "sub"
    seed: int = 1
    runs: int = 10
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    data_idx: str | None = None
    test_idx: str | None = None
    synthetic: str | None = None
    ood_kind: str = "shuffled_pixels"
    bins: int = 10
    out_dir: str | None = None
    csv: str | None = None
    load: str | None = None
    timing: bool = False

    @classmethod
    def from_sources(cls, file_values: dict | None, cli_values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        merged: dict = {}
        if file_values:
            unknown = set(file_values) - known
            if unknown:
                raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
            merged.update(file_values)
        merged.update({k: v for k, v in cli_values.items() if k in known and v is not None})
        return cls(**merged)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.momentum)


def parse_members(text: str) -> list[int]:
    """Member counts: '5', '1:15' (inclusive range) or '1,5,10'."""
    text = str(text).strip()
    try:
        if ":" in text:
            lo, hi = (int(p) for p in text.split(":"))
            values = list(range(lo, hi + 1))
        else:
            values = [int(p) for p in text.split(",")]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse member counts from {text!r}") from exc
    values = sorted(set(values))
    if not values or values[0] < 1:
        raise ConfigurationError(f"member counts must be >= 1, got {text!r}")
    return values


def parse_synthetic(text: str | None) -> dict:
    params = dict(SYNTH_DEFAULTS)
    for item in (text or "").split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ConfigurationError(f"synthetic params expect key=value, got {item!r}")
        key, value = item.split("=", 1)
        if key not in params:
            raise ConfigurationError(
                f"unknown synthetic param {key!r}; known: {sorted(params)}")
        params[key] = float(value) if key == "noise" else int(value)
    return params


def resolve_arch(cfg: RunConfig, synth: dict) -> NetworkSpec:
    name = cfg.arch
    if name == "blobs":
        return blob_cnn(image_size=synth["size"], num_classes=synth["classes"])
    if name in ARCH_BUILDERS:
        return build_arch(name)
    path = Path(name)
    if path.exists():
        return parse_spec(path.read_text(encoding="utf-8"))
    raise ConfigurationError(
        f"--arch {name!r} is neither a preset ({sorted(ARCH_BUILDERS)}) nor a spec file")


def resolve_data(cfg: RunConfig, synth: dict, need_test: bool = True):
    _set_stage("loading data")
    if cfg.data_idx:
        try:
            images_path, labels_path = cfg.data_idx.split(",")
        except ValueError as exc:
            raise ConfigurationError("--data-idx expects 'images_path,labels_path'") from exc
        train = load_idx(images_path, labels_path)
        test = None
        if cfg.test_idx:
            try:
                ti, tl = cfg.test_idx.split(",")
            except ValueError as exc:
                raise ConfigurationError("--test-idx expects 'images_path,labels_path'") from exc
            test = load_idx(ti, tl, num_classes=train.num_classes, split="test",
                            norm_stats=train.norm_stats)
        if need_test and test is None:
            raise ConfigurationError("this command needs --test-idx alongside --data-idx")
        return train, test
    train, test = synthetic_train_test(
        synth["classes"], synth["size"], synth["per_class"], synth["test_per_class"],
        synth["noise"], synth["seed"])
    return train, test


def build_ensemble(cfg: RunConfig, spec: NetworkSpec, train: Dataset, n: int,
                   seed: int | None = None):
    _set_stage(f"training ({cfg.mode} ensemble, n={n})")
    seed = cfg.seed if seed is None else seed
    if cfg.mode == "sub":
        k = split_index(cfg.arch, cfg.split)
        return train_sub_ensemble(train, spec, split(spec, k), n, cfg.train_config(), seed)
    if cfg.mode == "deep":
        return train_deep_ensemble(train, spec, n, cfg.train_config(), seed)
    raise ConfigurationError(f"--mode must be 'sub' or 'deep', got {cfg.mode!r}")


def out_dir(cfg: RunConfig) -> Path:
    directory = Path(cfg.out_dir or os.environ.get(OUT_DIR_ENV, "."))
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def format_value(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path: Path, header: list[str], rows) -> None:
    _set_stage(f"writing {path}")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(";".join(header) + "\n")
        for row in rows:
            f.write(";".join(format_value(v) for v in row) + "\n")
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(cfg: RunConfig) -> int:
    synth = parse_synthetic(cfg.synthetic)
    spec = resolve_arch(cfg, synth)
    train, _ = resolve_data(cfg, synth, need_test=False)
    ns = parse_members(cfg.members)
    if len(ns) != 1:
        raise ConfigurationError("train expects a single member count, not a sweep")
    ensemble = build_ensemble(cfg, spec, train, ns[0])
    directory = out_dir(cfg)
    _set_stage(f"writing checkpoint to {directory}")
    save_ensemble(ensemble, directory)
    print(f"trained {cfg.mode} ensemble with {ns[0]} member(s); checkpoint in {directory}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    synth = parse_synthetic(cfg.synthetic)
    if cfg.load:
        _set_stage(f"loading checkpoint {cfg.load}")
        ensemble = load_ensemble(cfg.load)
        _, test = resolve_data(cfg, synth, need_test=True)
    else:
        spec = resolve_arch(cfg, synth)
        train, test = resolve_data(cfg, synth, need_test=True)
        ns = parse_members(cfg.members)
        ensemble = build_ensemble(cfg, spec, train, max(ns))
    _set_stage("evaluating")
    report = evaluate(ensemble, test)
    print(f"error: {report.error_percent:.4f}%")
    print(f"nll: {report.nll:.6f}")
    print(f"mean entropy: {report.mean_entropy:.6f}")
    if cfg.csv:
        write_csv(out_dir(cfg) / cfg.csv, ["error", "nll", "mean_entropy"],
                  [(report.error_percent, report.nll, report.mean_entropy)])
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    synth = parse_synthetic(cfg.synthetic)
    spec = resolve_arch(cfg, synth)
    train, test = resolve_data(cfg, synth, need_test=True)
    ns = parse_members(cfg.members)
    ensemble = build_ensemble(cfg, spec, train, max(ns))
    _set_stage("evaluating sweep points")
    probs = member_probabilities(ensemble, test.images)
    k = split_index(cfg.arch, cfg.split)
    split_point = split(spec, k)
    rows = []
    for n in ns:
        report = evaluate_probabilities(combine(probs, n), test.labels)
        flops = ensemble_flops(spec, split_point, n, cfg.mode)
        rows.append((n, report.error_percent, report.nll, flops))
    write_csv(out_dir(cfg) / (cfg.csv or f"sweep_{cfg.mode}.csv"),
              ["num_ensembles", "error", "nll", "flops"], rows)
    return 0


def cmd_correlate(cfg: RunConfig) -> int:
    """Multi-run study of initial-model vs ensemble quality (sub mode only)."""
    if cfg.mode != "sub":
        raise ConfigurationError("correlate studies sub-ensembles; use --mode sub")
    synth = parse_synthetic(cfg.synthetic)
    spec = resolve_arch(cfg, synth)
    train, test = resolve_data(cfg, synth, need_test=True)
    ns = parse_members(cfg.members)
    stem = Path(cfg.csv).stem if cfg.csv else "correlate"
    directory = out_dir(cfg)
    for r in range(cfg.runs):
        ensemble = build_ensemble(cfg, spec, train, max(ns), seed=cfg.seed + r)
        _set_stage(f"evaluating run {r}")
        probs = member_probabilities(ensemble, test.images)
        base = evaluate_probabilities(combine(probs, 1), test.labels)
        rows = []
        for n in ns:
            report = evaluate_probabilities(combine(probs, n), test.labels)
            rows.append((base.error_percent, base.nll, report.error_percent, report.nll))
        write_csv(directory / f"{stem}-run{r}.csv",
                  ["base_error", "base_nll", "error", "nll"], rows)
    return 0


def cmd_ood(cfg: RunConfig) -> int:
    synth = parse_synthetic(cfg.synthetic)
    spec = resolve_arch(cfg, synth)
    train, test = resolve_data(cfg, synth, need_test=True)
    ood = synthetic_ood(test, cfg.ood_kind, synth["seed"])
    ns = parse_members(cfg.members)
    ensemble = build_ensemble(cfg, spec, train, max(ns))
    _set_stage("evaluating OOD detection")
    probs_id = member_probabilities(ensemble, test.images)
    probs_ood = member_probabilities(ensemble, ood.images)
    stem = Path(cfg.csv).stem if cfg.csv else "ood"
    directory = out_dir(cfg)
    summary = []
    for n in ns:
        id_probs = combine(probs_id, n)
        report = evaluate_probabilities(id_probs, test.labels)
        ent_id = entropy_rows(id_probs)
        ent_ood = entropy_rows(combine(probs_ood, n))
        scores = np.concatenate([ent_id, ent_ood])
        flags = np.r_[np.zeros(len(ent_id), dtype=bool), np.ones(len(ent_ood), dtype=bool)]
        roc = roc_auc(scores, flags)
        curve = calibration_curve(report.confidence, report.correct, cfg.bins)
        write_csv(directory / f"{stem}-calibration-n{n}.csv", ["conf", "acc"],
                  [(b.mean_confidence, b.accuracy) for b in curve.bins if b.count])
        write_csv(directory / f"{stem}-roc-n{n}.csv", ["fpr", "tpr"],
                  list(zip(roc.fpr, roc.tpr)))
        summary.append((n, roc.auc, float(ent_id.mean()), float(ent_ood.mean())))
    write_csv(directory / f"{stem}-summary.csv",
              ["num_ensembles", "auc", "id_entropy", "ood_entropy"], summary)
    return 0


def cmd_flops(cfg: RunConfig) -> int:
    synth = parse_synthetic(cfg.synthetic)
    spec = resolve_arch(cfg, synth)
    k = split_index(cfg.arch, cfg.split)
    split_point = split(spec, k)
    ns = parse_members(cfg.members)
    _set_stage("computing cost model")
    report = flops_report(spec, split_point, ns)
    print(f"single model: {report.single_model_flops} FLOPs "
          f"(trunk {report.trunk_flops}, task {report.task_flops})")
    write_csv(out_dir(cfg) / (cfg.csv or "speedup.csv"),
              ["num_ensembles", "speedup"], [(r.n, r.speedup) for r in report.rows])
    if cfg.timing:
        _measure_wall_clock(spec, split_point, max(ns))
    return 0


def _measure_wall_clock(spec: NetworkSpec, split_point, n: int, batch: int = 8) -> None:
    """Optional rough wall-clock check of the analytic model (no acceptance weight)."""
    k = split_point.index
    sub = SubEnsemble(spec, split_point, init_params(spec, 0, (0, k)),
                      [init_params(spec, i + 1, (k, len(spec.layers))) for i in range(n)])
    deep = DeepEnsemble(spec, [init_params(spec, 1000 + i) for i in range(n)])
    x = np.zeros((batch, *spec.input_shape))
    predict(sub, x), predict(deep, x)  # warm up
    t_sub = min(_timed(lambda: predict(sub, x)) for _ in range(3))
    t_deep = min(_timed(lambda: predict(deep, x)) for _ in range(3))
    print(f"wall-clock (batch {batch}, n={n}): deep {t_deep * 1e3:.2f} ms, "
          f"sub {t_sub * 1e3:.2f} ms, measured ratio {t_deep / t_sub:.2f}")


def _timed(fn) -> float:
    start = time.perf_counter()
    fn()
    return time.perf_counter() - start


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ood": cmd_ood,
    "flops": cmd_flops,
    "correlate": cmd_correlate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; explicit flags override it")
    common.add_argument("--arch", help="architecture preset (blobs, mnist) or spec file path")
    common.add_argument("--split", help="split preset (SE-1, SE-2) or explicit layer index")
    common.add_argument("--members", help="member count: N, lo:hi, or comma list")
    common.add_argument("--mode", choices=["sub", "deep"], help="ensemble flavor")
    common.add_argument("--seed", type=int, help="master training seed")
    common.add_argument("--runs", type=int, help="number of repeated runs (correlate)")
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int, dest="batch_size")
    common.add_argument("--learning-rate", type=float, dest="learning_rate")
    common.add_argument("--momentum", type=float)
    common.add_argument("--data-idx", dest="data_idx",
                        help="train IDX pair: 'images_path,labels_path'")
    common.add_argument("--test-idx", dest="test_idx",
                        help="test IDX pair: 'images_path,labels_path'")
    common.add_argument("--synthetic", nargs="?", const="",
                        help="synthetic data params, e.g. 'classes=4,size=12,"
                             "per_class=200,test_per_class=100,noise=1.0,seed=12345'")
    common.add_argument("--ood-kind", dest="ood_kind",
                        choices=["uniform_noise", "shuffled_pixels"])
    common.add_argument("--bins", type=int, help="calibration bin count")
    common.add_argument("--out-dir", dest="out_dir",
                        help=f"output directory (default ${OUT_DIR_ENV} or '.')")
    common.add_argument("--csv", help="output CSV file name (or prefix for ood/correlate)")
    common.add_argument("--load", help="checkpoint directory to evaluate (eval)")
    common.add_argument("--timing", action="store_const", const=True,
                        help="also measure wall-clock inference time (flops)")

    parser = argparse.ArgumentParser(
        prog="subens",
        description="Train and analyze trunk-sharing sub-ensembles vs deep ensembles.")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("train", parents=[common], help="train an ensemble and checkpoint it")
    commands.add_parser("eval", parents=[common], help="evaluate error/NLL/entropy")
    commands.add_parser("sweep", parents=[common],
                        help="error/NLL/FLOPs as the member count varies")
    commands.add_parser("ood", parents=[common],
                        help="entropy-based OOD detection: ROC, AUC, calibration")
    commands.add_parser("flops", parents=[common], help="analytic FLOPs and speedup table")
    commands.add_parser("correlate", parents=[common],
                        help="multi-run initial-model vs ensemble correlation study")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_stage("configuration")
    try:
        file_values = None
        if args.config:
            with open(args.config, encoding="utf-8") as f:
                file_values = json.load(f)
        cfg = RunConfig.from_sources(file_values, vars(args))
        return COMMANDS[args.command](cfg)
    except (ConfigurationError, DataFormatError, TrainingError, NumericalError,
            OSError, json.JSONDecodeError) as exc:
        print(f"error in {_stage[0]}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
