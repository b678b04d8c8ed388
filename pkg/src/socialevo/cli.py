"""Command-line wiring: generate, train, predict, evaluate, sweep.

Every run is reproducible from (config file, seed): all randomness flows
from the config seed, every artifact carries a format tag, and input dataset
directories are never written to. Exit codes: 0 success, 2 configuration,
3 I/O, 4 numeric/training failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import graphmetrics
from .egpt import (
    CapacityError, ConfigError as ModelConfigError, load_checkpoint, rollout,
    save_checkpoint,
)
from .features import (
    FeatureMatrix, binarize_adjacency, build_sequence, decode_feature_matrix,
    renormalize_engagement, renormalize_rows, snap_demographic_block,
)
from .numerics import NumericsError
from .synthgen import (
    DEFAULT_CITIES, FormatError, GeneratorConfig, HomophilyWeights,
    ParameterError, generate_dataset, load_dataset, save_dataset, save_snapshot,
)
from .trainer import Hyperparams, TrainingError, evaluate_links, sweep, train

CONFIG_FORMAT = "socialevo-config/1"
REPORT_FORMAT = "socialevo-train-report/1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class CliConfigError(ValueError):
    """A run-config field failed validation."""


@dataclass
class RunConfig:
    seed: int = 42
    dataset: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: dict = field(default_factory=lambda: dict(
        hidden_dim=64, layers=4, heads=4, dropout=0.1))
    trainer: Hyperparams = field(default_factory=Hyperparams)
    sweep: list = field(default_factory=list)


def default_config_dict():
    """Full defaults, including the six-cell reference sweep grid."""
    return {
        "format": CONFIG_FORMAT,
        "seed": 42,
        "dataset": {
            "users": 500,
            "steps": 10,
            "degree_start": 10,
            "degree_end": None,
            "drift": 0.05,
            "homophily": {"occupation": 2.0, "location": 1.0, "age": 1.0, "triangle": 0.5},
            "cities": list(DEFAULT_CITIES),
            "post_budget": 2000,
        },
        "model": {"hidden_dim": 64, "layers": 4, "heads": 4, "dropout": 0.1},
        "trainer": {
            "batch_size": 32, "learning_rate": 2e-3, "iterations": 100,
            "threshold": 0.5, "optimizer": "adam",
        },
        "sweep": [
            {"batch_size": 32, "learning_rate": 1e-3, "hidden_dim": 64, "layers": 4, "dropout": 0.1},
            {"batch_size": 32, "learning_rate": 2e-3, "hidden_dim": 64, "layers": 4, "dropout": 0.1},
            {"batch_size": 32, "learning_rate": 3e-2, "hidden_dim": 64, "layers": 8, "dropout": 0.3},
            {"batch_size": 64, "learning_rate": 1e-3, "hidden_dim": 64, "layers": 4, "dropout": 0.1},
            {"batch_size": 64, "learning_rate": 2e-3, "hidden_dim": 64, "layers": 4, "dropout": 0.3},
            {"batch_size": 64, "learning_rate": 3e-2, "hidden_dim": 64, "layers": 8, "dropout": 0.3},
        ],
    }


def _take(section, mapping, allowed):
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise CliConfigError(f"{section}: unknown field(s) {sorted(unknown)}")
    return mapping


def parse_config(doc):
    """Validate a config document field by field and build a RunConfig."""
    if not isinstance(doc, dict):
        raise CliConfigError("config root must be an object")
    if doc.get("format", CONFIG_FORMAT) != CONFIG_FORMAT:
        raise CliConfigError(f"unknown config format {doc.get('format')!r}")
    merged = default_config_dict()
    for section in ("seed", "dataset", "model", "trainer", "sweep"):
        if section in doc:
            if isinstance(merged.get(section), dict) and isinstance(doc[section], dict):
                merged[section].update(doc[section])
            else:
                merged[section] = doc[section]
    _take("config", doc, {"format", "seed", "dataset", "model", "trainer", "sweep"})

    ds = _take("dataset", merged["dataset"],
               {"users", "steps", "degree_start", "degree_end", "drift",
                "homophily", "cities", "post_budget"})
    hw = _take("dataset.homophily", ds.get("homophily", {}),
               {"occupation", "location", "age", "triangle"})
    try:
        gen = GeneratorConfig(
            users=int(ds["users"]), steps=int(ds["steps"]),
            degree_start=int(ds["degree_start"]),
            degree_end=None if ds["degree_end"] is None else int(ds["degree_end"]),
            drift=float(ds["drift"]),
            homophily=HomophilyWeights(**{k: float(v) for k, v in hw.items()}),
            cities=tuple(ds["cities"]),
            post_budget=int(ds["post_budget"]),
        )
        gen.validate()
    except ParameterError as exc:
        raise CliConfigError(f"dataset: {exc}") from exc

    model = _take("model", merged["model"], {"hidden_dim", "layers", "heads", "dropout"})
    tr = _take("trainer", merged["trainer"],
               {"batch_size", "learning_rate", "iterations", "threshold", "optimizer"})
    if not 0.0 < float(tr["threshold"]) < 1.0:
        raise CliConfigError(f"trainer.threshold must be in (0, 1), got {tr['threshold']}")
    hp = Hyperparams(
        batch_size=int(tr["batch_size"]), learning_rate=float(tr["learning_rate"]),
        hidden_dim=int(model["hidden_dim"]), layers=int(model["layers"]),
        dropout=float(model["dropout"]), iterations=int(tr["iterations"]),
        heads=int(model["heads"]), optimizer=str(tr["optimizer"]),
        threshold=float(tr["threshold"]),
    )
    try:
        hp.validate()
    except ValueError as exc:
        raise CliConfigError(f"trainer/model: {exc}") from exc

    grid = []
    for i, cell in enumerate(merged["sweep"]):
        cell = _take(f"sweep[{i}]", cell,
                     {"batch_size", "learning_rate", "hidden_dim", "layers", "dropout",
                      "iterations", "heads", "optimizer", "threshold"})
        cell_hp = Hyperparams(**{**_hp_defaults(hp), **cell})
        try:
            cell_hp.validate()
        except ValueError as exc:
            raise CliConfigError(f"sweep[{i}]: {exc}") from exc
        grid.append(cell_hp)

    seed = merged["seed"]
    if not isinstance(seed, int):
        raise CliConfigError(f"seed must be an integer, got {seed!r}")
    return RunConfig(seed=seed, dataset=gen, model=model, trainer=hp, sweep=grid)


def _hp_defaults(hp):
    return {
        "batch_size": hp.batch_size, "learning_rate": hp.learning_rate,
        "hidden_dim": hp.hidden_dim, "layers": hp.layers, "dropout": hp.dropout,
        "iterations": hp.iterations, "heads": hp.heads, "optimizer": hp.optimizer,
        "threshold": hp.threshold,
    }


def load_config(path=None, seed_override=None):
    doc = json.loads(Path(path).read_text()) if path else {}
    cfg = parse_config(doc)
    if seed_override is not None:
        cfg.seed = seed_override
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args):
    cfg = load_config(args.config, args.seed)
    dataset = generate_dataset(cfg.dataset, cfg.seed)
    save_dataset(dataset, args.out)
    print(f"wrote dataset ({cfg.dataset.users} users, {cfg.dataset.steps} steps) to {args.out}")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config, args.seed)
    dataset = load_dataset(args.dataset)
    model, report = train(dataset, cfg.trainer, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint.json")
    _write_report(report, out / "train_report.json")
    print(f"{'hyperparameters':<42} {'precision':>9} {'recall':>9} {'f1':>9}")
    print(f"{report.hyperparams.label():<42} {report.precision:>9.4f} "
          f"{report.recall:>9.4f} {report.f1:>9.4f}")
    print(f"final loss {report.losses[-1]:.6f} after {len(report.losses)} iterations "
          f"({report.wall_clock:.1f}s); artifacts in {out}")
    return EXIT_OK


def _write_report(report, path):
    doc = {
        "format": REPORT_FORMAT,
        "hyperparameters": report.hyperparams.label(),
        "seed": report.seed,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "wall_clock_s": report.wall_clock,
        "losses": report.losses,
        "error": report.error,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def cmd_predict(args):
    cfg = load_config(args.config, args.seed)
    dataset = load_dataset(args.dataset)
    model = load_checkpoint(args.checkpoint)
    seq = build_sequence(dataset)
    if seq.layout != model.config.layout:
        raise CliConfigError(
            f"dataset layout {seq.layout} does not match checkpoint layout {model.config.layout}"
        )
    blocks_list = rollout(seq, model, args.steps,
                          threshold=cfg.trainer.threshold,
                          location_count=len(dataset.config.cities),
                          enforce_growth=args.enforce_growth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    last_true = max(dataset.snapshots, key=lambda s: s.step)
    step = last_true.step
    # re-decode each rolled-out step into the standard snapshot format
    for i, blocks in enumerate(blocks_list, start=1):
        snap_matrix = _blocks_to_matrix(blocks, model.config.layout, step + i,
                                        len(dataset.config.cities),
                                        cfg.trainer.threshold)
        snapshot = decode_feature_matrix(snap_matrix, dataset.config.cities)
        save_snapshot(snapshot, out / f"snapshot_{step + i:02d}.json")
    _write_recommendations(blocks_list[0], last_true.adjacency, out / "recommendations.csv")
    print(f"wrote {len(blocks_list)} predicted snapshot(s) and recommendations to {out}")
    return EXIT_OK


def _blocks_to_matrix(blocks, layout, step, location_count, threshold):
    values = np.hstack([
        binarize_adjacency(blocks.adjacency_scores, threshold).astype(np.float64),
        snap_demographic_block(blocks.demographics, location_count),
        renormalize_rows(blocks.history),
        renormalize_engagement(blocks.engagement),
    ])
    return FeatureMatrix(step=step, values=values, layout=layout)


def _write_recommendations(blocks, last_adjacency, path):
    # ranked list of predicted NEW links per user, highest score first
    scores = 0.5 * (blocks.adjacency_scores + blocks.adjacency_scores.T)
    n = scores.shape[0]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "candidate_id", "score"])
        for i in range(n):
            fresh = [(float(scores[i, j]), j) for j in range(n)
                     if j != i and not last_adjacency[i, j]]
            fresh.sort(key=lambda t: (-t[0], t[1]))
            for s, j in fresh:
                w.writerow([i, j, f"{s:.6f}"])


def cmd_evaluate(args):
    cfg = load_config(args.config, args.seed)
    dataset = load_dataset(args.dataset)
    model = load_checkpoint(args.checkpoint)
    scores = evaluate_links(model, dataset, cfg.trainer.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "link_scores.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hyperparameters", "precision", "recall", "f1"])
        w.writerow([cfg.trainer.label(), f"{scores.precision:.4f}",
                    f"{scores.recall:.4f}", f"{scores.f1:.4f}"])
    graphmetrics.write_report(graphmetrics.report(dataset), out / "metrics")
    predicted_snapshots = _with_predicted_last(dataset, model, cfg.trainer.threshold)
    graphmetrics.write_report(graphmetrics.report(predicted_snapshots),
                              out / "metrics_predicted")
    print(f"precision={scores.precision:.4f} recall={scores.recall:.4f} f1={scores.f1:.4f}")
    print(f"metric tables in {out}")
    return EXIT_OK


def _with_predicted_last(dataset, model, threshold):
    # ground-truth steps 1..T-1 plus the model's prediction of step T
    seq = build_sequence(dataset)
    blocks = rollout(seq.matrices[:-1], model, 1, threshold=threshold,
                     location_count=len(dataset.config.cities))[0]
    matrix = _blocks_to_matrix(blocks, seq.layout, dataset.snapshots[-1].step,
                               len(dataset.config.cities), threshold)
    predicted = decode_feature_matrix(matrix, dataset.config.cities)
    return sorted(dataset.snapshots, key=lambda s: s.step)[:-1] + [predicted]


def cmd_sweep(args):
    cfg = load_config(args.config, args.seed)
    if not cfg.sweep:
        raise CliConfigError("sweep grid is empty; add cells under \"sweep\" in the config")
    dataset = load_dataset(args.dataset)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    reports = sweep(dataset, cfg.sweep, cfg.seed, out_path=out)
    print(f"{'hyperparameters':<42} {'precision':>9} {'recall':>9} {'f1':>9}")
    for rep in reports:
        note = f"  [{rep.error}]" if rep.error else ""
        print(f"{rep.hyperparams.label():<42} {rep.precision:>9.4f} "
              f"{rep.recall:>9.4f} {rep.f1:>9.4f}{note}")
    print(f"sweep table in {out}")
    return EXIT_OK


def cmd_print_config(args):
    print(json.dumps(default_config_dict(), indent=2))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="socialevo",
        description="Synthesize temporal social networks, train the forecaster, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, config=True, dataset=False, checkpoint=False, out=False, steps=False):
        if config:
            p.add_argument("--config", help="path to a JSON run config (defaults built in)")
            p.add_argument("--seed", type=int, help="override the config seed")
        if dataset:
            p.add_argument("--dataset", required=True, help="dataset directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint file")
        if out:
            p.add_argument("--out", required=True, help="output path")
        if steps:
            p.add_argument("--steps", type=int, default=1, help="rollout steps (k)")

    p = sub.add_parser("generate", help="synthesize a dataset directory")
    common(p, out=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset")
    common(p, dataset=True, out=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="roll out future snapshots from a checkpoint")
    common(p, dataset=True, checkpoint=True, out=True, steps=True)
    p.add_argument("--enforce-growth", action="store_true",
                   help="OR each predicted adjacency with the previous step")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score held-out links and emit metric tables")
    common(p, dataset=True, checkpoint=True, out=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train every grid cell and persist the table")
    common(p, dataset=True, out=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("print-config", help="dump the built-in defaults as JSON")
    p.set_defaults(func=cmd_print_config)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliConfigError, ParameterError, ModelConfigError, CapacityError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, FileExistsError, FileNotFoundError, OSError,
            json.JSONDecodeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericsError, TrainingError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
