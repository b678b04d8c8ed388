"""Loss, optimization loop, link-prediction scoring and hyperparameter sweeps.

Training uses teacher forcing on a single temporal dataset: the final
ground-truth step is held out, the model sees steps 1..T-1, and each
iteration draws a mini-batch of user rows whose next-step rows are known.
Link predictions are scored as binary classification over the upper
triangle of the held-out adjacency.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import numerics as nm
from .egpt import EgptConfig, forward, forward_flat, init_model
from .features import binarize_adjacency, build_sequence, slice_prediction


class TrainingError(RuntimeError):
    """Optimization failed (typically divergence to non-finite loss)."""


@dataclass
class Hyperparams:
    batch_size: int = 32
    learning_rate: float = 2e-3
    hidden_dim: int = 64
    layers: int = 4
    dropout: float = 0.1
    iterations: int = 100
    heads: int = 4
    optimizer: str = "adam"
    threshold: float = 0.5
    loss_weights: tuple = (1.0, 1.0, 1.0)  # adjacency, demographics, history+engagement
    init_std: float = 0.02

    def validate(self):
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("batch_size and iterations must be positive")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def label(self):
        return (f"bs={self.batch_size},lr={self.learning_rate:g},hd={self.hidden_dim},"
                f"dl={self.layers},drp={self.dropout:g}")


@dataclass
class LinkScores:
    precision: float
    recall: float
    f1: float


@dataclass
class TrainReport:
    losses: list
    precision: float
    recall: float
    f1: float
    wall_clock: float
    seed: int
    hyperparams: Hyperparams
    error: str | None = None


def loss(predicted, targets, layout, weights=(1.0, 1.0, 1.0)):
    """Composite next-step loss over aligned prediction/target sequences.

    Binary cross-entropy of the logistic adjacency scores plus mean-squared
    error on the demographic block plus mean-squared error on the
    history/engagement blocks; each term is a per-element mean and the terms
    are summed with the given weights (unit by default).
    """
    pred_list = predicted if isinstance(predicted, (list, tuple)) else [predicted]
    targ_list = targets if isinstance(targets, (list, tuple)) else [targets]
    if len(pred_list) != len(targ_list):
        raise ValueError(f"{len(pred_list)} predictions vs {len(targ_list)} targets")
    flat_pred = nm.concat_rows([nm.constant(p) for p in pred_list])
    flat_targ = np.vstack([t.values if hasattr(t, "values") else np.asarray(t) for t in targ_list])
    return _loss_rows(flat_pred, flat_targ, layout, weights)


def _loss_rows(pred, targ, layout, weights):
    if pred.shape != targ.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {targ.shape}")
    if pred.shape[1] != layout.width:
        raise ValueError(f"row width {pred.shape[1]} != layout width {layout.width}")
    n = layout.users
    d1 = n + layout.demographic_width
    link = nm.mean_all(nm.bce_with_logits(nm.slice_cols(pred, 0, n), targ[:, :n]))
    demo_diff = nm.sub(nm.slice_cols(pred, n, d1), nm.constant(targ[:, n:d1]))
    demo = nm.mean_all(nm.mul(demo_diff, demo_diff))
    rest_diff = nm.sub(nm.slice_cols(pred, d1, layout.width), nm.constant(targ[:, d1:]))
    rest = nm.mean_all(nm.mul(rest_diff, rest_diff))
    return nm.add(nm.add(nm.scale(link, weights[0]), nm.scale(demo, weights[1])),
                  nm.scale(rest, weights[2]))


def train(dataset, hp=None, seed=0):
    """Teacher-forced training; returns the model and its report.

    The last snapshot is never used during optimization: inputs are steps
    1..T-1 and row (t, i) is supervised against the step t+1 features for
    t <= T-2. Fully deterministic under (dataset, hp, seed).
    """
    hp = hp if hp is not None else Hyperparams()
    hp.validate()
    if len(dataset.snapshots) < 3:
        raise ValueError(f"training needs at least 3 steps, got {len(dataset.snapshots)}")
    seq = build_sequence(dataset)
    layout = seq.layout
    train_mats = seq.matrices[:-1]
    targets = np.vstack([m.values for m in train_mats[1:]])
    n_supervised = targets.shape[0]

    init_rng, batch_rng, drop_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)
    )
    config = EgptConfig(
        layout=layout, hidden_dim=hp.hidden_dim, layers=hp.layers, heads=hp.heads,
        dropout=hp.dropout, max_steps=len(dataset.snapshots) + 4,
    )
    model = init_model(config, init_rng, init_std=hp.init_std)
    m_state = {k: np.zeros_like(p.data) for k, p in model.params.items()}
    v_state = {k: np.zeros_like(p.data) for k, p in model.params.items()}
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8

    started = time.perf_counter()
    losses = []
    for it in range(1, hp.iterations + 1):
        idx = batch_rng.choice(n_supervised, size=min(hp.batch_size, n_supervised),
                               replace=False)
        try:
            flat = forward_flat(train_mats, model, mode="train", rng=drop_rng)
            step_loss = _loss_rows(nm.take_rows(flat, idx), targets[idx],
                                   layout, hp.loss_weights)
            nm.backward(step_loss)
        except nm.NonFiniteError as exc:
            raise TrainingError(f"training diverged at iteration {it}: {exc}") from exc
        losses.append(float(step_loss.data))
        for name, p in model.params.items():
            g = p.grad
            if hp.optimizer == "sgd":
                p.data -= hp.learning_rate * g
                continue
            m = m_state[name]
            v = v_state[name]
            m[:] = beta1 * m + (1.0 - beta1) * g
            v[:] = beta2 * v + (1.0 - beta2) * (g * g)
            m_hat = m / (1.0 - beta1 ** it)
            v_hat = v / (1.0 - beta2 ** it)
            p.data -= hp.learning_rate * m_hat / (np.sqrt(v_hat) + eps_adam)
        if not np.all(np.isfinite(np.concatenate([p.data.ravel() for p in model.params.values()]))):
            raise TrainingError(f"training diverged at iteration {it}: non-finite parameters")

    scores = evaluate_links(model, dataset, hp.threshold)
    report = TrainReport(
        losses=losses, precision=scores.precision, recall=scores.recall, f1=scores.f1,
        wall_clock=time.perf_counter() - started, seed=seed, hyperparams=hp,
    )
    return model, report


def link_scores(true_adjacency, predicted_adjacency):
    """Precision/recall/F1 over upper-triangle cells of an undirected graph."""
    n = true_adjacency.shape[0]
    iu = np.triu_indices(n, k=1)
    t = true_adjacency[iu].astype(bool)
    p = predicted_adjacency[iu].astype(bool)
    tp = int(np.sum(t & p))
    fp = int(np.sum(~t & p))
    fn = int(np.sum(t & ~p))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return LinkScores(precision, recall, f1)


def evaluate_links(model, dataset, threshold=0.5):
    """Predict the held-out final step from steps 1..T-1 and score its links."""
    seq = build_sequence(dataset)
    preds = forward(seq.matrices[:-1], model, mode="eval")
    blocks = slice_prediction(preds[-1], seq.layout)
    predicted = binarize_adjacency(expit(blocks.adjacency_scores), threshold)
    true_last = max(dataset.snapshots, key=lambda s: s.step).adjacency
    return link_scores(true_last, predicted)


def persistence_baseline(dataset):
    """Score of predicting the final adjacency as a copy of the previous step."""
    ordered = sorted(dataset.snapshots, key=lambda s: s.step)
    return link_scores(ordered[-1].adjacency, ordered[-2].adjacency)


def random_baseline_f1(true_rate, predicted_rate):
    """Expected F1 of guessing edges independently at `predicted_rate`.

    Precision of a uniform guess is the true positive rate and recall is the
    guess rate, so E[F1] = 2pq / (p + q). At matched rate q = p this is p.
    """
    p, q = float(true_rate), float(predicted_rate)
    return 2.0 * p * q / (p + q) if p + q else 0.0


def sweep(dataset, grid, seed=0, out_path=None):
    """Train every configuration independently; failures are recorded, not fatal.

    Returns reports sorted by F1 descending. With `out_path`, each row is
    appended (and flushed) as its cell completes, so an interrupted sweep
    leaves the finished rows on disk; the final file is rewritten sorted.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("sweep grid is empty")
    reports = []
    out_file = None
    writer = None
    if out_path is not None:
        out_file = Path(out_path).open("w", newline="")
        writer = csv.writer(out_file)
        writer.writerow(_SWEEP_COLUMNS)
        out_file.flush()
    try:
        for hp in grid:
            try:
                _, rep = train(dataset, hp, seed)
            except (TrainingError, nm.NumericsError, ValueError) as exc:
                rep = TrainReport(losses=[], precision=0.0, recall=0.0, f1=0.0,
                                  wall_clock=0.0, seed=seed, hyperparams=hp,
                                  error=str(exc))
            reports.append(rep)
            if writer is not None:
                writer.writerow(_sweep_row(rep))
                out_file.flush()
    finally:
        if out_file is not None:
            out_file.close()
    reports.sort(key=lambda r: r.f1, reverse=True)
    if out_path is not None:
        with Path(out_path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_SWEEP_COLUMNS)
            for rep in reports:
                w.writerow(_sweep_row(rep))
    return reports


_SWEEP_COLUMNS = ["hyperparameters", "precision", "recall", "f1", "wall_clock_s", "error"]


def _sweep_row(rep):
    return [
        rep.hyperparams.label(),
        f"{rep.precision:.4f}", f"{rep.recall:.4f}", f"{rep.f1:.4f}",
        f"{rep.wall_clock:.2f}", rep.error or "",
    ]
