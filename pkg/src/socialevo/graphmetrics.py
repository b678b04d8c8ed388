"""Structural evaluation of (predicted or ground-truth) social graphs.

Network density, triadic closure (global transitivity) and assortativity
coefficients: the categorical mixing-matrix form for labels and the Pearson
form over edge-endpoint pairs for numeric attributes. Undefined values are
reported as absent, never silently coerced to 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .synthgen import CATEGORIES, ENGAGEMENT_KINDS, Dataset

ABSENT = "NA"  # marker for undefined cells in delimited output
METRICS_FORMAT = "socialevo-metrics/1"


class UndefinedMetricError(ValueError):
    """The metric has no value on this graph (degenerate denominator)."""


def _check_adjacency(a):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise UndefinedMetricError(f"adjacency must be square, got {a.shape}")
    if a.shape[0] < 2:
        raise UndefinedMetricError("metrics need at least 2 nodes")
    if not np.array_equal(a, a.T):
        raise UndefinedMetricError("adjacency must be symmetric")
    if np.any(np.diagonal(a) != 0):
        raise UndefinedMetricError("adjacency must have a zero diagonal")
    if not np.isin(a, (0, 1)).all():
        raise UndefinedMetricError("adjacency must be binary")
    return a.astype(np.float64)


def density(adjacency):
    """Actual connections over possible connections: 2E / (N (N - 1))."""
    a = _check_adjacency(adjacency)
    n = a.shape[0]
    return float(a.sum() / (n * (n - 1)))


def triadic_closure(adjacency):
    """Global transitivity: 3 * triangles / connected triples."""
    a = _check_adjacency(adjacency)
    deg = a.sum(axis=1)
    triples = float((deg * (deg - 1)).sum() / 2.0)
    if triples == 0.0:
        raise UndefinedMetricError("no connected triples")
    closed = float(np.trace(a @ a @ a) / 2.0)  # trace(A^3) = 6 * triangles
    return closed / triples


def _edge_endpoints(adjacency):
    # both orientations of every undirected edge, as the symmetric mixing
    # matrix requires
    a = _check_adjacency(adjacency)
    rows, cols = np.nonzero(a)
    if rows.size == 0:
        raise UndefinedMetricError("graph has no edges")
    return rows, cols


def assortativity_categorical(adjacency, labels):
    """Mixing-matrix assortativity r = (tr e - sum a_i b_i) / (1 - sum a_i b_i)."""
    rows, cols = _edge_endpoints(adjacency)
    labels = list(labels)
    codes, inverse = np.unique(labels, return_inverse=True)
    k = codes.size
    e = np.zeros((k, k))
    np.add.at(e, (inverse[rows], inverse[cols]), 1.0)
    e /= e.sum()
    ab = float(e.sum(axis=1) @ e.sum(axis=0))
    denom = 1.0 - ab
    if denom == 0.0:
        raise UndefinedMetricError("all edge endpoints share one label")
    return float((np.trace(e) - ab) / denom)


def assortativity_numeric(adjacency, values):
    """Pearson correlation of endpoint values over both orientations of every edge."""
    rows, cols = _edge_endpoints(adjacency)
    values = np.asarray(values, dtype=np.float64)
    x, y = values[rows], values[cols]
    vx = float(np.mean(x * x) - np.mean(x) ** 2)
    vy = float(np.mean(y * y) - np.mean(y) ** 2)
    if vx <= 0.0 or vy <= 0.0:
        raise UndefinedMetricError("endpoint values have zero variance")
    cov = float(np.mean(x * y) - np.mean(x) * np.mean(y))
    return cov / np.sqrt(vx * vy)


@dataclass
class MetricsReport:
    """Per-step structure plus final-snapshot homophily, with absent cells as None."""
    steps: list
    density: list
    triadic_closure: list
    history: dict
    engagement: dict
    demographics: dict


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def report(source):
    """MetricsReport over a Dataset or a list of snapshots.

    Density and triadic closure are computed per step; assortativity is
    computed on the last snapshot, numerically for every history/engagement
    column and age, categorically for gender, occupation and location.
    """
    snapshots = source.snapshots if isinstance(source, Dataset) else list(source)
    if not snapshots:
        raise UndefinedMetricError("no snapshots to report on")
    snapshots = sorted(snapshots, key=lambda s: s.step)
    last = snapshots[-1]
    adj = last.adjacency
    history = {
        cat: _maybe(assortativity_numeric, adj, last.history[:, j])
        for j, cat in enumerate(CATEGORIES)
    }
    engagement = {}
    for k, kind in enumerate(ENGAGEMENT_KINDS):
        for j, cat in enumerate(CATEGORIES):
            engagement[f"{kind}.{cat}"] = _maybe(
                assortativity_numeric, adj, last.engagement[:, k * len(CATEGORIES) + j]
            )
    demographics = {
        "age": _maybe(assortativity_numeric, adj, [p.age for p in last.profiles]),
        "gender": _maybe(assortativity_categorical, adj, [p.gender for p in last.profiles]),
        "occupation": _maybe(assortativity_categorical, adj, [p.occupation for p in last.profiles]),
        "location": _maybe(assortativity_categorical, adj, [p.location for p in last.profiles]),
    }
    return MetricsReport(
        steps=[s.step for s in snapshots],
        density=[_maybe(density, s.adjacency) for s in snapshots],
        triadic_closure=[_maybe(triadic_closure, s.adjacency) for s in snapshots],
        history=history,
        engagement=engagement,
        demographics=demographics,
    )


def _cell(value):
    return ABSENT if value is None else repr(value)


def write_report(rep, out_dir):
    """Delimited tables (one per homophily family) plus a structured document."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "density_triadic.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric"] + [f"t{t}" for t in rep.steps])
        w.writerow(["density"] + [_cell(v) for v in rep.density])
        w.writerow(["triadic_closure"] + [_cell(v) for v in rep.triadic_closure])
    with (out / "history_assortativity.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(CATEGORIES))
        w.writerow([_cell(rep.history[c]) for c in CATEGORIES])
    for kind in ENGAGEMENT_KINDS:
        with (out / f"{kind}_assortativity.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(CATEGORIES))
            w.writerow([_cell(rep.engagement[f"{kind}.{c}"]) for c in CATEGORIES])
    with (out / "demographics_assortativity.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        keys = list(rep.demographics)
        w.writerow(keys)
        w.writerow([_cell(rep.demographics[k]) for k in keys])
    doc = {
        "format": METRICS_FORMAT,
        "steps": rep.steps,
        "density": rep.density,
        "triadic_closure": rep.triadic_closure,
        "history": rep.history,
        "engagement": rep.engagement,
        "demographics": rep.demographics,
    }
    (out / "metrics.json").write_text(json.dumps(doc, indent=2) + "\n")
    return out
