"""Conversion between snapshots and the combined per-step feature matrices.

Each time step becomes an N x (N + 4 + 8 + 24) matrix: the adjacency block,
min-max/ordinal-encoded demographics, the posting-history distribution and
the three engagement distributions. Model outputs come back through the same
layout, sliced into interpretable blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synthgen import (
    AGE_MAX, AGE_MIN, CATEGORIES, ENGAGEMENT_KINDS, GENDERS, OCCUPATIONS,
    TemporalSnapshot, UserProfile,
)


class LayoutError(ValueError):
    """Data does not fit the declared feature layout."""


@dataclass(frozen=True)
class FeatureLayout:
    users: int
    demographic_width: int = 4
    history_width: int = len(CATEGORIES)
    engagement_width: int = len(ENGAGEMENT_KINDS) * len(CATEGORIES)

    def __post_init__(self):
        for name in ("users", "demographic_width", "history_width", "engagement_width"):
            if getattr(self, name) < 1:
                raise LayoutError(f"{name} must be positive")

    @property
    def width(self):
        return self.users + self.demographic_width + self.history_width + self.engagement_width

    @property
    def blocks(self):
        """Column ranges of (adjacency, demographics, history, engagement)."""
        n, d, h = self.users, self.demographic_width, self.history_width
        return ((0, n), (n, n + d), (n + d, n + d + h), (n + d + h, self.width))


@dataclass
class FeatureMatrix:
    step: int
    values: np.ndarray
    layout: FeatureLayout


@dataclass
class FeatureSequence:
    """Step-ordered feature matrices sharing one layout."""
    matrices: list

    def __post_init__(self):
        if not self.matrices:
            raise LayoutError("empty feature sequence")
        layout = self.matrices[0].layout
        if any(m.layout != layout for m in self.matrices):
            raise LayoutError("feature matrices disagree on layout")
        steps = [m.step for m in self.matrices]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise LayoutError("steps must be strictly increasing")

    def __len__(self):
        return len(self.matrices)

    def __iter__(self):
        return iter(self.matrices)

    @property
    def layout(self):
        return self.matrices[0].layout


@dataclass
class PredictionBlocks:
    """A sliced model output: adjacency scores plus the attribute blocks."""
    adjacency_scores: np.ndarray
    demographics: np.ndarray
    history: np.ndarray
    engagement: np.ndarray


def encode_snapshot(snapshot, layout, cities):
    """Combined feature matrix [adjacency | demographics | history | engagement]."""
    n = layout.users
    if snapshot.adjacency.shape != (n, n) or len(snapshot.profiles) != n:
        raise LayoutError(
            f"snapshot has {len(snapshot.profiles)} users, layout expects {n}"
        )
    demo = np.empty((n, layout.demographic_width))
    for i, p in enumerate(snapshot.profiles):
        demo[i] = _encode_demographics(p, cities)
    values = np.hstack([
        snapshot.adjacency.astype(np.float64),
        demo,
        snapshot.history,
        snapshot.engagement,
    ])
    return FeatureMatrix(step=snapshot.step, values=values, layout=layout)


def _encode_demographics(profile, cities):
    # age min-max normalized over [15, 60]; categorical attributes as
    # ordinal index / (cardinality - 1), so every value sits on an exact grid
    return np.array([
        (profile.age - AGE_MIN) / (AGE_MAX - AGE_MIN),
        GENDERS.index(profile.gender) / (len(GENDERS) - 1),
        OCCUPATIONS.index(profile.occupation) / (len(OCCUPATIONS) - 1),
        cities.index(profile.location) / (len(cities) - 1),
    ])


def decode_feature_matrix(matrix, cities):
    """Inverse of encode_snapshot; demographic values snap to the nearest grid point."""
    layout = matrix.layout
    (a0, a1), (d0, d1), (h0, h1), (e0, e1) = layout.blocks
    values = matrix.values
    adjacency = np.rint(values[:, a0:a1]).astype(np.uint8)
    profiles = [
        _decode_demographics(i, values[i, d0:d1], cities)
        for i in range(layout.users)
    ]
    return TemporalSnapshot(
        step=matrix.step,
        adjacency=adjacency,
        history=values[:, h0:h1].copy(),
        engagement=values[:, e0:e1].copy(),
        posts=np.zeros(layout.users, dtype=np.int64),
        profiles=profiles,
    )


def _decode_demographics(user_id, row, cities):
    age = int(np.clip(np.rint(row[0] * (AGE_MAX - AGE_MIN)) + AGE_MIN, AGE_MIN, AGE_MAX))
    gender = GENDERS[_snap(row[1], len(GENDERS))]
    occupation = OCCUPATIONS[_snap(row[2], len(OCCUPATIONS))]
    location = cities[_snap(row[3], len(cities))]
    return UserProfile(user_id, age, gender, occupation, location)


def _snap(value, cardinality):
    return int(np.clip(np.rint(value * (cardinality - 1)), 0, cardinality - 1))


def build_sequence(dataset):
    """The dataset's snapshots as a step-ordered feature sequence."""
    if len(dataset.snapshots) < 2:
        raise LayoutError(f"need at least 2 snapshots, got {len(dataset.snapshots)}")
    layout = FeatureLayout(users=len(dataset.users))
    cities = dataset.config.cities
    ordered = sorted(dataset.snapshots, key=lambda s: s.step)
    return FeatureSequence([encode_snapshot(s, layout, cities) for s in ordered])


def slice_prediction(values, layout):
    """Exact column partition of a prediction into its four blocks."""
    if isinstance(values, FeatureMatrix):
        values = values.values
    if values.ndim != 2 or values.shape[1] != layout.width:
        raise LayoutError(
            f"prediction width {values.shape[1] if values.ndim == 2 else values.shape} "
            f"!= layout width {layout.width}"
        )
    (a0, a1), (d0, d1), (h0, h1), (e0, e1) = layout.blocks
    return PredictionBlocks(
        adjacency_scores=values[:, a0:a1].copy(),
        demographics=values[:, d0:d1].copy(),
        history=values[:, h0:h1].copy(),
        engagement=values[:, e0:e1].copy(),
    )


def concat_blocks(blocks):
    """Inverse of slice_prediction."""
    return np.hstack([
        blocks.adjacency_scores, blocks.demographics, blocks.history, blocks.engagement,
    ])


def binarize_adjacency(scores, threshold=0.5):
    """Symmetrize scores, threshold, and force a hollow diagonal."""
    if not 0.0 < threshold < 1.0:
        raise LayoutError(f"threshold must be in (0, 1), got {threshold}")
    scores = np.asarray(scores, dtype=np.float64)
    sym = 0.5 * (scores + scores.T)
    adj = (sym > threshold).astype(np.uint8)
    np.fill_diagonal(adj, 0)
    return adj


def snap_demographic_block(values, location_count):
    """Snap predicted demographics to their encoding grids.

    Columns are (age, gender, occupation, location); each value is clipped to
    [0, 1] and rounded to the nearest k/(K-1) grid point of its attribute.
    """
    x = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    out = np.empty_like(x)
    cards = (AGE_MAX - AGE_MIN + 1, len(GENDERS), len(OCCUPATIONS), location_count)
    for col, k in enumerate(cards):
        out[:, col] = np.rint(x[:, col] * (k - 1)) / (k - 1)
    return out


def renormalize_rows(values):
    """Clamp at 0 and rescale each row to sum 1; all-zero rows become uniform."""
    x = np.clip(np.asarray(values, dtype=np.float64), 0.0, None)
    sums = x.sum(axis=1, keepdims=True)
    uniform = np.full_like(x, 1.0 / x.shape[1])
    return np.where(sums > 0.0, x / np.where(sums > 0.0, sums, 1.0), uniform)


def renormalize_engagement(values):
    """Renormalize each 8-wide engagement sub-block independently."""
    k = len(CATEGORIES)
    parts = [renormalize_rows(values[:, i * k:(i + 1) * k]) for i in range(len(ENGAGEMENT_KINDS))]
    return np.hstack(parts)
