"""Deterministic generator of temporal social-network datasets.

A dataset is a fixed population of users with demographic attributes, a
posting-history distribution over eight content categories, engagement
distributions (reactions, shares, comments) over the same categories, and an
undirected follower graph that only gains edges over time. Homophily is
planted explicitly: new neighbors are sampled with probability proportional
to exp(score), where the score rewards matching occupation, matching
location, small age gaps, and closing open triangles. That makes the
assortativity structure of the output a measurable property of the
configuration instead of an accident.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

GENDERS = ("M", "F", "O")
OCCUPATIONS = (
    "physician", "teacher", "businessperson", "actor", "engineer",
    "student", "sportsperson", "writer", "banker",
)
CATEGORIES = (
    "entertainment", "sports", "finance", "art",
    "education", "travel", "health", "politics",
)
ENGAGEMENT_KINDS = ("reactions", "shares", "comments")
DEFAULT_CITIES = (
    "Dallas", "Chicago", "Austin", "Boston",
    "Denver", "Seattle", "Atlanta", "Phoenix",
)
AGE_MIN, AGE_MAX = 15, 60

# each occupation posts mostly about one signature category
SIGNATURE_CATEGORY = {
    "physician": "health",
    "sportsperson": "sports",
    "teacher": "education",
    "student": "education",
    "engineer": "education",
    "banker": "finance",
    "businessperson": "finance",
    "actor": "entertainment",
    "writer": "art",
}

DATASET_FORMAT = "socialevo-dataset/1"

_ENGAGEMENT_NOISE = (0.02, 0.035, 0.05)  # reactions, shares, comments
_MAX_POSTS_PER_STEP = 10


class ParameterError(ValueError):
    """A generation parameter is outside its documented range."""


class FormatError(ValueError):
    """A serialized dataset carries an unknown or damaged format tag."""


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    age: int
    gender: str
    occupation: str
    location: str


@dataclass(frozen=True)
class HomophilyWeights:
    """Log-scale attraction bonuses used when sampling new neighbors."""
    occupation: float = 2.0
    location: float = 1.0
    age: float = 1.0
    triangle: float = 0.5


@dataclass
class GeneratorConfig:
    users: int = 500
    steps: int = 10
    degree_start: int = 10
    degree_end: int | None = None  # defaults to min(300, users - 1)
    drift: float = 0.05
    homophily: HomophilyWeights = field(default_factory=HomophilyWeights)
    cities: tuple = DEFAULT_CITIES
    post_budget: int = 2000  # lifetime posts per user; per-step draws are 0..10

    def validate(self):
        if self.users < 2:
            raise ParameterError(f"users must be >= 2, got {self.users}")
        if self.steps < 2:
            raise ParameterError(f"steps must be >= 2, got {self.steps}")
        if not 0.0 <= self.drift <= 1.0:
            raise ParameterError(f"drift must be in [0, 1], got {self.drift}")
        if self.degree_start < 1 or self.degree_start >= self.users:
            raise ParameterError(
                f"degree_start must be in [1, users), got {self.degree_start} for {self.users} users"
            )
        if (self.users * self.degree_start) % 2 != 0:
            raise ParameterError("users * degree_start must be even for a regular first step")
        if len(self.cities) < 2:
            raise ParameterError("need at least two cities")


@dataclass
class TemporalSnapshot:
    """State of the whole network at one time step.

    adjacency is an N x N symmetric binary matrix with a zero diagonal;
    history rows and each 8-wide engagement sub-block row sum to 1.
    """
    step: int
    adjacency: np.ndarray
    history: np.ndarray
    engagement: np.ndarray
    posts: np.ndarray
    profiles: list


@dataclass
class Dataset:
    users: list
    snapshots: list
    seed: int
    config: GeneratorConfig


def generate_profiles(n, rng, cities=DEFAULT_CITIES):
    """n user profiles with attributes drawn uniformly from their sets."""
    if n < 2:
        raise ParameterError(f"need at least 2 users, got {n}")
    rng = _as_rng(rng)
    ages = rng.integers(AGE_MIN, AGE_MAX + 1, size=n)
    genders = rng.integers(0, len(GENDERS), size=n)
    occupations = rng.integers(0, len(OCCUPATIONS), size=n)
    locations = rng.integers(0, len(cities), size=n)
    return [
        UserProfile(i, int(ages[i]), GENDERS[genders[i]],
                    OCCUPATIONS[occupations[i]], cities[locations[i]])
        for i in range(n)
    ]


def base_history(profile, rng):
    """Starting posting distribution, dominated by the occupation's signature category.

    The signature category receives 0.6-0.8 of the mass; the remainder is
    spread randomly over the other seven categories.
    """
    rng = _as_rng(rng)
    sig = CATEGORIES.index(SIGNATURE_CATEGORY[profile.occupation])
    dominant = rng.uniform(0.6, 0.8)
    rest = rng.dirichlet(np.ones(len(CATEGORIES) - 1)) * (1.0 - dominant)
    out = np.empty(len(CATEGORIES))
    out[sig] = dominant
    out[[i for i in range(len(CATEGORIES)) if i != sig]] = rest
    return out / out.sum()


def evolve_history(current, drift, rng):
    """One step of interest drift: move `drift` of the mass toward a resampled target."""
    if not 0.0 <= drift <= 1.0:
        raise ParameterError(f"drift must be in [0, 1], got {drift}")
    current = np.asarray(current, dtype=np.float64)
    if drift == 0.0:
        return current.copy()
    rng = _as_rng(rng)
    target = rng.dirichlet(np.ones(current.size))
    out = (1.0 - drift) * current + drift * target
    return out / out.sum()


def degree_targets(config):
    """Per-step target degree: rounded linear ramp from degree_start to degree_end."""
    end = config.degree_end if config.degree_end is not None else min(300, config.users - 1)
    if end >= config.users:
        raise ParameterError(f"degree_end must be < users, got {end} for {config.users} users")
    targets = [int(round(v)) for v in np.linspace(config.degree_start, end, config.steps)]
    if any(b < a for a, b in zip(targets, targets[1:])):
        raise ParameterError("degree schedule must be non-decreasing")
    return targets


def attraction_scores(profiles, weights):
    """Static pairwise log-attraction matrix (everything except the triangle bonus)."""
    occ = np.array([OCCUPATIONS.index(p.occupation) for p in profiles])
    loc = np.array([p.location for p in profiles])
    age = np.array([p.age for p in profiles], dtype=np.float64)
    score = weights.occupation * (occ[:, None] == occ[None, :])
    score = score + weights.location * (loc[:, None] == loc[None, :])
    score = score + weights.age * (1.0 - np.abs(age[:, None] - age[None, :]) / (AGE_MAX - AGE_MIN))
    np.fill_diagonal(score, 0.0)
    return score


def _gumbel_top_k(log_weights, k, rng):
    # exact weighted sampling without replacement via the Gumbel-max trick
    noisy = log_weights + rng.gumbel(size=log_weights.size)
    if k >= noisy.size:
        return np.argsort(noisy)[::-1]
    part = np.argpartition(noisy, -k)[-k:]
    return part[np.argsort(noisy[part])[::-1]]


def initial_network(profiles, degree, weights, rng):
    """Exactly degree-regular first-step graph, attraction-weighted.

    Weighted stub matching over remaining deficits; the rare dead ends near
    the end are resolved by reconnecting an existing edge (degree-preserving
    swap), so every user lands on exactly `degree` neighbors.
    """
    n = len(profiles)
    if degree >= n:
        raise ParameterError(f"degree {degree} impossible with {n} users")
    if (n * degree) % 2 != 0:
        raise ParameterError("users * degree must be even")
    rng = _as_rng(rng)
    static = attraction_scores(profiles, weights)
    adj = np.zeros((n, n), dtype=np.uint8)
    deficit = np.full(n, degree, dtype=np.int64)
    guard = 4 * n * degree + 100
    while deficit.sum() > 0:
        guard -= 1
        if guard <= 0:
            raise ParameterError("initial network construction did not converge")
        hungry = np.flatnonzero(deficit == deficit.max())
        i = int(hungry[rng.integers(0, hungry.size)])
        eligible = (deficit > 0) & (adj[i] == 0)
        eligible[i] = False
        idx = np.flatnonzero(eligible)
        if idx.size == 0:
            _swap_repair(adj, deficit, i, rng)
            continue
        j = int(idx[_gumbel_top_k(static[i, idx], 1, rng)[0]])
        adj[i, j] = adj[j, i] = 1
        deficit[i] -= 1
        deficit[j] -= 1
    return adj


def _swap_repair(adj, deficit, i, rng):
    # i still needs edges but every other deficit node is already a neighbor
    n = deficit.size
    rows, cols = np.nonzero(np.triu(adj, 1))
    order = rng.permutation(rows.size)
    if deficit[i] >= 2:
        for e in order:
            u, v = int(rows[e]), int(cols[e])
            if i in (u, v) or adj[i, u] or adj[i, v]:
                continue
            adj[u, v] = adj[v, u] = 0
            adj[i, u] = adj[u, i] = 1
            adj[i, v] = adj[v, i] = 1
            deficit[i] -= 2
            return
    others = np.flatnonzero((deficit > 0) & (np.arange(n) != i))
    if others.size:
        j = int(others[0])
        for e in order:
            for u, v in ((int(rows[e]), int(cols[e])), (int(cols[e]), int(rows[e]))):
                if u in (i, j) or v in (i, j) or adj[i, u] or adj[j, v]:
                    continue
                adj[u, v] = adj[v, u] = 0
                adj[i, u] = adj[u, i] = 1
                adj[j, v] = adj[v, j] = 1
                deficit[i] -= 1
                deficit[j] -= 1
                return
    raise ParameterError("initial network repair failed; degree too close to users")


def evolve_network(previous, profiles, step, schedule, weights, rng):
    """Grow the graph for one step: edges are only ever added.

    Every user below the step's target degree samples the missing neighbors
    with probability proportional to exp(attraction + triangle bonus),
    preferring partners that are themselves below target.
    """
    n = previous.shape[0]
    if not 2 <= step <= len(schedule):
        raise ParameterError(f"step must be in [2, {len(schedule)}], got {step}")
    if any(b < a for a, b in zip(schedule, schedule[1:])):
        raise ParameterError("degree schedule must be non-decreasing")
    rng = _as_rng(rng)
    static = attraction_scores(profiles, weights)
    adj = previous.astype(np.uint8).copy()
    adjf = adj.astype(np.float64)
    deg = adj.sum(axis=1).astype(np.int64)
    target = schedule[step - 1]
    everyone = np.arange(n)
    for i in rng.permutation(n):
        need = target - deg[i]
        if need <= 0:
            continue
        log_w = static[i] + weights.triangle * ((adjf[i] @ adjf) > 0)
        open_slot = (adj[i] == 0) & (everyone != i)
        preferred = np.flatnonzero(open_slot & (deg < target))
        picks = list(preferred[_gumbel_top_k(log_w[preferred], need, rng)]) if preferred.size else []
        if len(picks) < need:
            backup = np.flatnonzero(open_slot & (deg >= target))
            extra = need - len(picks)
            if backup.size:
                picks.extend(backup[_gumbel_top_k(log_w[backup], extra, rng)])
        for j in picks:
            j = int(j)
            adj[i, j] = adj[j, i] = 1
            adjf[i, j] = adjf[j, i] = 1.0
            deg[i] += 1
            deg[j] += 1
    return adj


def _engagement(history, adjacency, rng):
    # engagement = noisy mixture of own history and neighbors' histories
    n = history.shape[0]
    deg = adjacency.sum(axis=1, keepdims=True).astype(np.float64)
    neighbor_mean = (adjacency.astype(np.float64) @ history) / np.maximum(deg, 1.0)
    own_weight = np.where(deg > 0, 0.55, 1.0)
    out = np.empty((n, len(ENGAGEMENT_KINDS) * len(CATEGORIES)))
    for k, noise in enumerate(_ENGAGEMENT_NOISE):
        mix = own_weight * history + (1.0 - own_weight) * neighbor_mean
        x = np.clip(mix + rng.normal(0.0, noise, mix.shape), 1e-9, None)
        out[:, k * 8:(k + 1) * 8] = x / x.sum(axis=1, keepdims=True)
    return out


def generate_dataset(config=None, seed=0):
    """Build a full temporal dataset deterministically from (config, seed)."""
    config = config if config is not None else GeneratorConfig()
    config.validate()
    schedule = degree_targets(config)
    streams = np.random.SeedSequence(seed).spawn(5)
    profile_rng, history_rng, network_rng, engage_rng, posts_rng = (
        np.random.default_rng(s) for s in streams
    )
    n, T = config.users, config.steps
    profiles = generate_profiles(n, profile_rng, config.cities)

    adjacency = initial_network(profiles, schedule[0], config.homophily, network_rng)
    history = np.vstack([base_history(p, history_rng) for p in profiles])
    posts = posts_rng.integers(0, _MAX_POSTS_PER_STEP + 1, size=n)
    snapshots = [TemporalSnapshot(1, adjacency, history,
                                  _engagement(history, adjacency, engage_rng),
                                  posts, profiles)]
    for t in range(2, T + 1):
        adjacency = evolve_network(snapshots[-1].adjacency, profiles, t,
                                   schedule, config.homophily, network_rng)
        posts = posts_rng.integers(0, _MAX_POSTS_PER_STEP + 1, size=n)
        history = np.vstack([
            _posting_update(evolve_history(history[i], config.drift, history_rng),
                            int(posts[i]), history_rng)
            for i in range(n)
        ])
        snapshots.append(TemporalSnapshot(t, adjacency, history,
                                          _engagement(history, adjacency, engage_rng),
                                          posts, profiles))
    return Dataset(profiles, snapshots, seed, config)


def _posting_update(dist, count, rng):
    # the step's 0..10 posts act as sampling intensity: a small empirical
    # nudge of the distribution toward what the user actually posted
    if count == 0:
        return dist
    empirical = rng.multinomial(count, dist) / count
    w = 0.1 * count / _MAX_POSTS_PER_STEP
    out = (1.0 - w) * dist + w * empirical
    return out / out.sum()


# ---------------------------------------------------------------------------
# serialization: one directory per dataset, textual and human-diffable
# ---------------------------------------------------------------------------


def save_dataset(dataset, path):
    """Write meta.json, profiles.csv and snapshot_XX.json under `path`."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    if (root / "meta.json").exists():
        raise FileExistsError(f"{root} already holds a dataset")
    cfg = asdict(dataset.config)
    cfg["cities"] = list(dataset.config.cities)
    meta = {
        "format": DATASET_FORMAT,
        "seed": dataset.seed,
        "users": len(dataset.users),
        "steps": len(dataset.snapshots),
        "feature_layout": {
            "users": len(dataset.users),
            "demographic_width": 4,
            "history_width": len(CATEGORIES),
            "engagement_width": len(ENGAGEMENT_KINDS) * len(CATEGORIES),
        },
        "config": cfg,
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    with (root / "profiles.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "age", "gender", "occupation", "location"])
        for p in dataset.users:
            writer.writerow([p.user_id, p.age, p.gender, p.occupation, p.location])
    for snap in dataset.snapshots:
        save_snapshot(snap, root / f"snapshot_{snap.step:02d}.json")


def save_snapshot(snapshot, path):
    doc = {
        "format": DATASET_FORMAT,
        "step": snapshot.step,
        "adjacency_bits": "".join(
            "".join("1" if v else "0" for v in row) for row in snapshot.adjacency
        ),
        "history": snapshot.history.tolist(),
        "engagement": snapshot.engagement.tolist(),
        "posts": [int(v) for v in snapshot.posts],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_snapshot(path, profiles):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != DATASET_FORMAT:
        raise FormatError(f"{path}: unknown snapshot format {doc.get('format')!r}")
    n = len(profiles)
    bits = doc["adjacency_bits"]
    if len(bits) != n * n:
        raise FormatError(f"{path}: adjacency bit list has wrong length")
    adjacency = (np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")).reshape(n, n)
    return TemporalSnapshot(
        step=int(doc["step"]),
        adjacency=adjacency.astype(np.uint8),
        history=np.asarray(doc["history"], dtype=np.float64),
        engagement=np.asarray(doc["engagement"], dtype=np.float64),
        posts=np.asarray(doc["posts"], dtype=np.int64),
        profiles=profiles,
    )


def load_dataset(path):
    root = Path(path)
    meta = json.loads((root / "meta.json").read_text())
    if meta.get("format") != DATASET_FORMAT:
        raise FormatError(f"{root}: unknown dataset format {meta.get('format')!r}")
    cfg = meta["config"]
    config = GeneratorConfig(
        users=cfg["users"], steps=cfg["steps"],
        degree_start=cfg["degree_start"], degree_end=cfg["degree_end"],
        drift=cfg["drift"],
        homophily=HomophilyWeights(**cfg["homophily"]),
        cities=tuple(cfg["cities"]),
        post_budget=cfg["post_budget"],
    )
    profiles = []
    with (root / "profiles.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            profiles.append(UserProfile(
                int(row["user_id"]), int(row["age"]),
                row["gender"], row["occupation"], row["location"],
            ))
    snapshots = [
        load_snapshot(root / f"snapshot_{t:02d}.json", profiles)
        for t in range(1, meta["steps"] + 1)
    ]
    return Dataset(profiles, snapshots, meta["seed"], config)


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
