"""Decoder-only transformer over temporal feature matrices.

Every user-row of every time step becomes one token. Rows are embedded,
given a learnable positional offset, flattened over time and pushed through
masked pre-norm decoder layers; a shared output projection maps the hidden
rows back to feature width. The causal mask works on whole time steps: a
token at step t may attend to every token at steps <= t (users interact
within a step), and never to later steps. The output row for step t is the
model's prediction of the step t+1 feature row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import numerics as nm
from .features import (
    FeatureLayout, FeatureMatrix, binarize_adjacency, renormalize_engagement,
    renormalize_rows, slice_prediction, snap_demographic_block,
)

CHECKPOINT_FORMAT = "egpt-checkpoint/1"
POSITIONAL_MODES = ("per_step_user", "per_step")


class ConfigError(ValueError):
    """Model configuration and data disagree."""


class CapacityError(ValueError):
    """A sequence is longer than the model's positional table allows."""


@dataclass(frozen=True)
class EgptConfig:
    layout: FeatureLayout
    hidden_dim: int = 64
    layers: int = 4
    heads: int = 4
    dropout: float = 0.1
    max_steps: int = 12
    positional: str = "per_step_user"

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError(f"need at least 1 decoder layer, got {self.layers}")
        if self.max_steps < 2:
            raise ConfigError(f"max_steps must be >= 2, got {self.max_steps}")
        if self.heads < 1 or self.hidden_dim % self.heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} must be divisible by heads {self.heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.positional not in POSITIONAL_MODES:
            raise ConfigError(f"positional must be one of {POSITIONAL_MODES}")

    @property
    def head_dim(self):
        return self.hidden_dim // self.heads


class EgptModel:
    """Parameter container; read-only during forward, mutated by training."""

    def __init__(self, config, params):
        self.config = config
        self.params = params

    def parameters(self):
        return self.params


def parameter_shapes(config):
    """Every learnable tensor's name and shape, in a stable order."""
    width, h = config.layout.width, config.hidden_dim
    n = config.layout.users
    pos_rows = config.max_steps * n if config.positional == "per_step_user" else config.max_steps
    shapes = {
        "embed.weight": (width, h),
        "embed.bias": (h,),
        "pos.table": (pos_rows, h),
    }
    for l in range(config.layers):
        shapes.update({
            f"block{l}.ln1.gain": (h,),
            f"block{l}.ln1.bias": (h,),
            f"block{l}.attn.wq": (h, h),
            f"block{l}.attn.bq": (h,),
            f"block{l}.attn.wk": (h, h),
            f"block{l}.attn.bk": (h,),
            f"block{l}.attn.wv": (h, h),
            f"block{l}.attn.bv": (h,),
            f"block{l}.attn.wo": (h, h),
            f"block{l}.attn.bo": (h,),
            f"block{l}.ln2.gain": (h,),
            f"block{l}.ln2.bias": (h,),
            f"block{l}.ffn.w1": (h, 4 * h),
            f"block{l}.ffn.b1": (4 * h,),
            f"block{l}.ffn.w2": (4 * h, h),
            f"block{l}.ffn.b2": (h,),
        })
    shapes["out.weight"] = (h, width)
    shapes["out.bias"] = (width,)
    return shapes


def init_model(config, seed=0, init_std=0.02):
    """Fresh model: normal(0, init_std) weights, zero biases, identity norms."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith((".bias", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, init_std, size=shape)
        params[name] = nm.parameter(data)
    return EgptModel(config, params)


def build_causal_mask(steps, users):
    """(steps*users)^2 permission matrix: token (t, i) sees (t', j) iff t' <= t."""
    return np.kron(np.tril(np.ones((steps, steps))), np.ones((users, users))).astype(bool)


def embed(matrix, model):
    """Affine projection of one feature matrix into the hidden space."""
    values = matrix.values if isinstance(matrix, FeatureMatrix) else np.asarray(matrix)
    if values.ndim != 2 or values.shape[1] != model.config.layout.width:
        raise ConfigError(
            f"feature width {values.shape} does not match layout width {model.config.layout.width}"
        )
    p = model.params
    return nm.add(nm.matmul(nm.constant(values), p["embed.weight"]), p["embed.bias"])


def positional_rows(config, steps):
    """Row indices into the positional table for a `steps`-long sequence."""
    n = config.layout.users
    if config.positional == "per_step_user":
        return np.arange(steps * n)
    return np.repeat(np.arange(steps), n)


def add_positional(hidden_seq, model):
    """Add the learnable positional rows; position of (t, i) is (t-1)*N + i."""
    steps = len(hidden_seq)
    if steps > model.config.max_steps:
        raise CapacityError(
            f"sequence length {steps} exceeds positional capacity {model.config.max_steps}"
        )
    n = model.config.layout.users
    rows = positional_rows(model.config, steps)
    out = []
    for t, h in enumerate(hidden_seq):
        pos = nm.take_rows(model.params["pos.table"], rows[t * n:(t + 1) * n])
        out.append(nm.add(h, pos))
    return out


def flatten_sequence(positioned):
    """Stack per-step hidden matrices: row (t-1)*N + i holds user i at step t."""
    return nm.concat_rows(positioned)


def unflatten(flat, steps, users):
    """Inverse of flatten_sequence for plain arrays."""
    return [flat[t * users:(t + 1) * users] for t in range(steps)]


def decoder_layer(hidden, params, mask, config, mode="eval", rng=None, trace=None, name="block"):
    """Pre-norm residual block: attention then feed-forward.

    A = H + MaskedMultiHead(LN(H)); out = A + FFN(LN(A)). Attention scores
    are scaled by 1/sqrt(head_dim) and masked positions get weight 0.
    """
    training = mode == "train"
    x = nm.layer_norm(hidden, params[f"{name}.ln1.gain"], params[f"{name}.ln1.bias"])
    q = nm.add(nm.matmul(x, params[f"{name}.attn.wq"]), params[f"{name}.attn.bq"])
    k = nm.add(nm.matmul(x, params[f"{name}.attn.wk"]), params[f"{name}.attn.bk"])
    v = nm.add(nm.matmul(x, params[f"{name}.attn.wv"]), params[f"{name}.attn.bv"])
    hd = config.head_dim
    att_scale = 1.0 / np.sqrt(hd)
    heads = []
    for h in range(config.heads):
        lo, hi = h * hd, (h + 1) * hd
        qh, kh, vh = (nm.slice_cols(m, lo, hi) for m in (q, k, v))
        w = nm.attention_weights(qh, kh, mask, att_scale)
        if trace is not None:
            trace[f"{name}.attn.h{h}"] = w.data.copy()
        heads.append(nm.matmul(w, vh))
    o = nm.add(nm.matmul(nm.concat_cols(heads), params[f"{name}.attn.wo"]),
               params[f"{name}.attn.bo"])
    o = nm.dropout(o, config.dropout, rng, training)
    a = nm.add(hidden, o)
    y = nm.layer_norm(a, params[f"{name}.ln2.gain"], params[f"{name}.ln2.bias"])
    f = nm.gelu(nm.add(nm.matmul(y, params[f"{name}.ffn.w1"]), params[f"{name}.ffn.b1"]))
    f = nm.add(nm.matmul(f, params[f"{name}.ffn.w2"]), params[f"{name}.ffn.b2"])
    f = nm.dropout(f, config.dropout, rng, training)
    return nm.add(a, f)


def _matrices(sequence):
    return list(sequence.matrices) if hasattr(sequence, "matrices") else list(sequence)


def forward_flat(sequence, model, mode="eval", rng=None, trace=None):
    """Full pipeline returning the flat (T*N) x width prediction tensor."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    mats = _matrices(sequence)
    cfg = model.config
    steps = len(mats)
    if steps < 2:
        raise ConfigError(f"need a sequence of at least 2 steps, got {steps}")
    if steps > cfg.max_steps:
        raise CapacityError(f"sequence length {steps} exceeds capacity {cfg.max_steps}")
    if mode == "train" and cfg.dropout > 0.0 and rng is None:
        raise ConfigError("training mode with dropout needs an rng")
    hidden = [embed(m, model) for m in mats]
    flat = flatten_sequence(add_positional(hidden, model))
    mask = build_causal_mask(steps, cfg.layout.users)
    for l in range(cfg.layers):
        flat = decoder_layer(flat, model.params, mask, cfg, mode, rng, trace, name=f"block{l}")
    return nm.add(nm.matmul(flat, model.params["out.weight"]), model.params["out.bias"])


def forward(sequence, model, mode="eval", rng=None, trace=None):
    """Per-step predictions; the output at step t estimates the step t+1 features."""
    mats = _matrices(sequence)
    flat = forward_flat(mats, model, mode, rng, trace)
    return unflatten(flat.data, len(mats), model.config.layout.users)


def predict_next(sequence, model):
    """Sliced prediction of the step after the sequence's last step.

    Adjacency scores pass through the logistic function, so they live in
    (0, 1) and threshold 0.5 corresponds to logit 0.
    """
    mats = _matrices(sequence)
    blocks = slice_prediction(forward(mats, model)[-1], model.config.layout)
    blocks.adjacency_scores = expit(blocks.adjacency_scores)
    return blocks


def rollout(sequence, model, k, threshold=0.5, location_count=8, enforce_growth=False):
    """Autoregressive multi-step prediction.

    Each predicted step is decoded back into a valid feature matrix (binary
    symmetric adjacency, renormalized distributions, grid-snapped
    demographics) and appended to the input before predicting again. With
    `enforce_growth` the binarized adjacency is OR-ed with the previous step.
    """
    if k < 1:
        raise ConfigError(f"rollout needs k >= 1, got {k}")
    mats = _matrices(sequence)
    cfg = model.config
    if len(mats) + k > cfg.max_steps:
        raise CapacityError(
            f"rollout to {len(mats) + k} steps exceeds capacity {cfg.max_steps}"
        )
    n = cfg.layout.users
    out = []
    for _ in range(k):
        blocks = predict_next(mats, model)
        out.append(blocks)
        adj = binarize_adjacency(blocks.adjacency_scores, threshold)
        if enforce_growth:
            prev = np.rint(mats[-1].values[:, :n]).astype(np.uint8)
            adj = np.maximum(adj, prev)
        values = np.hstack([
            adj.astype(np.float64),
            snap_demographic_block(blocks.demographics, location_count),
            renormalize_rows(blocks.history),
            renormalize_engagement(blocks.engagement),
        ])
        mats.append(FeatureMatrix(mats[-1].step + 1, values, cfg.layout))
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model, path):
    """Versioned document: config plus every parameter as (name, shape, values)."""
    cfg = model.config
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "layout": {
                "users": cfg.layout.users,
                "demographic_width": cfg.layout.demographic_width,
                "history_width": cfg.layout.history_width,
                "engagement_width": cfg.layout.engagement_width,
            },
            "hidden_dim": cfg.hidden_dim,
            "layers": cfg.layers,
            "heads": cfg.heads,
            "dropout": cfg.dropout,
            "max_steps": cfg.max_steps,
            "positional": cfg.positional,
        },
        "params": [
            {"name": name, "shape": list(t.shape), "values": t.data.reshape(-1).tolist()}
            for name, t in model.params.items()
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_checkpoint(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: unknown checkpoint format {doc.get('format')!r}")
    c = doc["config"]
    config = EgptConfig(
        layout=FeatureLayout(**c["layout"]),
        hidden_dim=c["hidden_dim"], layers=c["layers"], heads=c["heads"],
        dropout=c["dropout"], max_steps=c["max_steps"], positional=c["positional"],
    )
    expected = parameter_shapes(config)
    params = {}
    for entry in doc["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected:
            raise ConfigError(f"{path}: unexpected parameter {name!r}")
        if shape != expected[name]:
            raise ConfigError(
                f"{path}: parameter {name} has shape {shape}, config implies {expected[name]}"
            )
        params[name] = nm.parameter(np.asarray(entry["values"]).reshape(shape))
    missing = set(expected) - set(params)
    if missing:
        raise ConfigError(f"{path}: missing parameters {sorted(missing)}")
    return EgptModel(config, params)
