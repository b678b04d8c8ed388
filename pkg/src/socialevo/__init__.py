"""Synthetic temporal social networks and a next-step evolution forecaster.

The package generates seeded datasets of growing follower graphs with
demographics, posting history and engagement; trains a decoder-only
transformer to predict every user's next evolution step; and evaluates
predictions with link-prediction scores and graph-structure metrics.
"""

from .features import (
    FeatureLayout, FeatureMatrix, FeatureSequence, PredictionBlocks,
    binarize_adjacency, build_sequence, decode_feature_matrix, encode_snapshot,
    slice_prediction,
)
from .egpt import (
    EgptConfig, EgptModel, forward, init_model, load_checkpoint, predict_next,
    rollout, save_checkpoint,
)
from .graphmetrics import (
    MetricsReport, assortativity_categorical, assortativity_numeric, density,
    report, triadic_closure,
)
from .synthgen import (
    Dataset, GeneratorConfig, HomophilyWeights, TemporalSnapshot, UserProfile,
    generate_dataset, load_dataset, save_dataset,
)
from .trainer import (
    Hyperparams, LinkScores, TrainReport, evaluate_links, persistence_baseline,
    random_baseline_f1, sweep, train,
)

__version__ = "0.1.0"
