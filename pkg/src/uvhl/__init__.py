"""Uncertainty vertex-weighted hypergraph learning.

Cases are scored for aleatoric and epistemic uncertainty with a dual-head
perceptron under Monte-Carlo dropout, connected by kNN hyperedges built per
feature group, and classified by a closed-form transductive solve in which
every vertex is weighted by its uncertainty.
"""

from uvhl.data import (
    CAP,
    COVID,
    UNLABELED,
    Dataset,
    FoldPlan,
    NormalizationParams,
    SynthSpec,
    apply_normalization,
    fit_normalization,
    load_dataset,
    save_dataset,
    stratified_kfold,
    synth_generate,
)
from uvhl.errors import (
    ConstructionError,
    ConvergenceError,
    IntegrityError,
    ParseError,
    SchemaError,
    ShapeError,
    SingularityError,
    TrainingError,
)
from uvhl.hypergraph import Hypergraph, build_incidence, knn_hyperedges, theta
from uvhl.solver import (
    objective,
    predict_labels,
    solve_closed_form,
    solve_iterative,
)
from uvhl.uncertainty import (
    TrainConfig,
    UncertaintyModel,
    VertexWeights,
    aleatoric_score,
    attenuated_loss,
    epistemic_score,
    mc_forward,
    mean_prediction,
    normalize_scores,
    train,
)

__version__ = "0.1.0"
