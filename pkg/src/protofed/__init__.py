"""Prototype-sharing federated learning for intrusion detection on non-IID
data: a minimal numpy training stack, five federation strategies, the
evaluation protocol (rare-class, zero-shot, Mann-Whitney), and a privacy
audit of the shared prototypes."""

__version__ = "0.1.0"

from . import audit, data, federation, metrics, nn, prototypes, seeding  # noqa: F401
from .data import (  # noqa: F401
    Dataset,
    PartitionPlan,
    dirichlet_partition,
    load_csv,
    preprocess,
    split_train_test,
    synthesize_gaussian,
)
from .federation import (  # noqa: F401
    FederationConfig,
    Strategy,
    aggregate_models,
    communication_cost,
    local_update,
    make_strategy,
    run_round,
    run_training,
)
from .metrics import evaluate, mann_whitney_u, select_rare_classes  # noqa: F401
from .nn import LossSpec, ModelParams, backward, build_mlp, build_model, forward, input_gradient, sgd_step  # noqa: F401
from .prototypes import (  # noqa: F401
    PrototypeSet,
    add_dp_noise,
    aggregate_global_prototypes,
    alignment_loss,
    compute_local_prototypes,
    nearest_prototype_classify,
)
