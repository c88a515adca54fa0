"""Federated training: the server round loop, per-participant local updates
on the three-term objective, five aggregation strategies, and exact
communication accounting.

Local updates within a round are independent (no shared mutable state) and
aggregation folds submissions in participant-id order, so results never
depend on scheduling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import nn
from .data import Dataset
from .metrics import MetricsReport, evaluate, summarize_reports
from .prototypes import (
    PrototypeAccumulator,
    PrototypeSet,
    add_dp_noise,
    aggregate_global_prototypes,
    nearest_prototype_classify,
)
from .seeding import stream

# ---------------------------------------------------------------------------
# Strategies

SCOPE_ALL = "all"
SCOPE_EMBEDDING = "embedding"
SCOPE_NONE = "none"

INFER_HEAD = "head"
INFER_PROTOTYPE = "prototype"


@dataclass(frozen=True)
class Strategy:
    """One federated scheme: which loss terms are active, what gets
    aggregated, and how participants classify at inference time.

    lam weights the prototype-alignment loss, mu the proximal pull toward the
    round-start parameters. aggregate_scope picks the parameter sections the
    server averages; keep_local_model means a participant resumes from its own
    parameters next round instead of the broadcast model.
    """

    name: str
    lam: float
    mu: float
    aggregate_scope: str
    exchange_prototypes: bool
    inference: str
    keep_local_model: bool

    def with_overrides(self, **kwargs) -> "Strategy":
        return replace(self, **kwargs)


def fedavg() -> Strategy:
    """Plain parameter averaging (the Cerberus baseline); no prototypes."""
    return Strategy("fedavg", 0.0, 0.0, SCOPE_ALL, False, INFER_HEAD, False)


def fedprox(mu: float = 0.1) -> Strategy:
    """Parameter averaging plus a proximal pull toward the global model."""
    return Strategy("fedprox", 0.0, mu, SCOPE_ALL, False, INFER_HEAD, False)


def fedproto(lam: float = 1.0) -> Strategy:
    """Prototype exchange only: model parameters never leave a participant."""
    return Strategy("fedproto", lam, 0.0, SCOPE_NONE, True, INFER_PROTOTYPE, True)


def protean(lam: float = 1.0, mu: float = 0.1) -> Strategy:
    """Full-parameter aggregation plus prototype exchange and alignment."""
    return Strategy("protean", lam, mu, SCOPE_ALL, True, INFER_PROTOTYPE, False)


def protean_embedding(lam: float = 1.0, mu: float = 0.1) -> Strategy:
    """Like protean, but only embedding-section parameters are aggregated;
    each participant keeps its own head, and inference is nearest-prototype."""
    return Strategy("protean_embedding", lam, mu, SCOPE_EMBEDDING, True, INFER_PROTOTYPE, True)


def local_only() -> Strategy:
    """No communication at all: isolated local training, prototype inference
    against the participant's own prototypes (the zero-shot baseline arm)."""
    return Strategy("local", 0.0, 0.0, SCOPE_NONE, False, INFER_PROTOTYPE, True)


_FACTORIES = {
    "fedavg": fedavg,
    "cerberus": fedavg,
    "fedprox": fedprox,
    "fedproto": fedproto,
    "protean": protean,
    "protean_embedding": protean_embedding,
    "protean-embedding": protean_embedding,
    "local": local_only,
}


def make_strategy(name: str, lam: Optional[float] = None, mu: Optional[float] = None) -> Strategy:
    """Build a strategy by name (aliases accepted), optionally overriding the
    hyperparameters it actually uses. Unused weights stay pinned at zero."""
    key = name.lower()
    if key not in _FACTORIES:
        raise ValueError(f"unknown strategy {name!r}; known: {sorted(set(_FACTORIES))}")
    strategy = _FACTORIES[key]()
    overrides = {}
    if lam is not None and strategy.lam != 0.0:
        overrides["lam"] = lam
    if mu is not None and strategy.mu != 0.0:
        overrides["mu"] = mu
    return strategy.with_overrides(**overrides) if overrides else strategy


# ---------------------------------------------------------------------------
# Local update


@dataclass
class LocalUpdateResult:
    params: nn.ModelParams
    prototypes: PrototypeSet  # eval-mode, accumulated over the final epoch
    epoch_losses: list[dict]  # per-epoch means of the weighted loss terms
    mean_objective: float  # mean total objective over every batch of the run


def local_update(
    features: np.ndarray,
    labels: np.ndarray,
    start_params: nn.ModelParams,
    global_prototypes: PrototypeSet,
    strategy: Strategy,
    epochs: int,
    batch_size: int,
    eta: float,
    shuffle_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
) -> LocalUpdateResult:
    """Minibatch SGD on the three-term objective for one participant.

    Cross-entropy is averaged over each batch; alignment compares the batch's
    class prototypes to the previous-round global ones (skipping classes
    absent on either side); the proximal term pulls toward `start_params`.
    Reported prototypes are eval-mode embeddings accumulated over the final
    epoch, computed before each step.
    """
    n = len(labels)
    if n == 0:
        raise ValueError("shard is empty")
    if eta <= 0:
        raise ValueError("eta must be positive for training")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    batch_size = max(1, min(batch_size, n))  # clamp to shard size

    spec = nn.LossSpec(
        ce_weight=1.0,
        align_weight=strategy.lam,
        prox_weight=strategy.mu,
        global_prototypes=global_prototypes if strategy.lam != 0.0 else None,
        prox_reference=start_params.values.copy() if strategy.mu != 0.0 else None,
    )

    params = start_params
    epoch_losses = []
    all_totals = []
    proto_acc = PrototypeAccumulator(params.num_classes, params.embedding_dim)
    for epoch in range(epochs):
        final_epoch = epoch == epochs - 1
        order = shuffle_rng.permutation(n)
        sums = {"total": 0.0, "cross_entropy": 0.0, "alignment": 0.0, "proximal": 0.0}
        batches = 0
        for lo in range(0, n, batch_size):
            sel = order[lo : lo + batch_size]
            x, y = features[sel], labels[sel]
            if final_epoch:
                proto_acc.add(nn.embed(params, x), y)
            total, parts, grad = nn.loss_and_gradient(
                params, x, y, spec, train_mode=True, rng=dropout_rng
            )
            params = nn.sgd_step(params, grad, eta)
            sums["total"] += total
            for key in parts:
                sums[key] += parts[key]
            all_totals.append(total)
            batches += 1
        epoch_losses.append({key: value / batches for key, value in sums.items()})

    return LocalUpdateResult(
        params=params,
        prototypes=proto_acc.to_prototypes(),
        epoch_losses=epoch_losses,
        mean_objective=float(np.mean(all_totals)),
    )


# ---------------------------------------------------------------------------
# Aggregation


def aggregate_models(
    submissions: Sequence[nn.ModelParams],
    scope: str = SCOPE_ALL,
    fallback: Optional[nn.ModelParams] = None,
) -> nn.ModelParams:
    """Elementwise mean over the scope'd parameter section.

    scope="all" averages everything. scope="embedding" averages only the
    embedding sections; the returned global model takes its head from
    `fallback` (the previous global model), since heads stay local.
    """
    if not submissions:
        raise ValueError("nothing to aggregate")
    first = submissions[0]
    for sub in submissions[1:]:
        if sub.layers != first.layers or sub.m != first.m:
            raise ValueError("parameter layouts differ across submissions")
    stacked = np.stack([sub.values for sub in submissions])
    if scope == SCOPE_ALL:
        return first.with_values(stacked.mean(axis=0))
    if scope == SCOPE_EMBEDDING:
        if fallback is None:
            raise ValueError("embedding-scope aggregation needs the previous global model")
        values = fallback.values.copy()
        boundary = first.embedding_param_count
        values[:boundary] = stacked[:, :boundary].mean(axis=0)
        return first.with_values(values)
    raise ValueError(f"unknown aggregation scope {scope!r}")


def compose_embedding_head(
    embedding_source: nn.ModelParams, head_source: nn.ModelParams
) -> nn.ModelParams:
    """Model with the embedding section of one parameter vector and the head
    of another (used when heads stay participant-local)."""
    values = embedding_source.values.copy()
    values[embedding_source.embedding_param_count :] = head_source.head_section
    return embedding_source.with_values(values)


def communication_cost(
    strategy: Strategy, num_participants: int, scoped_param_count: int, dim: int, num_classes: int
) -> int:
    """Serialized scalars exchanged per round.

    `scoped_param_count` is the parameter count within the strategy's
    aggregation scope (full m, the embedding-section size, or irrelevant for
    prototype-only schemes). Each participant uploads its scoped parameters
    and/or K d-dimensional prototypes and receives the aggregates back, so
    parameter-averaging schemes cost 2*M*m', prototype-only 2*M*d*K, and
    combined schemes 2*M*(m' + d*K). Isolated local training costs nothing.
    """
    per_direction = 0
    if strategy.aggregate_scope != SCOPE_NONE:
        per_direction += scoped_param_count
    if strategy.exchange_prototypes:
        per_direction += dim * num_classes
    return 2 * num_participants * per_direction


# ---------------------------------------------------------------------------
# Round loop


@dataclass
class RoundState:
    round_index: int
    global_params: nn.ModelParams
    global_prototypes: PrototypeSet
    local_params: list[nn.ModelParams]
    local_prototypes: list[PrototypeSet]  # as uploaded (DP noise included)


@dataclass
class RoundReport:
    round_index: int
    strategy: str
    participant_losses: list[dict]  # final-epoch mean loss terms, per participant
    objective: float  # round-averaged total objective across participants
    scalars_up: int
    scalars_down: int
    bytes_up: int
    bytes_down: int
    absent_global_classes: list[int]
    summary: Optional[dict] = None  # participant-averaged test metrics
    per_participant: Optional[list[MetricsReport]] = None
    wall_time_s: float = 0.0  # operator info; excluded from serialized records


@dataclass(frozen=True)
class FederationConfig:
    epochs: int = 3
    batch_size: int = 64
    eta: float = 0.01
    dp_sigma: float = 0.0
    seed: int = 0
    proto_average_contributors_only: bool = True
    inference_mode: str = "default"  # "default" | "head" | "prototype"


def init_state(
    input_dim: int,
    num_classes: int,
    num_participants: int,
    cfg: FederationConfig,
    model_kwargs: Optional[dict] = None,
) -> RoundState:
    """Round-0 state: one seeded model broadcast to every participant and an
    empty (all-absent) global prototype set."""
    init_seed = int(stream(cfg.seed, "init").integers(2**31))
    model = nn.build_model(input_dim, num_classes, init_seed, **(model_kwargs or {}))
    return RoundState(
        round_index=0,
        global_params=model,
        global_prototypes=PrototypeSet.empty(num_classes, model.embedding_dim),
        local_params=[model.copy() for _ in range(num_participants)],
        local_prototypes=[
            PrototypeSet.empty(num_classes, model.embedding_dim)
            for _ in range(num_participants)
        ],
    )


def _start_params(state: RoundState, strategy: Strategy, participant: int) -> nn.ModelParams:
    if strategy.aggregate_scope == SCOPE_EMBEDDING:
        return compose_embedding_head(state.global_params, state.local_params[participant])
    if strategy.keep_local_model:
        return state.local_params[participant]
    return state.global_params


def run_round(
    state: RoundState,
    strategy: Strategy,
    shards: Sequence[tuple[np.ndarray, np.ndarray]],
    cfg: FederationConfig,
) -> tuple[RoundState, RoundReport]:
    """One federated round: broadcast, local updates, aggregation, and
    exact communication bookkeeping. Deterministic given cfg.seed."""
    t0 = time.monotonic()
    round_index = state.round_index + 1
    num_participants = len(shards)
    results: list[LocalUpdateResult] = []
    uploads: list[PrototypeSet] = []
    for i, (x, y) in enumerate(shards):
        try:
            result = local_update(
                x,
                y,
                _start_params(state, strategy, i),
                state.global_prototypes,
                strategy,
                cfg.epochs,
                cfg.batch_size,
                cfg.eta,
                shuffle_rng=stream(cfg.seed, "shuffle", i, round_index),
                dropout_rng=stream(cfg.seed, "dropout", i, round_index),
            )
        except Exception as exc:
            raise RuntimeError(f"participant {i} failed in round {round_index}: {exc}") from exc
        protos = result.prototypes
        if strategy.exchange_prototypes and cfg.dp_sigma > 0:
            protos = add_dp_noise(protos, cfg.dp_sigma, stream(cfg.seed, "dp", i, round_index))
        results.append(result)
        uploads.append(protos)

    if strategy.aggregate_scope == SCOPE_NONE:
        new_global = state.global_params
    else:
        new_global = aggregate_models(
            [r.params for r in results], strategy.aggregate_scope, fallback=state.global_params
        )
    if strategy.exchange_prototypes:
        new_protos = aggregate_global_prototypes(
            uploads, contributors_only=cfg.proto_average_contributors_only
        )
    else:
        new_protos = state.global_prototypes

    model = state.global_params
    scoped = {
        SCOPE_ALL: model.m,
        SCOPE_EMBEDDING: model.embedding_param_count,
        SCOPE_NONE: 0,
    }[strategy.aggregate_scope]
    proto_scalars = model.embedding_dim * model.num_classes if strategy.exchange_prototypes else 0
    scalars_per_direction = num_participants * (scoped + proto_scalars)

    new_state = RoundState(
        round_index=round_index,
        global_params=new_global,
        global_prototypes=new_protos,
        local_params=[r.params for r in results],
        local_prototypes=uploads,
    )
    report = RoundReport(
        round_index=round_index,
        strategy=strategy.name,
        participant_losses=[r.epoch_losses[-1] for r in results],
        objective=float(np.mean([r.mean_objective for r in results])),
        scalars_up=scalars_per_direction,
        scalars_down=scalars_per_direction,
        bytes_up=scalars_per_direction * 8,
        bytes_down=scalars_per_direction * 8,
        absent_global_classes=np.flatnonzero(~new_protos.present).tolist()
        if strategy.exchange_prototypes
        else [],
        wall_time_s=time.monotonic() - t0,
    )
    return new_state, report


# ---------------------------------------------------------------------------
# Inference wrappers


class HeadPredictor:
    """Classify with the network head (argmax over log-probabilities)."""

    def __init__(self, model: nn.ModelParams):
        self.model = model

    def predict(self, features: np.ndarray) -> np.ndarray:
        return nn.predict(self.model, features)


class PrototypePredictor:
    """Classify by nearest prototype in the model's embedding space."""

    def __init__(self, model: nn.ModelParams, prototypes: PrototypeSet):
        self.model = model
        self.prototypes = prototypes

    def predict(self, features: np.ndarray) -> np.ndarray:
        return nearest_prototype_classify(nn.embed(self.model, features), self.prototypes)


def make_predictors(state: RoundState, strategy: Strategy, inference_mode: str = "default"):
    """Per-participant classifiers for the current state.

    Schemes with a shared global model classify with it; schemes whose models
    stay local classify with each participant's own model. Prototype inference
    uses global prototypes where they are exchanged, otherwise the
    participant's own.
    """
    mode = strategy.inference if inference_mode == "default" else inference_mode
    predictors = []
    for i in range(len(state.local_params)):
        if strategy.keep_local_model:
            model = state.local_params[i]
            if strategy.aggregate_scope == SCOPE_EMBEDDING:
                model = compose_embedding_head(state.global_params, state.local_params[i])
        else:
            model = state.global_params
        if mode == INFER_HEAD:
            predictors.append(HeadPredictor(model))
        elif mode == INFER_PROTOTYPE:
            protos = (
                state.global_prototypes
                if strategy.exchange_prototypes
                else state.local_prototypes[i]
            )
            predictors.append(PrototypePredictor(model, protos))
        else:
            raise ValueError(f"unknown inference mode {mode!r}")
    return predictors


def evaluate_state(
    state: RoundState,
    strategy: Strategy,
    test: Dataset,
    inference_mode: str = "default",
) -> tuple[dict, list[MetricsReport]]:
    """Participant-averaged test metrics plus the per-participant reports."""
    predictors = make_predictors(state, strategy, inference_mode)
    reports = []
    seen: dict[int, MetricsReport] = {}
    for i, predictor in enumerate(predictors):
        key = id(predictor.model)
        if key in seen and not strategy.keep_local_model:
            base = seen[key]
            reports.append(
                MetricsReport(
                    participant=str(i),
                    confusion=base.confusion,
                    accuracy=base.accuracy,
                    macro_accuracy=base.macro_accuracy,
                    macro_precision=base.macro_precision,
                    macro_f1=base.macro_f1,
                    per_class_accuracy=base.per_class_accuracy,
                    undefined_precision_classes=base.undefined_precision_classes,
                )
            )
            continue
        report = evaluate(predictor, test, participant=str(i))
        seen[key] = report
        reports.append(report)
    return summarize_reports(reports), reports


# ---------------------------------------------------------------------------
# Multi-round driver


def run_training(
    train: Dataset,
    shard_indices: Sequence[np.ndarray],
    strategy: Strategy,
    cfg: FederationConfig,
    rounds: int,
    test: Optional[Dataset] = None,
    model_kwargs: Optional[dict] = None,
    keep_history: bool = False,
) -> tuple[RoundState, list[RoundReport], list[RoundState]]:
    """Run the full federated loop; returns the final state, per-round
    reports (with test metrics when a test set is given), and optionally the
    state after every round for checkpointing."""
    shards = [(train.features[idx], train.labels[idx]) for idx in shard_indices]
    state = init_state(
        train.num_features, train.num_classes, len(shards), cfg, model_kwargs
    )
    reports: list[RoundReport] = []
    history: list[RoundState] = []
    for _ in range(rounds):
        state, report = run_round(state, strategy, shards, cfg)
        if test is not None:
            report.summary, report.per_participant = evaluate_state(
                state, strategy, test, cfg.inference_mode
            )
        reports.append(report)
        if keep_history:
            history.append(state)
    return state, reports, history
