"""Reconstruction attack against shared prototypes, random-guess baseline,
PSNR reporting, and the DP noise sweep.

The attacker (a semi-honest server or a compromised participant) holds a
participant's local model and its uploaded class prototypes, and gradient-
descends a feature profile whose embedding matches the prototype. Success is
measured as MSE against the class's true mean feature vector, compared with
uniform random guessing inside the training feature bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nn
from .prototypes import PrototypeSet


@dataclass
class AttackResult:
    x_hat: np.ndarray  # best iterate by objective
    objective: float  # final (best) embedding-distance objective
    iterations: int
    accepted_trace: list[float]  # objective at each accepted improvement


@dataclass
class AuditEntry:
    participant: int
    class_id: int
    x_hat: np.ndarray
    reconstructed_mse: float  # vs the class-mean profile, mean over features
    random_mse: float  # same target, uniform guessing baseline
    per_feature_psnr: np.ndarray  # NaN where the feature range is zero
    mean_psnr: float
    dp_sigma: float
    iterations: int
    final_objective: float


@dataclass
class AuditReport:
    entries: list[AuditEntry] = field(default_factory=list)

    def fraction_beating_random(self) -> float:
        if not self.entries:
            return 0.0
        wins = sum(1 for e in self.entries if e.reconstructed_mse < e.random_mse)
        return wins / len(self.entries)

    def mean_reconstructed_mse(self) -> float:
        return float(np.mean([e.reconstructed_mse for e in self.entries]))

    def mean_random_mse(self) -> float:
        return float(np.mean([e.random_mse for e in self.entries]))

    def mean_psnr(self) -> float:
        return float(np.mean([e.mean_psnr for e in self.entries]))


def reconstruct_profile(
    model: nn.ModelParams,
    target_prototype: np.ndarray,
    feature_bounds: np.ndarray,
    steps: int = 2000,
    step_size: float = 0.05,
    rng: Optional[np.random.Generator] = None,
    restarts: int = 1,
) -> AttackResult:
    """Recover a feature profile whose embedding matches the prototype.

    Plain gradient descent on ||embed(x) - prototype||^2 from a uniform
    random start inside the per-feature bounds, every iterate clamped to the
    bounds; the best iterate by objective is kept. Deterministic given rng.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    bounds = np.asarray(feature_bounds, dtype=np.float64)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if lo.shape[0] != model.input_dim:
        raise ValueError("feature bounds width must match the model input")
    best_x, best_obj, trace = None, np.inf, []
    evals = 0
    for _ in range(max(1, restarts)):
        x = rng.uniform(lo, hi)
        obj = nn.embedding_objective(model, x, target_prototype)
        if not np.isfinite(obj):
            raise FloatingPointError("non-finite attack objective at the start point")
        if obj < best_obj:
            best_obj, best_x = obj, x.copy()
            trace.append(float(obj))
        for _ in range(steps):
            grad = nn.input_gradient(model, x, target_prototype)
            x = np.clip(x - step_size * grad, lo, hi)
            obj = nn.embedding_objective(model, x, target_prototype)
            evals += 1
            if not np.isfinite(obj):
                raise FloatingPointError(
                    f"non-finite attack objective after {evals} iterations"
                )
            if obj < best_obj:
                best_obj, best_x = obj, x.copy()
                trace.append(float(obj))
    return AttackResult(
        x_hat=best_x, objective=float(best_obj), iterations=evals, accepted_trace=trace
    )


def _batched_attack(
    model: nn.ModelParams,
    targets: np.ndarray,  # (B, d)
    feature_bounds: np.ndarray,
    steps: int,
    step_size: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Run independent attacks for several targets at once (the per-instance
    objectives are separable, so one batched forward/backward serves all)."""
    bounds = np.asarray(feature_bounds, dtype=np.float64)
    lo, hi = bounds[:, 0], bounds[:, 1]
    b = targets.shape[0]
    x = rng.uniform(lo, hi, size=(b, lo.size))
    obj = nn.embedding_objective(model, x, targets)
    best_x, best_obj = x.copy(), obj.copy()
    for _ in range(steps):
        grad = nn.input_gradient(model, x, targets)
        x = np.clip(x - step_size * grad, lo, hi)
        obj = nn.embedding_objective(model, x, targets)
        if not np.all(np.isfinite(obj)):
            raise FloatingPointError("non-finite attack objective")
        improved = obj < best_obj
        best_x[improved] = x[improved]
        best_obj[improved] = obj[improved]
    return best_x, best_obj


def class_mean_profile(
    features: np.ndarray, labels: np.ndarray, class_id: int
) -> np.ndarray:
    """Per-feature mean over a participant's samples of one class."""
    rows = np.asarray(labels) == class_id
    if not rows.any():
        raise ValueError(f"class {class_id} absent from the shard")
    return np.asarray(features)[rows].mean(axis=0)


def random_baseline_mse(
    feature_bounds: np.ndarray,
    class_mean: np.ndarray,
    trials: int,
    rng: np.random.Generator,
) -> float:
    """Mean MSE between uniform draws inside the training bounds and the
    class-mean profile."""
    if trials < 1:
        raise ValueError("need at least one trial")
    bounds = np.asarray(feature_bounds, dtype=np.float64)
    draws = rng.uniform(bounds[:, 0], bounds[:, 1], size=(trials, bounds.shape[0]))
    return float(np.mean((draws - np.asarray(class_mean)) ** 2))


def run_audit(
    local_params: Sequence[nn.ModelParams],
    local_prototypes: Sequence[PrototypeSet],
    shards: Sequence[tuple[np.ndarray, np.ndarray]],
    raw_bounds: np.ndarray,
    scaler=None,
    steps: int = 2000,
    step_size: float = 0.05,
    baseline_trials: int = 10000,
    seed: int = 0,
    dp_sigma: float = 0.0,
) -> AuditReport:
    """Attack every (participant, class) pair visible to the server.

    `shards` and `local_params` live in model-input space; `raw_bounds` are
    the original-unit training feature ranges. When a scaler is given, the
    attack runs in model space within the transformed bounds and all reported
    MSE/PSNR values are mapped back to original units; the random baseline
    draws uniformly inside the raw training bounds.
    """
    from .seeding import stream  # local import: audit is otherwise seed-agnostic

    raw_bounds = np.asarray(raw_bounds, dtype=np.float64)
    if scaler is not None:
        lo = scaler.transform(raw_bounds[:, 0])
        hi = scaler.transform(raw_bounds[:, 1])
        model_bounds = np.stack([np.minimum(lo, hi), np.maximum(lo, hi)], axis=1)
    else:
        model_bounds = raw_bounds
    ranges = raw_bounds[:, 1] - raw_bounds[:, 0]

    report = AuditReport()
    for i, (params, protos) in enumerate(zip(local_params, local_prototypes)):
        class_ids = np.flatnonzero(protos.present)
        if class_ids.size == 0:
            continue
        targets = protos.vectors[class_ids]
        x_hats, objectives = _batched_attack(
            params, targets, model_bounds, steps, step_size, stream(seed, "attack", i)
        )
        features, labels = shards[i]
        for row, class_id in enumerate(class_ids):
            mean_model = class_mean_profile(features, labels, int(class_id))
            if scaler is not None:
                x_raw = scaler.inverse(x_hats[row])
                mean_raw = scaler.inverse(mean_model)
            else:
                x_raw, mean_raw = x_hats[row], mean_model
            per_feature_sq = (x_raw - mean_raw) ** 2
            psnr_values, mean_psnr, _ = psnr(per_feature_sq, ranges)
            report.entries.append(
                AuditEntry(
                    participant=i,
                    class_id=int(class_id),
                    x_hat=x_raw,
                    reconstructed_mse=float(per_feature_sq.mean()),
                    random_mse=random_baseline_mse(
                        raw_bounds,
                        mean_raw,
                        baseline_trials,
                        stream(seed, "attack", i, int(class_id)),
                    ),
                    per_feature_psnr=psnr_values,
                    mean_psnr=mean_psnr,
                    dp_sigma=dp_sigma,
                    iterations=steps,
                    final_objective=float(objectives[row]),
                )
            )
    return report


def psnr(
    per_feature_mse: np.ndarray, per_feature_range: np.ndarray
) -> tuple[np.ndarray, float, list[int]]:
    """Per-feature PSNR = 10*log10(range^2 / mse) and its mean.

    Zero-range features are excluded from the mean and reported; if every
    feature has zero range there is nothing to measure.
    """
    mse = np.asarray(per_feature_mse, dtype=np.float64)
    rng_ = np.asarray(per_feature_range, dtype=np.float64)
    included = rng_ > 0
    if not included.any():
        raise ValueError("all features have zero range")
    values = np.full(mse.shape, np.nan)
    with np.errstate(divide="ignore"):
        values[included] = 10.0 * np.log10(rng_[included] ** 2 / mse[included])
    excluded = np.flatnonzero(~included).tolist()
    return values, float(np.mean(values[included])), excluded
