"""Experiment orchestration: validated configs, deterministic multi-seed runs,
strategy comparison on shared partitions, the DP sweep, and persistence.

Every run is a pure function of its config: datasets, partitions, parameter
initialization, dropout, DP noise, and attack starts all derive from the
config's seeds through named streams, so re-running a config file reproduces
every output byte for byte. Metric records are newline-delimited JSON, one
schema-versioned record per line.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .audit import AuditReport, run_audit
from .data import (
    Dataset,
    PartitionPlan,
    Scaler,
    apply_scaler,
    dirichlet_partition,
    fit_scaler,
    load_csv,
    load_schema,
    split_train_test,
    synthesize_gaussian,
)
from .federation import (
    FederationConfig,
    RoundReport,
    RoundState,
    Strategy,
    make_predictors,
    make_strategy,
    run_training,
)
from .metrics import (
    MetricsReport,
    RareClassEntry,
    ZeroShotRow,
    select_rare_classes,
    zero_shot_report,
)

RECORD_SCHEMA = "protofed/v1"

_KNOWN_STRATEGIES = (
    "fedavg",
    "cerberus",
    "fedprox",
    "fedproto",
    "protean",
    "protean_embedding",
    "local",
)


class ConfigError(ValueError):
    """Invalid experiment config; the message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a run bitwise."""

    # dataset source: synthetic Gaussian blobs or a schema-described CSV
    dataset_kind: str = "synthetic"
    csv_path: Optional[str] = None
    csv_schema: Optional[str] = None
    classes: int = 6
    features: int = 16
    per_class: int = 600
    separation: float = 4.0
    noise_sd: float = 1.0
    preprocess: str = "none"  # none | minmax | zscore
    train_fraction: float = 0.8
    # federation shape
    participants: int = 10
    alpha: float = 0.5
    strategy: str = "protean"
    lam: float = 1.0
    mu: float = 0.1
    eta: float = 0.01
    rounds: int = 10
    epochs: int = 3
    batch_size: int = 64
    dp_sigma: float = 0.0
    inference: str = "default"  # default | head | prototype
    proto_average_contributors_only: bool = True
    model: dict = field(default_factory=dict)  # build_model overrides
    # protocol extras
    zero_shot: bool = True
    rare_classes: bool = True
    checkpoint: str = "all"  # all | final | none
    audit_enabled: bool = False
    attack_steps: int = 2000
    attack_step_size: float = 0.05
    baseline_trials: int = 10000
    # runs
    seeds: tuple = (0, 1, 2)
    output_dir: Optional[str] = None

    def federation_config(self, seed: int) -> FederationConfig:
        return FederationConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            eta=self.eta,
            dp_sigma=self.dp_sigma,
            seed=seed,
            proto_average_contributors_only=self.proto_average_contributors_only,
            inference_mode=self.inference,
        )

    def strategy_obj(self) -> Strategy:
        return make_strategy(self.strategy, lam=self.lam, mu=self.mu)

    def canonical_dict(self) -> dict:
        """Run-defining fields only: where outputs land does not change what
        gets computed, so output_dir stays out of the hash."""
        raw = asdict(self)
        raw["seeds"] = list(self.seeds)
        raw.pop("output_dir")
        return raw

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_FIELD_CHECKS = {
    "dataset_kind": lambda v: v in ("synthetic", "csv"),
    "preprocess": lambda v: v in ("none", "minmax", "min-max", "zscore", "z-score"),
    "strategy": lambda v: str(v).lower() in _KNOWN_STRATEGIES,
    "inference": lambda v: v in ("default", "head", "prototype"),
    "checkpoint": lambda v: v in ("all", "final", "none"),
    "participants": lambda v: int(v) >= 2,
    "alpha": lambda v: float(v) > 0,
    "rounds": lambda v: int(v) >= 1,
    "epochs": lambda v: int(v) >= 1,
    "batch_size": lambda v: int(v) >= 1,
    "eta": lambda v: float(v) > 0,
    "mu": lambda v: float(v) >= 0,
    "lam": lambda v: float(v) >= 0,
    "dp_sigma": lambda v: float(v) >= 0,
    "train_fraction": lambda v: 0.0 < float(v) < 1.0,
    "classes": lambda v: int(v) >= 2,
    "features": lambda v: int(v) >= 4,
    "per_class": lambda v: int(v) >= 1,
    "noise_sd": lambda v: float(v) > 0,
    "attack_steps": lambda v: int(v) >= 1,
    "baseline_trials": lambda v: int(v) >= 1,
}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate a config, reporting bad fields by name."""
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    merged = {**raw}
    if "seeds" in merged:
        try:
            merged["seeds"] = tuple(int(s) for s in merged["seeds"])
        except (TypeError, ValueError):
            raise ConfigError("seeds: must be a list of integers")
        if not merged["seeds"]:
            raise ConfigError("seeds: must be nonempty")
    config = ExperimentConfig(**merged)
    for name, check in _FIELD_CHECKS.items():
        value = getattr(config, name)
        try:
            ok = check(value)
        except (TypeError, ValueError):
            ok = False
        if not ok:
            raise ConfigError(f"{name}: invalid value {value!r}")
    if config.dataset_kind == "csv":
        if not config.csv_path:
            raise ConfigError("csv_path: required when dataset_kind is 'csv'")
        if not config.csv_schema:
            raise ConfigError("csv_schema: required when dataset_kind is 'csv'")
    return config


def load_config(path: str | Path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a YAML or JSON config file, applying CLI-style overrides."""
    text = Path(path).read_text()
    raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# Data preparation (strategy-independent, so comparisons share partitions)


@dataclass
class PreparedData:
    train: Dataset
    test: Dataset
    plan: PartitionPlan
    scaler: Optional[Scaler]

    def shards(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [
            (self.train.features[idx], self.train.labels[idx]) for idx in self.plan.shards
        ]


def prepare_data(config: ExperimentConfig, seed: int) -> PreparedData:
    """Build, split, normalize, and partition the dataset for one seed."""
    if config.dataset_kind == "synthetic":
        dataset = synthesize_gaussian(
            config.classes,
            config.features,
            config.per_class,
            config.separation,
            seed=seed,
            noise_sd=config.noise_sd,
        )
    else:
        dataset = load_csv(config.csv_path, load_schema(config.csv_schema))
    train, test = split_train_test(dataset, config.train_fraction, seed=seed)
    scaler = None
    if config.preprocess != "none":
        scaler = fit_scaler(train, config.preprocess)
        train = apply_scaler(train, scaler)
        test = apply_scaler(test, scaler)
    plan = dirichlet_partition(train, config.participants, config.alpha, seed=seed)
    return PreparedData(train=train, test=test, plan=plan, scaler=scaler)


# ---------------------------------------------------------------------------
# Single-seed run


@dataclass
class SeedRunResult:
    seed: int
    strategy: str
    prepared: PreparedData
    final_state: RoundState
    reports: list[RoundReport]
    history: list[RoundState]
    summary: dict  # final-round participant-averaged metrics
    per_participant: list[MetricsReport]
    local_state: Optional[RoundState] = None  # isolated-training arm
    zero_shot_rows: Optional[list[ZeroShotRow]] = None
    rare_entries: Optional[list[RareClassEntry]] = None
    audit: Optional[AuditReport] = None


def run_seed(
    config: ExperimentConfig,
    seed: int,
    prepared: Optional[PreparedData] = None,
    keep_history: bool = False,
) -> SeedRunResult:
    """Train one strategy for one seed and assemble all in-memory reports."""
    prepared = prepared or prepare_data(config, seed)
    strategy = config.strategy_obj()
    fed_cfg = config.federation_config(seed)
    final_state, reports, history = run_training(
        prepared.train,
        prepared.plan.shards,
        strategy,
        fed_cfg,
        rounds=config.rounds,
        test=prepared.test,
        model_kwargs=config.model or None,
        keep_history=keep_history or config.checkpoint == "all",
    )
    summary, per_participant = reports[-1].summary, reports[-1].per_participant

    result = SeedRunResult(
        seed=seed,
        strategy=strategy.name,
        prepared=prepared,
        final_state=final_state,
        reports=reports,
        history=history,
        summary=summary,
        per_participant=per_participant,
    )

    if config.rare_classes:
        result.rare_entries = []
        for i in range(config.participants):
            ids = select_rare_classes(prepared.plan.counts[i])
            accs = per_participant[i].per_class_accuracy
            values = [accs[j] for j in ids if not np.isnan(accs[j])]
            result.rare_entries.append(
                RareClassEntry(
                    participant=i,
                    class_ids=ids,
                    train_counts=(
                        int(prepared.plan.counts[i, ids[0]]),
                        int(prepared.plan.counts[i, ids[1]]),
                    ),
                    accuracy={strategy.name: float(np.mean(values)) if values else float("nan")},
                )
            )

    if config.zero_shot:
        local_cfg = replace(config, strategy="local", dp_sigma=0.0)
        local_state, _, _ = run_training(
            prepared.train,
            prepared.plan.shards,
            local_cfg.strategy_obj(),
            local_cfg.federation_config(seed),
            rounds=config.rounds,
            model_kwargs=config.model or None,
        )
        result.local_state = local_state
        missing = [
            np.flatnonzero(prepared.plan.counts[i] == 0).tolist()
            for i in range(config.participants)
        ]
        result.zero_shot_rows = zero_shot_report(
            make_predictors(local_state, local_cfg.strategy_obj()),
            make_predictors(final_state, strategy, config.inference),
            missing,
            prepared.test,
        )

    if config.audit_enabled:
        result.audit = run_audit(
            final_state.local_params,
            final_state.local_prototypes,
            prepared.shards(),
            prepared.train.feature_ranges,
            scaler=prepared.scaler,
            steps=config.attack_steps,
            step_size=config.attack_step_size,
            baseline_trials=config.baseline_trials,
            seed=seed,
            dp_sigma=config.dp_sigma,
        )
    return result


# ---------------------------------------------------------------------------
# Persistence


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    raise TypeError(f"not serializable: {type(value)}")


def _record(kind: str, payload: dict) -> str:
    return json.dumps(
        {"schema": RECORD_SCHEMA, "record": kind, **payload},
        sort_keys=True,
        default=_json_default,
        allow_nan=True,
    )


class RunWriter:
    """Tracks files written under a run directory; removes them on failure and
    hashes them all into the manifest on success."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def path(self, relative: str) -> Path:
        p = self.root / relative
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def write_text(self, relative: str, text: str) -> Path:
        p = self.path(relative)
        p.write_text(text)
        return p

    def write_records(self, relative: str, lines: Sequence[str]) -> Path:
        return self.write_text(relative, "".join(line + "\n" for line in lines))

    def cleanup(self) -> None:
        for p in self.files:
            p.unlink(missing_ok=True)
        # prune any directories this run created that are now empty
        for p in sorted({q for f in self.files for q in f.parents if self.root in q.parents or q == self.root}, reverse=True):
            if p.exists() and p.is_dir() and not any(p.iterdir()):
                p.rmdir()

    def manifest(self, config: ExperimentConfig) -> None:
        entries = {}
        for p in sorted(set(self.files)):
            entries[str(p.relative_to(self.root))] = hashlib.sha256(p.read_bytes()).hexdigest()
        payload = {
            "schema": RECORD_SCHEMA,
            "package_version": __version__,
            "config_hash": config.config_hash(),
            "files": entries,
        }
        (self.root / "manifest.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _metrics_payload(report: MetricsReport) -> dict:
    return {
        "participant": report.participant,
        "accuracy": report.accuracy,
        "macro_accuracy": report.macro_accuracy,
        "macro_precision": report.macro_precision,
        "macro_f1": report.macro_f1,
        "per_class_accuracy": [None if np.isnan(v) else v for v in report.per_class_accuracy],
        "undefined_precision_classes": report.undefined_precision_classes,
        "confusion": report.confusion,
    }


def _write_seed_artifacts(writer: RunWriter, config: ExperimentConfig, result: SeedRunResult):
    base = f"seed_{result.seed}"
    round_lines = []
    for r in result.reports:
        round_lines.append(
            _record(
                "round",
                {
                    "seed": result.seed,
                    "strategy": r.strategy,
                    "round": r.round_index,
                    "objective": r.objective,
                    "participant_losses": r.participant_losses,
                    "scalars_up": r.scalars_up,
                    "scalars_down": r.scalars_down,
                    "bytes_up": r.bytes_up,
                    "bytes_down": r.bytes_down,
                    "absent_global_classes": r.absent_global_classes,
                    "summary": r.summary,
                },
            )
        )
    writer.write_records(f"{base}/rounds.ndjson", round_lines)

    metric_lines = [
        _record("metrics", {"seed": result.seed, "strategy": result.strategy, **_metrics_payload(m)})
        for m in result.per_participant
    ]
    metric_lines.append(
        _record("metrics_summary", {"seed": result.seed, "strategy": result.strategy, **result.summary})
    )
    writer.write_records(f"{base}/metrics.ndjson", metric_lines)

    proto_lines = []
    state = result.final_state
    for j in np.flatnonzero(state.global_prototypes.present):
        proto_lines.append(
            _record(
                "prototype",
                {
                    "seed": result.seed,
                    "owner": "global",
                    "class_id": int(j),
                    "support": int(state.global_prototypes.support[j]),
                    "vector": state.global_prototypes.vectors[j],
                },
            )
        )
    for i, protos in enumerate(state.local_prototypes):
        for j in np.flatnonzero(protos.present):
            proto_lines.append(
                _record(
                    "prototype",
                    {
                        "seed": result.seed,
                        "owner": i,
                        "class_id": int(j),
                        "support": int(protos.support[j]),
                        "vector": protos.vectors[j],
                    },
                )
            )
    writer.write_records(f"{base}/prototypes.ndjson", proto_lines)

    if result.rare_entries is not None:
        writer.write_records(
            f"{base}/rare_classes.ndjson",
            [
                _record(
                    "rare_class",
                    {
                        "seed": result.seed,
                        "participant": e.participant,
                        "class_ids": list(e.class_ids),
                        "train_counts": list(e.train_counts),
                        "accuracy": e.accuracy,
                    },
                )
                for e in result.rare_entries
            ],
        )
    if result.zero_shot_rows is not None:
        writer.write_records(
            f"{base}/zero_shot.ndjson",
            [
                _record(
                    "zero_shot",
                    {
                        "seed": result.seed,
                        "participant": row.participant,
                        "class_id": row.class_id,
                        "local_accuracy": row.local_accuracy,
                        "federated_accuracy": row.federated_accuracy,
                    },
                )
                for row in result.zero_shot_rows
            ],
        )
    if result.audit is not None:
        _write_audit(writer, f"{base}/audit.ndjson", result.seed, config.dp_sigma, result.audit)
        _write_audit_bars(writer, f"{base}/audit_bars.csv", result.audit)

    if config.checkpoint != "none":
        states = result.history if config.checkpoint == "all" else [result.final_state]
        for state in states:
            _write_checkpoint(writer, f"{base}/checkpoints/round_{state.round_index:03d}.npz", state)


def _write_checkpoint(writer: RunWriter, relative: str, state: RoundState):
    arrays = {
        "round_index": np.array(state.round_index),
        "global_params": state.global_params.values,
        "global_proto_vectors": state.global_prototypes.vectors,
        "global_proto_support": state.global_prototypes.support,
        "local_params": np.stack([p.values for p in state.local_params]),
        "local_proto_vectors": np.stack([p.vectors for p in state.local_prototypes]),
        "local_proto_support": np.stack([p.support for p in state.local_prototypes]),
        "layout_json": np.frombuffer(
            json.dumps(state.global_params.layout_dict(), sort_keys=True).encode(), dtype=np.uint8
        ),
    }
    path = writer.path(relative)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> RoundState:
    """Rebuild a RoundState from a checkpoint file."""
    from . import nn
    from .prototypes import PrototypeSet

    with np.load(path) as blob:
        layout = json.loads(bytes(blob["layout_json"]).decode())
        global_params = nn.ModelParams.from_layout_dict(layout, blob["global_params"])
        local_params = [
            nn.ModelParams.from_layout_dict(layout, row) for row in blob["local_params"]
        ]
        def protos(vectors, support):
            return PrototypeSet(vectors=vectors, present=support > 0, support=support)

        return RoundState(
            round_index=int(blob["round_index"]),
            global_params=global_params,
            global_prototypes=protos(blob["global_proto_vectors"], blob["global_proto_support"]),
            local_params=local_params,
            local_prototypes=[
                protos(v, s)
                for v, s in zip(blob["local_proto_vectors"], blob["local_proto_support"])
            ],
        )


def _write_audit(writer: RunWriter, relative: str, seed: int, sigma: float, audit: AuditReport):
    lines = [
        _record(
            "audit",
            {
                "seed": seed,
                "dp_sigma": sigma,
                "participant": e.participant,
                "class_id": e.class_id,
                "reconstructed_mse": e.reconstructed_mse,
                "random_mse": e.random_mse,
                "mean_psnr": e.mean_psnr,
                "iterations": e.iterations,
                "final_objective": e.final_objective,
                "x_hat": e.x_hat,
            },
        )
        for e in audit.entries
    ]
    lines.append(
        _record(
            "audit_summary",
            {
                "seed": seed,
                "dp_sigma": sigma,
                "mean_reconstructed_mse": audit.mean_reconstructed_mse(),
                "mean_random_mse": audit.mean_random_mse(),
                "mean_psnr": audit.mean_psnr(),
                "fraction_beating_random": audit.fraction_beating_random(),
            },
        )
    )
    writer.write_records(relative, lines)


def _write_audit_bars(writer: RunWriter, relative: str, audit: AuditReport):
    """Per-participant bar-chart data: random vs reconstructed MSE."""
    per_participant: dict[int, list] = {}
    for e in audit.entries:
        per_participant.setdefault(e.participant, []).append(e)
    lines = ["participant,random_mse,reconstructed_mse"]
    for i in sorted(per_participant):
        entries = per_participant[i]
        lines.append(
            f"{i},{np.mean([e.random_mse for e in entries])!r},"
            f"{np.mean([e.reconstructed_mse for e in entries])!r}"
        )
    writer.write_text(relative, "\n".join(lines) + "\n")


def run_experiment(config: ExperimentConfig) -> list[SeedRunResult]:
    """Run every seed, writing all artifacts (when output_dir is set) plus a
    manifest hashing each file. Partial outputs are removed on failure."""
    writer = RunWriter(Path(config.output_dir)) if config.output_dir else None
    results = []
    try:
        if writer:
            writer.write_text(
                "config.json",
                json.dumps(config.canonical_dict(), sort_keys=True, indent=2) + "\n",
            )
        for seed in config.seeds:
            result = run_seed(config, seed)
            results.append(result)
            if writer:
                _write_seed_artifacts(writer, config, result)
        if writer:
            summary_lines = [
                _record(
                    "seed_summary",
                    {"seed": r.seed, "strategy": r.strategy, **r.summary},
                )
                for r in results
            ]
            macro = [r.summary["macro_accuracy"] for r in results]
            summary_lines.append(
                _record(
                    "experiment_summary",
                    {
                        "strategy": config.strategy,
                        "alpha": config.alpha,
                        "seeds": list(config.seeds),
                        "macro_accuracy_mean": float(np.mean(macro)),
                        "macro_accuracy_sd": float(np.std(macro)),
                    },
                )
            )
            writer.write_records("summary.ndjson", summary_lines)
            writer.manifest(config)
    except Exception:
        if writer:
            writer.cleanup()
        raise
    return results


# ---------------------------------------------------------------------------
# Strategy comparison and sweeps


@dataclass
class ComparisonResult:
    strategies: list[str]
    per_strategy: dict  # name -> list[SeedRunResult]

    def table(self) -> list[dict]:
        rows = []
        for name in self.strategies:
            runs = self.per_strategy[name]
            row = {"strategy": name}
            for key in ("accuracy", "macro_accuracy", "macro_precision", "macro_f1"):
                values = [r.summary[key] for r in runs]
                row[f"{key}_mean"] = float(np.mean(values))
                row[f"{key}_sd"] = float(np.std(values))
            rows.append(row)
        return rows

    def rare_accuracies(self, strategy: str) -> list[float]:
        """Per-(participant, seed) rare-class accuracies, pooled."""
        values = []
        for run in self.per_strategy[strategy]:
            for entry in run.rare_entries or []:
                value = entry.accuracy[strategy]
                if not np.isnan(value):
                    values.append(value)
        return values


def compare_strategies(
    config: ExperimentConfig, strategies: Sequence[str], lam: Optional[float] = None
) -> ComparisonResult:
    """Run several strategies over the same seeds with byte-identical
    partitions (data preparation is strategy-independent and shared)."""
    per_strategy = {name: [] for name in strategies}
    for seed in config.seeds:
        prepared = prepare_data(config, seed)
        for name in strategies:
            cfg = replace(config, strategy=name, lam=lam if lam is not None else config.lam)
            per_strategy[name].append(run_seed(cfg, seed, prepared=prepared))
    return ComparisonResult(strategies=list(strategies), per_strategy=per_strategy)


def sweep(
    config: ExperimentConfig,
    alphas: Sequence[float],
    strategies: Sequence[str],
) -> dict:
    """Alpha-grid comparison; returns {alpha: ComparisonResult} and writes a
    strategy x alpha table of macro accuracy 'mean (sd)' cells when an output
    directory is configured."""
    outcomes = {}
    for alpha in alphas:
        outcomes[alpha] = compare_strategies(replace(config, alpha=alpha), strategies)
    if config.output_dir:
        writer = RunWriter(Path(config.output_dir))
        lines = ["strategy," + ",".join(f"alpha={a}" for a in alphas)]
        for name in strategies:
            cells = []
            for alpha in alphas:
                values = [r.summary["macro_accuracy"] * 100 for r in outcomes[alpha].per_strategy[name]]
                cells.append(f"{np.mean(values):.2f} ({np.std(values):.2f})")
            lines.append(name + "," + ",".join(cells))
        writer.write_text("sweep_table.csv", "\n".join(lines) + "\n")
        records = []
        for alpha in alphas:
            for name in strategies:
                for run in outcomes[alpha].per_strategy[name]:
                    records.append(
                        _record(
                            "sweep_cell",
                            {
                                "alpha": alpha,
                                "strategy": name,
                                "seed": run.seed,
                                **run.summary,
                            },
                        )
                    )
        writer.write_records("sweep_records.ndjson", records)
        writer.manifest(config)
    return outcomes


def dp_sweep(config: ExperimentConfig, sigmas: Sequence[float]) -> list[dict]:
    """Retrain with noised prototype exchange at each sigma, attack the final
    checkpoints, and report privacy (MSE/PSNR) against utility (macro F1)."""
    rows = []
    for sigma in sigmas:
        cfg = replace(config, dp_sigma=float(sigma), audit_enabled=True, output_dir=None, zero_shot=False)
        results = [run_seed(cfg, seed) for seed in cfg.seeds]
        rows.append(
            {
                "dp_sigma": float(sigma),
                "mean_reconstructed_mse": float(
                    np.mean([r.audit.mean_reconstructed_mse() for r in results])
                ),
                "mean_random_mse": float(np.mean([r.audit.mean_random_mse() for r in results])),
                "mean_psnr": float(np.mean([r.audit.mean_psnr() for r in results])),
                "macro_f1": float(np.mean([r.summary["macro_f1"] for r in results])),
                "per_seed": [
                    {
                        "seed": r.seed,
                        "reconstructed_mse": r.audit.mean_reconstructed_mse(),
                        "random_mse": r.audit.mean_random_mse(),
                        "macro_f1": r.summary["macro_f1"],
                    }
                    for r in results
                ],
            }
        )
    mses = [row["mean_reconstructed_mse"] for row in rows]
    trend = {
        "sigmas": [row["dp_sigma"] for row in rows],
        "mse_nondecreasing": bool(all(b >= a for a, b in zip(mses, mses[1:]))),
    }
    for row in rows:
        row["trend"] = trend
    return rows
