"""Experiment command line: run one config, sweep an alpha grid, audit a
checkpoint, or re-derive summary tables from stored records.

Flags override the corresponding config fields. Exit code is 0 only when
every requested seed completes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .audit import run_audit
from .experiment import (
    ConfigError,
    dp_sweep,
    load_checkpoint,
    load_config,
    prepare_data,
    run_experiment,
    sweep,
)

_OVERRIDE_FIELDS = {
    "strategy": str,
    "alpha": float,
    "lam": float,
    "mu": float,
    "eta": float,
    "rounds": int,
    "epochs": int,
    "batch_size": int,
    "participants": int,
    "dp_sigma": float,
    "inference": str,
    "output_dir": str,
}


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    for name, kind in _OVERRIDE_FIELDS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind, default=None)
    parser.add_argument("--seeds", type=str, default=None, help="comma-separated seed list")


def _collect_overrides(args: argparse.Namespace) -> dict:
    overrides = {name: getattr(args, name) for name in _OVERRIDE_FIELDS}
    if args.seeds is not None:
        overrides["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
    return overrides


def _cmd_run(args) -> int:
    config = load_config(args.config, _collect_overrides(args))
    results = run_experiment(config)
    for result in results:
        print(
            f"seed {result.seed} [{result.strategy}] "
            f"macro_accuracy={result.summary['macro_accuracy']:.4f} "
            f"macro_f1={result.summary['macro_f1']:.4f}"
        )
    macro = [r.summary["macro_accuracy"] for r in results]
    print(f"mean macro_accuracy: {np.mean(macro):.4f} (sd {np.std(macro):.4f})")
    if config.output_dir:
        print(f"artifacts in {config.output_dir}")
    return 0


def _cmd_sweep(args) -> int:
    config = load_config(args.config, _collect_overrides(args))
    alphas = [float(a) for a in args.alphas.split(",")]
    strategies = [s.strip() for s in args.strategies.split(",")]
    outcomes = sweep(config, alphas, strategies)
    header = "strategy".ljust(20) + "".join(f"alpha={a}".rjust(18) for a in alphas)
    print(header)
    for name in strategies:
        cells = []
        for alpha in alphas:
            values = [r.summary["macro_accuracy"] * 100 for r in outcomes[alpha].per_strategy[name]]
            cells.append(f"{np.mean(values):.2f} ({np.std(values):.2f})".rjust(18))
        print(name.ljust(20) + "".join(cells))
    if config.output_dir:
        print(f"table written to {Path(config.output_dir) / 'sweep_table.csv'}")
    return 0


def _cmd_audit(args) -> int:
    config = load_config(args.config, _collect_overrides(args))
    if args.sigmas:
        sigmas = [float(s) for s in args.sigmas.split(",")]
        rows = dp_sweep(config, sigmas)
        for row in rows:
            print(
                f"sigma={row['dp_sigma']}: reconstructed_mse={row['mean_reconstructed_mse']:.4f} "
                f"random_mse={row['mean_random_mse']:.4f} psnr={row['mean_psnr']:.2f}dB "
                f"macro_f1={row['macro_f1']:.4f}"
            )
        print(f"mse nondecreasing in sigma: {rows[0]['trend']['mse_nondecreasing']}")
        if args.out:
            Path(args.out).write_text(json.dumps(rows, indent=2, default=float) + "\n")
        return 0
    if not args.checkpoint:
        raise ConfigError("audit needs --checkpoint (or --sigmas for a DP sweep)")
    seed = args.seed if args.seed is not None else config.seeds[0]
    prepared = prepare_data(config, seed)
    state = load_checkpoint(args.checkpoint)
    report = run_audit(
        state.local_params,
        state.local_prototypes,
        prepared.shards(),
        prepared.train.feature_ranges,
        scaler=prepared.scaler,
        steps=config.attack_steps,
        step_size=config.attack_step_size,
        baseline_trials=config.baseline_trials,
        seed=seed,
        dp_sigma=config.dp_sigma,
    )
    print(
        f"audited {len(report.entries)} (participant, class) pairs: "
        f"reconstructed_mse={report.mean_reconstructed_mse():.4f} "
        f"random_mse={report.mean_random_mse():.4f} "
        f"psnr={report.mean_psnr():.2f}dB "
        f"beating random: {report.fraction_beating_random() * 100:.1f}%"
    )
    return 0


def _cmd_report(args) -> int:
    root = Path(args.run_dir)
    records = []
    for path in sorted(root.rglob("*.ndjson")):
        for line in path.read_text().splitlines():
            if line.strip():
                records.append(json.loads(line))
    if not records:
        print(f"no records found under {root}", file=sys.stderr)
        return 1
    by_kind: dict[str, list] = {}
    for record in records:
        by_kind.setdefault(record.get("record", "?"), []).append(record)
    print(f"{len(records)} records: " + ", ".join(f"{k}={len(v)}" for k, v in sorted(by_kind.items())))
    summaries = by_kind.get("metrics_summary", [])
    if summaries:
        by_strategy: dict[str, list] = {}
        for record in summaries:
            by_strategy.setdefault(record["strategy"], []).append(record)
        print("strategy".ljust(20) + "macro_accuracy".rjust(22) + "macro_f1".rjust(22))
        for name, rows in sorted(by_strategy.items()):
            acc = [r["macro_accuracy"] * 100 for r in rows]
            f1 = [r["macro_f1"] * 100 for r in rows]
            print(
                name.ljust(20)
                + f"{np.mean(acc):.2f} ({np.std(acc):.2f})".rjust(22)
                + f"{np.mean(f1):.2f} ({np.std(f1):.2f})".rjust(22)
            )
    rare = by_kind.get("rare_class", [])
    if rare:
        values: dict[str, list] = {}
        for record in rare:
            for name, acc in record["accuracy"].items():
                if acc is not None and not (isinstance(acc, float) and np.isnan(acc)):
                    values.setdefault(name, []).append(acc)
        for name, accs in sorted(values.items()):
            print(f"rare-class accuracy [{name}]: {np.mean(accs) * 100:.2f} over {len(accs)} pairs")
    zero = by_kind.get("zero_shot", [])
    if zero:
        local = np.mean([r["local_accuracy"] for r in zero]) * 100
        fed = np.mean([r["federated_accuracy"] for r in zero]) * 100
        print(f"zero-shot pairs: {len(zero)}, local {local:.2f}% -> federated {fed:.2f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protofed",
        description="Deterministic federated prototype-learning experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config")
    _add_overrides(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="alpha x seed grid over strategies")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--alphas", default="0.75,0.5,0.25")
    p_sweep.add_argument(
        "--strategies", default="fedavg,fedprox,fedproto,protean_embedding,protean"
    )
    _add_overrides(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_audit = sub.add_parser("audit", help="privacy audit of a checkpoint or a DP sweep")
    p_audit.add_argument("config")
    p_audit.add_argument("--checkpoint", default=None, help="checkpoint .npz to attack")
    p_audit.add_argument("--seed", type=int, default=None, help="seed the checkpoint was trained with")
    p_audit.add_argument("--sigmas", default=None, help="comma-separated DP sigmas to sweep")
    p_audit.add_argument("--out", default=None, help="write sweep rows as JSON")
    _add_overrides(p_audit)
    p_audit.set_defaults(func=_cmd_audit)

    p_report = sub.add_parser("report", help="re-derive tables from stored records")
    p_report.add_argument("run_dir")
    p_report.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surface anything else as failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
