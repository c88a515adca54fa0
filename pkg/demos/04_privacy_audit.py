"""Can a curious server reconstruct training data from shared prototypes?

A semi-honest server holds each participant's uploaded model and class
prototypes. The attack gradient-descends a feature profile whose embedding
matches a prototype and is scored by MSE against the class's true mean
profile, next to a random-guessing baseline inside the training feature
bounds. Gaussian noise on the uploaded prototypes raises the reconstruction
error while leaving utility roughly intact.
"""

import numpy as np

from protofed.audit import run_audit
from protofed.experiment import ExperimentConfig, dp_sweep, prepare_data, run_seed

config = ExperimentConfig(
    dataset_kind="synthetic",
    classes=4,
    features=12,
    per_class=250,
    separation=5.0,
    participants=3,
    alpha=0.5,
    strategy="protean",
    lam=0.005,
    mu=0.1,
    eta=0.01,
    rounds=6,
    epochs=3,
    batch_size=96,
    seeds=(0,),
    zero_shot=False,
    rare_classes=False,
    checkpoint="none",
    attack_steps=800,
    attack_step_size=0.05,
    baseline_trials=5000,
)

prepared = prepare_data(config, seed=0)
run = run_seed(config, 0, prepared=prepared)
print(f"trained protean run: macro accuracy {run.summary['macro_accuracy']:.3f}\n")

report = run_audit(
    run.final_state.local_params,
    run.final_state.local_prototypes,
    prepared.shards(),
    prepared.train.feature_ranges,
    steps=config.attack_steps,
    step_size=config.attack_step_size,
    baseline_trials=config.baseline_trials,
    seed=0,
)
print("reconstruction attack, no DP (per participant, averaged over classes):")
per_participant = {}
for entry in report.entries:
    per_participant.setdefault(entry.participant, []).append(entry)
for i, entries in sorted(per_participant.items()):
    rec = np.mean([e.reconstructed_mse for e in entries])
    rand = np.mean([e.random_mse for e in entries])
    psnr = np.mean([e.mean_psnr for e in entries])
    print(f"  participant {i}: reconstructed MSE {rec:7.3f} vs random {rand:7.3f}"
          f"  (PSNR {psnr:.1f} dB)")
print(f"attack beats random guessing on {report.fraction_beating_random() * 100:.0f}% "
      f"of (participant, class) pairs\n")

print("adding Gaussian noise to the uploaded prototypes (DP sweep):")
rows = dp_sweep(config, sigmas=[0.0, 0.1, 0.5, 1.0])
print(f"{'sigma':>6}{'rec MSE':>10}{'rand MSE':>10}{'PSNR dB':>9}{'macro F1':>10}")
for row in rows:
    print(f"{row['dp_sigma']:>6}{row['mean_reconstructed_mse']:>10.3f}"
          f"{row['mean_random_mse']:>10.3f}{row['mean_psnr']:>9.2f}{row['macro_f1']:>10.3f}")
growth = rows[-1]["mean_reconstructed_mse"] / rows[0]["mean_reconstructed_mse"]
print(f"\nreconstruction error grows {growth:.1f}x from sigma=0 to sigma=1.0; at small sigma"
      " the change sits within attack-convergence noise on a single-seed run")
