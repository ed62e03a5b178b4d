"""How training duration changes what an audit can recover.

The longer the audited classifier trains past the point of generalization,
the more its activations betray which exact samples it saw. This sweep
trains the same classifier for 2, 10, and 40 epochs and audits each
checkpoint; expect the pooled AUC to climb toward the right of the table.
"""

from mintaudit import ExperimentConfig, run_sweep

DOCUMENT = {
    "corpus": {"name": "synthetic",
               "generator": {"num_classes": 4, "per_class": 100, "seed": 7,
                             "class_contrast": 0.05, "structure_noise": 0.35,
                             "pixel_noise": 0.10}},
    "split": {"fraction": 0.5, "seed": 1},
    "audited": {"architecture": "paper_cnn", "epochs": 40, "batch_size": 16, "seed": 0},
    "mint": {"layer_index": 7, "epochs": 50, "batch_size": 32, "seed": 0},
    "sweep": {"axis": "epochs", "values": [2, 10, 40]},
    "output_dir": "./runs/demo_epoch_sweep",
}


def main() -> None:
    config = ExperimentConfig.from_dict(DOCUMENT)
    _, rows = run_sweep(config)

    print(f"{'epochs':>8} {'pooled AUC':>12} {'mean class AUC':>16}")
    for row in rows:
        if row["status"] != "ok":
            print(f"{row['axis_value']:>8} failed: {row['error']}")
            continue
        print(f"{row['axis_value']:>8} {float(row['pooled_auc']):>12.3f} "
              f"{float(row['mean_class_auc']):>16.3f}")
    print(f"\nplot data: {config.output_dir}/sweep_epochs/summary.csv")
    print("render it with: mintaudit report --config <saved config> --render")


if __name__ == "__main__":
    main()
