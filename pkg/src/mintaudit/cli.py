"""Command line front end for config-driven membership audits.

Every subcommand takes the same JSON experiment document and runs the
pipeline up to the stage it names, so a long experiment can be advanced
(and resumed) one stage at a time or executed end to end with `audit`.
Exit codes: 0 success, 2 bad configuration, 3 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .errors import AuditError, ConfigurationError, StageError
from .pipeline import (
    DATA_ROOT_ENV,
    ExperimentConfig,
    run_audit,
    run_baseline_comparison,
    run_stages,
    run_sweep,
)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_STAGE_FAILURE = 3


def _config_from(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config)
    layer = getattr(args, "layer", None)
    if layer is not None:
        config = config.with_overrides(mint_layer_index=layer)
    return config


def cmd_ingest(args) -> int:
    config = _config_from(args)
    dirs = run_stages(config, "corpus")
    meta = json.loads((dirs["corpus"] / "corpus.json").read_text())
    print(f"corpus={meta['name']} classes={meta['num_classes']} images={meta['image_count']}")
    print(f"path={dirs['corpus']}")
    return EXIT_OK


def cmd_split(args) -> int:
    config = _config_from(args)
    dirs = run_stages(config, "split")
    manifest = json.loads((dirs["split"] / "split.json").read_text())
    print(f"members={len(manifest['members'])} externals={len(manifest['externals'])} "
          f"member_fraction={manifest['member_fraction']} seed={manifest['seed']}")
    print(f"path={dirs['split'] / 'split.json'}")
    return EXIT_OK


def cmd_train_audited(args) -> int:
    config = _config_from(args)
    dirs = run_stages(config, "train")
    meta = json.loads((dirs["train"] / "checkpoint" / "metadata.json").read_text())
    report = json.loads((dirs["train"] / "train_report.json").read_text())
    print(f"checkpoint_id={meta['checkpoint_id']} architecture={meta['architecture']} "
          f"epochs={meta['epochs_trained']}")
    print(f"train_accuracy={report['train_accuracy']:.4f} "
          f"test_accuracy={report['test_accuracy']:.4f}")
    print(f"path={dirs['train'] / 'checkpoint'}")
    return EXIT_OK


def cmd_extract(args) -> int:
    config = _config_from(args)
    dirs = run_stages(config, "extract")
    meta = json.loads((dirs["extract"] / "embeddings" / "meta.json").read_text())
    print(f"layer_index={meta['layer_index']} vector_len={meta['vector_len']} "
          f"count={meta['count']}")
    print(f"path={dirs['extract'] / 'embeddings'}")
    return EXIT_OK


def cmd_train_mint(args) -> int:
    config = _config_from(args)
    dirs = run_stages(config, "mint")
    manifest = json.loads((dirs["mint"] / "ensemble" / "manifest.json").read_text())
    print(f"layer_index={manifest['layer_index']} classes={len(manifest['classes'])} "
          f"checkpoint_id={manifest['checkpoint_id']}")
    print(f"path={dirs['mint'] / 'ensemble'}")
    return EXIT_OK


def cmd_audit(args) -> int:
    config = _config_from(args)
    artifacts = run_audit(config)
    report = artifacts.report
    print(f"layer_index={report.layer_index} pooled_auc={report.aggregate.auc:.4f} "
          f"mean_class_auc={report.mean_class_auc:.4f} "
          f"balanced_accuracy={report.aggregate.balanced_accuracy:.4f}")
    print(f"report={Path(config.output_dir) / 'report.json'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _config_from(args)
    if config.sweep_axis is None:
        raise ConfigurationError("sweep needs a config with sweep.axis set")
    _, rows = run_sweep(config)
    for row in rows:
        if row["status"] == "ok":
            print(f"{config.sweep_axis}={row['axis_value']} "
                  f"pooled_auc={float(row['pooled_auc']):.4f} "
                  f"mean_class_auc={float(row['mean_class_auc']):.4f}")
        else:
            print(f"{config.sweep_axis}={row['axis_value']} FAILED: {row['error']}")
    print(f"summary={Path(config.output_dir) / f'sweep_{config.sweep_axis}' / 'summary.csv'}")
    return EXIT_OK


def cmd_baselines(args) -> int:
    config = _config_from(args)
    comparison = run_baseline_comparison(config)
    for method, values in comparison["rows"].items():
        print(f"{method}: auc={values['auc']:.4f} "
              f"balanced_accuracy={values['balanced_accuracy']:.4f}")
    print(f"table={Path(config.output_dir) / 'baseline_comparison.csv'}")
    return EXIT_OK


def _print_report(output_dir: Path) -> None:
    report_path = output_dir / "report.json"
    if not report_path.exists():
        raise StageError("report", f"no report at {report_path}; run `audit` first",
                         artifact_path=str(output_dir))
    payload = json.loads(report_path.read_text())
    agg = payload["aggregate"]
    print(f"checkpoint_id={payload['checkpoint_id']} layer_index={payload['layer_index']}")
    print(f"pooled: auc={agg['auc']:.4f} balanced_accuracy={agg['balanced_accuracy']:.4f} "
          f"members={agg['n_members']} externals={agg['n_externals']}")
    print(f"mean_class_auc={payload['mean_class_auc']:.4f}")
    for class_index, metrics in sorted(payload["per_class"].items(), key=lambda kv: int(kv[0])):
        print(f"  class {class_index}: auc={metrics['auc']:.4f} "
              f"balanced_accuracy={metrics['balanced_accuracy']:.4f} "
              f"n={metrics['n_members'] + metrics['n_externals']}")

    comparison_path = output_dir / "baseline_comparison.json"
    if comparison_path.exists():
        rows = json.loads(comparison_path.read_text())["rows"]
        print("comparison:")
        for method, values in rows.items():
            print(f"  {method}: auc={values['auc']:.4f} "
                  f"balanced_accuracy={values['balanced_accuracy']:.4f}")

    for summary in sorted(output_dir.glob("sweep_*/summary.csv")):
        print(f"sweep {summary.parent.name.removeprefix('sweep_')}:")
        with open(summary, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["status"] == "ok":
                    print(f"  {row['axis_value']}: pooled_auc={float(row['pooled_auc']):.4f}")
                else:
                    print(f"  {row['axis_value']}: failed ({row['error']})")


def _render_plots(output_dir: Path) -> list[Path]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise ConfigurationError(
            "--render needs matplotlib; install the package with the [plots] extra"
        ) from None

    plots_dir = output_dir / "plots"
    plots_dir.mkdir(parents=True, exist_ok=True)
    written = []

    report_path = output_dir / "report.json"
    if report_path.exists():
        payload = json.loads(report_path.read_text())
        classes = sorted(payload["per_class"], key=int)
        aucs = [payload["per_class"][c]["auc"] for c in classes]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.bar(classes, aucs, color="#4878d0")
        ax.axhline(0.5, color="gray", linestyle="--", linewidth=1)
        ax.set_xlabel("class")
        ax.set_ylabel("AUC")
        ax.set_ylim(0, 1)
        ax.set_title(f"per-class membership AUC (layer {payload['layer_index']})")
        fig.tight_layout()
        out = plots_dir / "per_class_auc.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)

    for summary in sorted(output_dir.glob("sweep_*/summary.csv")):
        axis = summary.parent.name.removeprefix("sweep_")
        with open(summary, newline="") as fh:
            rows = [row for row in csv.DictReader(fh) if row["status"] == "ok"]
        if not rows:
            continue
        values = [row["axis_value"] for row in rows]
        aucs = [float(row["pooled_auc"]) for row in rows]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(values, aucs, marker="o")
        ax.axhline(0.5, color="gray", linestyle="--", linewidth=1)
        ax.set_xlabel(axis)
        ax.set_ylabel("pooled AUC")
        ax.set_ylim(0, 1)
        ax.set_title(f"membership AUC by {axis}")
        fig.tight_layout()
        out = plots_dir / f"sweep_{axis}.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)

    return written


def cmd_report(args) -> int:
    config = _config_from(args)
    output_dir = Path(config.output_dir)
    _print_report(output_dir)
    if args.render:
        for path in _render_plots(output_dir):
            print(f"plot={path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mintaudit",
        description="Audit whether candidate samples were part of a model's training data.",
        epilog=f"Real image corpora are located via corpus.root_path or ${DATA_ROOT_ENV}.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, help_text, layer_flag=False):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="experiment JSON document")
        if layer_flag:
            cmd.add_argument("--layer", type=int, default=None,
                             help="activation layer index (overrides mint.layer_index)")
        cmd.set_defaults(handler=handler)
        return cmd

    add("ingest", cmd_ingest, "materialize the corpus stage")
    add("split", cmd_split, "partition the corpus into members and externals")
    add("train-audited", cmd_train_audited, "train the classifier under audit")
    add("extract", cmd_extract, "extract activation vectors for every sample", layer_flag=True)
    add("train-mint", cmd_train_mint, "train the per-class membership tests", layer_flag=True)
    add("audit", cmd_audit, "run the full pipeline and write the audit report", layer_flag=True)
    add("sweep", cmd_sweep, "run one audit per sweep axis value")
    add("baselines", cmd_baselines, "compare the audit against output-only attacks")
    report_cmd = add("report", cmd_report, "print (and optionally plot) stored results")
    report_cmd.add_argument("--render", action="store_true",
                            help="write PNG plots next to the report")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except StageError as exc:
        print(f"stage '{exc.stage}' failed: {exc}", file=sys.stderr)
        if exc.artifact_path:
            print(f"partial artifacts kept at {exc.artifact_path}", file=sys.stderr)
        return EXIT_STAGE_FAILURE
    except AuditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILURE


if __name__ == "__main__":
    sys.exit(main())
