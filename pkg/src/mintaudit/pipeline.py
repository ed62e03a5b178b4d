"""Config-driven audit orchestration with content-hash stage caching.

An experiment is one JSON document. Each stage (corpus, split, train,
extract, mint, report) is keyed by the hash of its own parameters plus its
upstream stage hashes, so rerunning a config skips everything already on
disk and editing any influential field recomputes exactly the affected
suffix of the pipeline.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines as baselines_mod
from .classifier import (
    ARCHITECTURES,
    AuditedModelCheckpoint,
    AuditedModelSpec,
    append_run_record,
    build_model,
    layer_catalog,
    predict,
    train,
)
from .corpus import (
    CORPUS_NAMES,
    Corpus,
    DatasetSplit,
    load_corpus_arrays,
    make_split,
    subsample_corpus,
)
from .embeddings import EmbeddingSet, extract_set
from .errors import ConfigurationError, StageError
from .metrics import (
    MintAuditReport,
    append_scores_csv,
    best_balanced_accuracy,
    build_audit_report,
    roc_auc,
)
from .mint import MintEnsemble, score, train_ensemble

DATA_ROOT_ENV = "MINTAUDIT_DATA_ROOT"

SWEEP_AXES = ("epochs", "layers", "classes", "architectures")


def _hash_key(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    """One audit experiment, as parsed from its JSON document."""

    corpus_name: str
    corpus_root: str | None = None
    corpus_generator: dict = field(default_factory=dict)
    corpus_subset: dict | None = None
    split_fraction: float = 0.64
    split_seed: int = 0
    architecture: str = "paper_cnn"
    audited_epochs: int = 50
    audited_batch_size: int = 32
    audited_seed: int = 0
    mint_layer_index: int = 7
    mint_epochs: int = 50
    mint_batch_size: int = 32
    mint_seed: int = 0
    mint_eval_fraction: float = 0.2
    mint_threshold: float = 0.5
    sweep_axis: str | None = None
    sweep_values: list | None = None
    baselines: list = field(default_factory=lambda: list(baselines_mod.BASELINE_METHODS))
    output_dir: str = "runs"

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        try:
            corpus = payload["corpus"]
            split = payload.get("split", {})
            audited = payload.get("audited", {})
            mint = payload.get("mint", {})
            sweep = payload.get("sweep") or {}
            config = cls(
                corpus_name=corpus["name"],
                corpus_root=corpus.get("root_path"),
                corpus_generator=dict(corpus.get("generator", {})),
                corpus_subset=corpus.get("subset"),
                split_fraction=split.get("fraction", 0.64),
                split_seed=split.get("seed", 0),
                architecture=audited.get("architecture", "paper_cnn"),
                audited_epochs=audited.get("epochs", 50),
                audited_batch_size=audited.get("batch_size", 32),
                audited_seed=audited.get("seed", 0),
                mint_layer_index=mint.get("layer_index", 7),
                mint_epochs=mint.get("epochs", 50),
                mint_batch_size=mint.get("batch_size", 32),
                mint_seed=mint.get("seed", 0),
                mint_eval_fraction=mint.get("eval_fraction", 0.2),
                mint_threshold=mint.get("threshold", 0.5),
                sweep_axis=sweep.get("axis"),
                sweep_values=sweep.get("values"),
                baselines=list(payload.get("baselines", baselines_mod.BASELINE_METHODS)),
                output_dir=payload["output_dir"],
            )
        except KeyError as exc:
            raise ConfigurationError(f"config is missing required field {exc.args[0]!r}") from None
        config.validate()
        return config

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)

    def validate(self) -> None:
        if self.corpus_name not in CORPUS_NAMES:
            raise ConfigurationError(
                f"unknown corpus {self.corpus_name!r}, expected one of {CORPUS_NAMES}"
            )
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(
                f"unknown architecture {self.architecture!r}, expected one of {ARCHITECTURES}"
            )
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigurationError(f"split fraction must be in (0, 1), got {self.split_fraction}")
        if self.audited_epochs < 1 or self.mint_epochs < 1:
            raise ConfigurationError("epoch counts must be >= 1")
        if self.sweep_axis is not None:
            if self.sweep_axis not in SWEEP_AXES:
                raise ConfigurationError(
                    f"unknown sweep axis {self.sweep_axis!r}, expected one of {SWEEP_AXES}"
                )
            if self.sweep_axis != "classes" and not self.sweep_values:
                raise ConfigurationError(f"sweep axis {self.sweep_axis!r} needs a nonempty values list")
        if self.corpus_subset is not None and "size" not in self.corpus_subset:
            raise ConfigurationError("corpus.subset needs a 'size' field")
        for method in self.baselines:
            if method not in baselines_mod.BASELINE_METHODS:
                raise ConfigurationError(
                    f"unknown baseline {method!r}, expected one of {baselines_mod.BASELINE_METHODS}"
                )
        valid_layers = [entry[0] for entry in layer_catalog(self.architecture, 10)]
        if self.mint_layer_index not in valid_layers:
            raise ConfigurationError(
                f"layer {self.mint_layer_index} is not in the {self.architecture} catalog "
                f"(valid: {valid_layers})"
            )

    def resolved_root(self) -> str | None:
        if self.corpus_root is not None:
            return self.corpus_root
        return os.environ.get(DATA_ROOT_ENV)

    def corpus_key(self) -> dict:
        key = {"name": self.corpus_name}
        if self.corpus_name == "synthetic":
            key["generator"] = self.corpus_generator
        else:
            key["root"] = str(self.resolved_root())
        if self.corpus_subset:
            key["subset"] = self.corpus_subset
        return key

    def config_hash(self) -> str:
        payload = {
            "corpus": self.corpus_key(),
            "split": {"fraction": self.split_fraction, "seed": self.split_seed},
            "audited": {
                "architecture": self.architecture,
                "epochs": self.audited_epochs,
                "batch_size": self.audited_batch_size,
                "seed": self.audited_seed,
            },
            "mint": {
                "layer_index": self.mint_layer_index,
                "epochs": self.mint_epochs,
                "batch_size": self.mint_batch_size,
                "seed": self.mint_seed,
                "eval_fraction": self.mint_eval_fraction,
                "threshold": self.mint_threshold,
            },
        }
        return _hash_key(payload)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Copy with fields replaced; the copy is a plain point, never a sweep."""
        merged = {**self.__dict__, **overrides, "sweep_axis": None, "sweep_values": None}
        config = ExperimentConfig(
            **{k: v for k, v in merged.items() if k in ExperimentConfig.__dataclass_fields__}
        )
        config.validate()
        return config


class StageCache:
    """Content-addressed stage directories with completion markers."""

    def __init__(self, root):
        self.root = Path(root)

    def lookup(self, stage: str, key: dict) -> tuple[Path, bool]:
        stage_dir = self.root / stage / _hash_key(key)
        return stage_dir, (stage_dir / "DONE").exists()

    @staticmethod
    def finalize(stage_dir: Path) -> None:
        (stage_dir / "DONE").write_text("")


def _run_stage(stage: str, cache: StageCache, key: dict, compute) -> Path:
    """Return the stage directory, computing it if there is no cache hit.

    `compute(stage_dir)` must write every artifact into stage_dir; its
    failures surface as StageError naming the stage and the directory that
    holds whatever partial output was produced.
    """
    stage_dir, done = cache.lookup(stage, key)
    if done:
        return stage_dir
    if stage_dir.exists():
        shutil.rmtree(stage_dir)
    stage_dir.mkdir(parents=True)
    try:
        compute(stage_dir)
    except (StageError, ConfigurationError):
        # Config problems are the caller's to fix, not stage failures.
        raise
    except Exception as exc:
        raise StageError(stage, str(exc), artifact_path=str(stage_dir)) from exc
    StageCache.finalize(stage_dir)
    return stage_dir


def _corpus_stage(config: ExperimentConfig, cache: StageCache) -> tuple[Path, dict]:
    key = {"stage": "corpus", **config.corpus_key()}

    def compute(stage_dir: Path) -> None:
        if config.corpus_name == "synthetic":
            corpus = load_corpus_arrays("synthetic", **config.corpus_generator)
        else:
            root = config.resolved_root()
            if root is None:
                raise ConfigurationError(
                    f"corpus {config.corpus_name!r} needs a root path: set corpus.root_path "
                    f"in the config or the {DATA_ROOT_ENV} environment variable"
                )
            corpus = load_corpus_arrays(config.corpus_name, root)
        if config.corpus_subset:
            corpus = subsample_corpus(
                corpus, config.corpus_subset["size"], config.corpus_subset.get("seed", 0)
            )
        corpus.save(stage_dir)

    return _run_stage("corpus", cache, key, compute), key


def _split_stage(config: ExperimentConfig, cache: StageCache, corpus_key: dict,
                 corpus: Corpus) -> tuple[Path, dict]:
    key = {
        "stage": "split",
        "corpus": corpus_key,
        "fraction": config.split_fraction,
        "seed": config.split_seed,
    }

    def compute(stage_dir: Path) -> None:
        split = make_split(corpus, config.split_fraction, config.split_seed)
        split.save(stage_dir / "split.json")

    return _run_stage("split", cache, key, compute), key


def _train_stage(config: ExperimentConfig, cache: StageCache, split_key: dict,
                 corpus: Corpus, split: DatasetSplit) -> tuple[Path, dict]:
    key = {
        "stage": "train",
        "split": split_key,
        "architecture": config.architecture,
        "epochs": config.audited_epochs,
        "batch_size": config.audited_batch_size,
        "seed": config.audited_seed,
    }

    def compute(stage_dir: Path) -> None:
        spec = AuditedModelSpec(config.architecture, corpus.descriptor.num_classes)
        model = build_model(spec, init_seed=config.audited_seed)
        checkpoint, report = train(
            model, corpus, split,
            epochs=config.audited_epochs,
            batch_size=config.audited_batch_size,
            train_seed=config.audited_seed,
        )
        checkpoint.save(stage_dir / "checkpoint")
        report.save(stage_dir / "train_report.json")
        append_run_record(
            Path(config.output_dir) / "runs.csv", checkpoint, report,
            corpus_name=config.corpus_name,
        )

    return _run_stage("train", cache, key, compute), key


def _extract_stage(config: ExperimentConfig, cache: StageCache, train_key: dict,
                   corpus: Corpus, split: DatasetSplit, layer_index: int,
                   train_dir: Path) -> tuple[Path, dict]:
    key = {"stage": "extract", "train": train_key, "layer_index": layer_index}

    def compute(stage_dir: Path) -> None:
        checkpoint = AuditedModelCheckpoint.load(train_dir / "checkpoint")
        extract_set(checkpoint, corpus, layer_index, split).save(stage_dir / "embeddings")

    return _run_stage("extract", cache, key, compute), key


def _mint_stage(config: ExperimentConfig, cache: StageCache, extract_key: dict,
                extract_dir: Path) -> tuple[Path, dict]:
    key = {
        "stage": "mint",
        "extract": extract_key,
        "epochs": config.mint_epochs,
        "batch_size": config.mint_batch_size,
        "seed": config.mint_seed,
        "eval_fraction": config.mint_eval_fraction,
    }

    def compute(stage_dir: Path) -> None:
        embeddings = EmbeddingSet.load(extract_dir / "embeddings")
        ensemble, eval_sets = train_ensemble(
            embeddings,
            epochs=config.mint_epochs,
            batch_size=config.mint_batch_size,
            seed=config.mint_seed,
            eval_fraction=config.mint_eval_fraction,
        )
        ensemble.save(stage_dir / "ensemble")
        eval_ids = {str(c): ev.sample_ids.tolist() for c, ev in sorted(eval_sets.items())}
        (stage_dir / "eval_ids.json").write_text(json.dumps(eval_ids, sort_keys=True) + "\n")

    return _run_stage("mint", cache, key, compute), key


def _report_stage(config: ExperimentConfig, cache: StageCache, mint_key: dict,
                  extract_dir: Path, mint_dir: Path, config_hash: str) -> Path:
    key = {"stage": "report", "mint": mint_key, "threshold": config.mint_threshold}

    def compute(stage_dir: Path) -> None:
        embeddings = EmbeddingSet.load(extract_dir / "embeddings")
        ensemble = MintEnsemble.load(mint_dir / "ensemble")
        eval_ids = json.loads((mint_dir / "eval_ids.json").read_text())
        id_to_pos = {sid: i for i, sid in enumerate(embeddings.sample_ids)}

        per_class_scores = {}
        score_rows = []
        for class_str, ids in sorted(eval_ids.items(), key=lambda kv: int(kv[0])):
            class_index = int(class_str)
            eval_set = embeddings.subset([id_to_pos[sid] for sid in ids])
            results = score(ensemble, eval_set, threshold=config.mint_threshold)
            values = np.array([r.score for r in results], dtype=np.float64)
            per_class_scores[class_index] = (values, eval_set.membership.copy())
            for item in results:
                score_rows.append({
                    "method": "mint",
                    "sample_id": item.sample_id,
                    "class_index": item.class_index,
                    "raw_statistic": repr(item.score),
                    "score": repr(item.score),
                    "predicted_member": int(item.predicted_member),
                })

        report = build_audit_report(
            per_class_scores,
            checkpoint_id=ensemble.checkpoint_id,
            layer_index=ensemble.layer_index,
            config_hash=config_hash,
            threshold=config.mint_threshold,
        )
        report.save(stage_dir / "report.json")
        append_scores_csv(stage_dir / "scores.csv", score_rows)

        pooled_scores = np.concatenate([v for v, _ in per_class_scores.values()])
        pooled_labels = np.concatenate([m for _, m in per_class_scores.values()])
        roc_auc(pooled_scores, pooled_labels).to_csv(stage_dir / "roc_pooled.csv")
        for class_index, (values, membership) in sorted(per_class_scores.items()):
            roc_auc(values, membership).to_csv(stage_dir / f"roc_class_{class_index:04d}.csv")

    return _run_stage("report", cache, key, compute)


@dataclass
class AuditArtifacts:
    """Paths to every stage output of one audit run."""

    corpus_dir: Path
    split_dir: Path
    train_dir: Path
    extract_dir: Path
    mint_dir: Path
    report_dir: Path
    report: MintAuditReport


STAGE_ORDER = ("corpus", "split", "train", "extract", "mint", "report")


def run_stages(config: ExperimentConfig, last_stage: str = "report",
               *, layer_index: int | None = None) -> dict[str, Path]:
    """Execute the pipeline up to `last_stage`; returns stage directories."""
    if last_stage not in STAGE_ORDER:
        raise ConfigurationError(f"unknown stage {last_stage!r}, expected one of {STAGE_ORDER}")
    layer_index = config.mint_layer_index if layer_index is None else layer_index
    cache = StageCache(Path(config.output_dir) / "cache")
    dirs: dict[str, Path] = {}

    corpus_dir, corpus_key = _corpus_stage(config, cache)
    dirs["corpus"] = corpus_dir
    if last_stage == "corpus":
        return dirs
    corpus = Corpus.load(corpus_dir)

    split_dir, split_key = _split_stage(config, cache, corpus_key, corpus)
    dirs["split"] = split_dir
    if last_stage == "split":
        return dirs
    split = DatasetSplit.load(split_dir / "split.json")

    train_dir, train_key = _train_stage(config, cache, split_key, corpus, split)
    dirs["train"] = train_dir
    if last_stage == "train":
        return dirs

    extract_dir, extract_key = _extract_stage(
        config, cache, train_key, corpus, split, layer_index, train_dir
    )
    dirs["extract"] = extract_dir
    if last_stage == "extract":
        return dirs

    mint_dir, mint_key = _mint_stage(config, cache, extract_key, extract_dir)
    dirs["mint"] = mint_dir
    if last_stage == "mint":
        return dirs

    dirs["report"] = _report_stage(
        config, cache, mint_key, extract_dir, mint_dir, config.config_hash()
    )
    return dirs


def run_audit(config: ExperimentConfig, *, layer_index: int | None = None) -> AuditArtifacts:
    """Execute corpus -> split -> train -> extract -> mint -> report."""
    dirs = run_stages(config, "report", layer_index=layer_index)
    report = MintAuditReport.load(dirs["report"] / "report.json")
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(dirs["report"] / "report.json", output_dir / "report.json")
    return AuditArtifacts(
        corpus_dir=dirs["corpus"],
        split_dir=dirs["split"],
        train_dir=dirs["train"],
        extract_dir=dirs["extract"],
        mint_dir=dirs["mint"],
        report_dir=dirs["report"],
        report=report,
    )


SWEEP_SUMMARY_FIELDS = [
    "axis", "axis_value", "status", "pooled_auc", "mean_class_auc",
    "balanced_acc", "balanced_acc_best", "report_path", "error",
]


def _summary_row(axis: str, value, report: MintAuditReport, report_dir: Path) -> dict:
    return {
        "axis": axis,
        "axis_value": value,
        "status": "ok",
        "pooled_auc": repr(report.aggregate.auc),
        "mean_class_auc": repr(report.mean_class_auc),
        "balanced_acc": repr(report.aggregate.balanced_accuracy),
        "balanced_acc_best": repr(report.aggregate.balanced_accuracy_best),
        "report_path": str(report_dir / "report.json"),
        "error": "",
    }


def _failed_row(axis: str, value, exc: Exception) -> dict:
    return {
        "axis": axis,
        "axis_value": value,
        "status": "failed",
        "pooled_auc": "",
        "mean_class_auc": "",
        "balanced_acc": "",
        "balanced_acc_best": "",
        "report_path": "",
        "error": str(exc),
    }


def _write_summary(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_SUMMARY_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def penultimate_layer(architecture: str) -> int:
    """The next-to-last catalog entry: dense128 for the reference CNN."""
    return layer_catalog(architecture, 10)[-2][0]


def run_sweep(config: ExperimentConfig) -> tuple[list[MintAuditReport], list[dict]]:
    """One audit per sweep point; failures are recorded, not fatal.

    Writes summary.csv plus per-point pooled ROC CSVs under
    output_dir/sweep_<axis>/. The classes axis reuses a single audit and
    reports its per-class view, matching the per-class figure layout.
    """
    axis = config.sweep_axis
    if axis is None:
        raise ConfigurationError("run_sweep needs a config with a sweep axis set")
    sweep_dir = Path(config.output_dir) / f"sweep_{axis}"
    sweep_dir.mkdir(parents=True, exist_ok=True)

    reports: list[MintAuditReport] = []
    rows: list[dict] = []

    if axis == "classes":
        artifacts = run_audit(config.with_overrides())
        report = artifacts.report
        reports.append(report)
        for class_index, metrics in sorted(report.per_class.items()):
            row = {
                "axis": "classes",
                "axis_value": class_index,
                "status": "ok",
                "pooled_auc": repr(metrics.auc),
                "mean_class_auc": repr(metrics.auc),
                "balanced_acc": repr(metrics.balanced_accuracy),
                "balanced_acc_best": repr(metrics.balanced_accuracy_best),
                "report_path": str(artifacts.report_dir / "report.json"),
                "error": "",
            }
            rows.append(row)
            shutil.copyfile(
                artifacts.report_dir / f"roc_class_{class_index:04d}.csv",
                sweep_dir / f"roc_class_{class_index:04d}.csv",
            )
        _write_summary(sweep_dir / "summary.csv", rows)
        return reports, rows

    for value in config.sweep_values:
        try:
            if axis == "epochs":
                point = config.with_overrides(audited_epochs=int(value))
                artifacts = run_audit(point)
            elif axis == "layers":
                point = config.with_overrides(mint_layer_index=int(value))
                artifacts = run_audit(point, layer_index=int(value))
            else:  # architectures: audit each at its own penultimate layer
                layer = penultimate_layer(str(value))
                point = config.with_overrides(
                    architecture=str(value), mint_layer_index=layer
                )
                artifacts = run_audit(point, layer_index=layer)
        except Exception as exc:
            rows.append(_failed_row(axis, value, exc))
            continue
        reports.append(artifacts.report)
        rows.append(_summary_row(axis, value, artifacts.report, artifacts.report_dir))
        shutil.copyfile(
            artifacts.report_dir / "roc_pooled.csv",
            sweep_dir / f"roc_{axis}_{value}.csv",
        )

    _write_summary(sweep_dir / "summary.csv", rows)
    return reports, rows


def run_baseline_comparison(config: ExperimentConfig) -> dict:
    """MINT vs the output-only attacks on the same checkpoint and eval ids.

    Balanced accuracy here is the best-threshold value for every row:
    the baselines' raw statistics have no calibrated 0.5 point, so a fixed
    threshold would compare MINT against strawmen.
    """
    artifacts = run_audit(config)
    corpus = Corpus.load(artifacts.corpus_dir)
    checkpoint = AuditedModelCheckpoint.load(artifacts.train_dir / "checkpoint")
    eval_ids = json.loads((artifacts.mint_dir / "eval_ids.json").read_text())
    split = DatasetSplit.load(artifacts.split_dir / "split.json")

    pooled_ids = [sid for ids in eval_ids.values() for sid in ids]
    idx = corpus.index_of(pooled_ids)
    images = corpus.pixel_batch(idx)
    labels = corpus.labels[idx]
    membership = split.membership_mask(corpus.sample_ids[idx])

    table: dict[str, dict[str, float]] = {}
    probs = predict(checkpoint, images)
    for method in config.baselines:
        if method == "yeom_loss":
            _, oriented = baselines_mod.yeom_from_probs(probs, labels)
        elif method == "salem_confidence":
            _, oriented = baselines_mod.salem_from_probs(probs)
        else:
            _, oriented = baselines_mod.song_from_probs(probs, labels)
        best, _ = best_balanced_accuracy(oriented, membership)
        table[method] = {
            "auc": roc_auc(oriented, membership).auc,
            "balanced_accuracy": best,
        }

    table["mint"] = {
        "auc": artifacts.report.aggregate.auc,
        "balanced_accuracy": artifacts.report.aggregate.balanced_accuracy_best,
    }

    comparison = {
        "checkpoint_id": checkpoint.checkpoint_id,
        "layer_index": artifacts.report.layer_index,
        "eval_count": len(pooled_ids),
        "rows": table,
    }
    out_path = Path(config.output_dir) / "baseline_comparison.json"
    out_path.write_text(json.dumps(comparison, sort_keys=True, indent=2) + "\n")
    with open(Path(config.output_dir) / "baseline_comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "auc", "balanced_accuracy"])
        for method, values in table.items():
            writer.writerow([method, repr(values["auc"]), repr(values["balanced_accuracy"])])
    return comparison
