"""Per-class membership tests over audited-model activations.

One small 1-D convolutional binary classifier is trained per object class
on balanced member/external embedding pools. Scoring routes each sample to
the model of its class and returns a membership probability; everything
else (ROC, AUC, reports) lives in the metrics module.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .embeddings import EmbeddingSet
from .errors import (
    ConsistencyError,
    DivergenceError,
    EnsembleIncompleteError,
    IntegrityError,
    ProtocolError,
)

MINT_EPOCHS = 50
MINT_BATCH_SIZE = 32


@dataclass(frozen=True)
class MintModelSpec:
    """Architecture of one membership test T(.|theta)."""

    input_len: int
    conv1_filters: int = 32
    conv2_filters: int = 64
    kernel_size: int = 3
    dropout: float = 0.5

    def __post_init__(self):
        if self.input_len < 1:
            raise ValueError(f"input_len must be >= 1, got {self.input_len}")
        if self.conv2_filters != 64:
            raise ValueError(f"conv2_filters is fixed at 64, got {self.conv2_filters}")
        if self.dropout != 0.5:
            raise ValueError(f"dropout is fixed at 0.5, got {self.dropout}")

    def to_dict(self) -> dict:
        return {
            "input_len": self.input_len,
            "conv1_filters": self.conv1_filters,
            "conv2_filters": self.conv2_filters,
            "kernel_size": self.kernel_size,
            "dropout": self.dropout,
        }


class _MintNet(nn.Module):
    def __init__(self, spec: MintModelSpec):
        super().__init__()
        pad = spec.kernel_size // 2
        self.conv1 = nn.Conv1d(1, spec.conv1_filters, spec.kernel_size, padding=pad)
        # ceil mode keeps length-1 inputs alive through the pool
        self.pool = nn.MaxPool1d(2, ceil_mode=True)
        self.conv2 = nn.Conv1d(spec.conv1_filters, spec.conv2_filters, spec.kernel_size, padding=pad)
        self.dropout = nn.Dropout(spec.dropout)
        pooled_len = math.ceil(spec.input_len / 2)
        self.head = nn.Linear(spec.conv2_filters * pooled_len, 1)

    def forward(self, x):
        # x: (batch, input_len) -> membership logit (batch,)
        x = torch.relu(self.conv1(x.unsqueeze(1)))
        x = torch.relu(self.conv2(self.pool(x)))
        x = self.dropout(torch.flatten(x, 1))
        return self.head(x).squeeze(1)


@dataclass(frozen=True)
class MembershipScore:
    sample_id: str
    class_index: int
    score: float
    predicted_member: bool


@dataclass
class MintClassModel:
    """Trained parameters theta for one class slot."""

    class_index: int
    spec: MintModelSpec
    module: nn.Module
    per_epoch_loss: list[float]


def _class_seed(base_seed: int, class_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((base_seed, class_index)))


def build_balanced_mint_sets(
    embeddings: EmbeddingSet,
    class_index: int,
    *,
    seed: int = 0,
    eval_fraction: float = 0.2,
) -> tuple[EmbeddingSet, EmbeddingSet]:
    """Balanced member/external pools for one class, split train/eval.

    The larger membership side is undersampled (seeded draw) to the size of
    the smaller, then both sides are split the same way so train and eval
    each stay exactly 50/50.
    """
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    class_set = embeddings.for_class(class_index)
    member_pos = np.nonzero(class_set.membership)[0]
    external_pos = np.nonzero(~class_set.membership)[0]
    if member_pos.size == 0 or external_pos.size == 0:
        raise ProtocolError(
            f"class {class_index} has {member_pos.size} members and "
            f"{external_pos.size} externals; both sides are required"
        )
    per_side = min(member_pos.size, external_pos.size)
    if per_side < 2:
        raise ProtocolError(
            f"class {class_index} has only {per_side} sample(s) on its smaller "
            "membership side; need at least 2 to hold out an eval part"
        )

    rng = _class_seed(seed, class_index)
    members = member_pos[rng.permutation(member_pos.size)][:per_side]
    externals = external_pos[rng.permutation(external_pos.size)][:per_side]

    n_eval = min(max(1, round(eval_fraction * per_side)), per_side - 1)
    eval_pos = np.concatenate([members[:n_eval], externals[:n_eval]])
    train_pos = np.concatenate([members[n_eval:], externals[n_eval:]])
    return class_set.subset(train_pos), class_set.subset(eval_pos)


def _check_balanced(train_set: EmbeddingSet) -> None:
    n_members = int(train_set.membership.sum())
    if n_members * 2 != len(train_set):
        raise ProtocolError(
            f"training pool is unbalanced: {n_members} members vs "
            f"{len(train_set) - n_members} externals"
        )


def train_mint(
    class_index: int,
    train_set: EmbeddingSet,
    epochs: int = MINT_EPOCHS,
    batch_size: int = MINT_BATCH_SIZE,
    *,
    seed: int = 0,
    spec: MintModelSpec | None = None,
) -> MintClassModel:
    """Train the membership test for one class slot on its balanced pool."""
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if (train_set.class_labels != class_index).any():
        foreign = sorted(set(train_set.class_labels.tolist()) - {class_index})
        raise ProtocolError(f"class-{class_index} pool contains labels {foreign}")
    _check_balanced(train_set)
    if spec is None:
        spec = MintModelSpec(input_len=train_set.vector_len)
    elif spec.input_len != train_set.vector_len:
        raise ConsistencyError(
            f"spec expects input_len {spec.input_len} but pool vectors have "
            f"length {train_set.vector_len}"
        )

    rng = _class_seed(seed, class_index)
    torch.manual_seed(int(rng.integers(2**63)))
    module = _MintNet(spec)
    optimizer = torch.optim.Adam(module.parameters())
    loss_fn = nn.BCEWithLogitsLoss()

    inputs = torch.from_numpy(train_set.vectors)
    targets = torch.from_numpy(train_set.membership.astype(np.float32))

    per_epoch_loss = []
    for epoch in range(1, epochs + 1):
        module.train()
        order = rng.permutation(len(train_set))
        epoch_loss, batches = 0.0, 0
        for start in range(0, order.size, batch_size):
            chunk = torch.from_numpy(order[start:start + batch_size])
            optimizer.zero_grad()
            loss = loss_fn(module(inputs[chunk]), targets[chunk])
            loss_value = float(loss.detach())
            if not np.isfinite(loss_value):
                raise DivergenceError(epoch=epoch, loss=loss_value)
            loss.backward()
            optimizer.step()
            epoch_loss += loss_value
            batches += 1
        per_epoch_loss.append(epoch_loss / batches)

    return MintClassModel(class_index, spec, module, per_epoch_loss)


class MintEnsemble:
    """One trained membership test per class of the audited corpus."""

    def __init__(self, *, layer_index: int, checkpoint_id: str,
                 models: dict[int, MintClassModel], train_seed: int = 0,
                 epochs: int = MINT_EPOCHS, batch_size: int = MINT_BATCH_SIZE):
        if not models:
            raise ValueError("an ensemble needs at least one class model")
        for class_index, model in models.items():
            if model.class_index != class_index:
                raise ConsistencyError(
                    f"slot {class_index} holds a model trained for class {model.class_index}"
                )
        self.layer_index = layer_index
        self.checkpoint_id = checkpoint_id
        self.models = dict(sorted(models.items()))
        self.train_seed = train_seed
        self.epochs = epochs
        self.batch_size = batch_size

    @property
    def classes(self) -> list[int]:
        return list(self.models)

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        specs = {c: m.spec.to_dict() for c, m in self.models.items()}
        first = next(iter(specs.values()))
        manifest = {
            "layer_index": self.layer_index,
            "checkpoint_id": self.checkpoint_id,
            "classes": self.classes,
            "train_seed": self.train_seed,
            "mint_hyperparams": first | {"epochs": self.epochs, "batch_size": self.batch_size},
            "per_class_input_len": {str(c): s["input_len"] for c, s in specs.items()},
        }
        (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        for class_index, model in self.models.items():
            torch.save(model.module.state_dict(), out_dir / f"class_{class_index:04d}.pt")

    @classmethod
    def load(cls, in_dir) -> "MintEnsemble":
        in_dir = Path(in_dir)
        manifest_path = in_dir / "manifest.json"
        if not manifest_path.exists():
            raise IntegrityError(f"missing ensemble manifest: {manifest_path}")
        manifest = json.loads(manifest_path.read_text())
        hyper = manifest["mint_hyperparams"]
        models = {}
        for class_index in manifest["classes"]:
            weights_path = in_dir / f"class_{class_index:04d}.pt"
            if not weights_path.exists():
                raise EnsembleIncompleteError(
                    f"ensemble at {in_dir} lacks weights for class {class_index}"
                )
            spec = MintModelSpec(
                input_len=int(manifest["per_class_input_len"][str(class_index)]),
                conv1_filters=hyper["conv1_filters"],
                conv2_filters=hyper["conv2_filters"],
                kernel_size=hyper["kernel_size"],
                dropout=hyper["dropout"],
            )
            module = _MintNet(spec)
            module.load_state_dict(torch.load(weights_path, map_location="cpu", weights_only=True))
            models[class_index] = MintClassModel(class_index, spec, module, [])
        return cls(
            layer_index=manifest["layer_index"],
            checkpoint_id=manifest["checkpoint_id"],
            models=models,
            train_seed=manifest["train_seed"],
            epochs=hyper.get("epochs", MINT_EPOCHS),
            batch_size=hyper.get("batch_size", MINT_BATCH_SIZE),
        )


def train_ensemble(
    embeddings: EmbeddingSet,
    *,
    epochs: int = MINT_EPOCHS,
    batch_size: int = MINT_BATCH_SIZE,
    seed: int = 0,
    eval_fraction: float = 0.2,
) -> tuple[MintEnsemble, dict[int, EmbeddingSet]]:
    """Train one membership test per class; returns the held-out eval pools."""
    classes = sorted(set(embeddings.class_labels.tolist()))
    models, eval_sets = {}, {}
    for class_index in classes:
        train_set, eval_set = build_balanced_mint_sets(
            embeddings, class_index, seed=seed, eval_fraction=eval_fraction
        )
        models[class_index] = train_mint(
            class_index, train_set, epochs=epochs, batch_size=batch_size, seed=seed
        )
        eval_sets[class_index] = eval_set
    ensemble = MintEnsemble(
        layer_index=embeddings.layer_index,
        checkpoint_id=embeddings.checkpoint_id,
        models=models,
        train_seed=seed,
        epochs=epochs,
        batch_size=batch_size,
    )
    return ensemble, eval_sets


def score(ensemble: MintEnsemble, embeddings: EmbeddingSet,
          threshold: float = 0.5) -> list[MembershipScore]:
    """Score every record with the model of its class. All-or-nothing."""
    if embeddings.layer_index != ensemble.layer_index:
        raise ConsistencyError(
            f"records hold layer-{embeddings.layer_index} embeddings but the "
            f"ensemble audits layer {ensemble.layer_index}"
        )
    if embeddings.checkpoint_id != ensemble.checkpoint_id:
        raise IntegrityError(
            f"records come from checkpoint {embeddings.checkpoint_id} but the "
            f"ensemble audits checkpoint {ensemble.checkpoint_id}"
        )
    present = sorted(set(embeddings.class_labels.tolist()))
    missing = [c for c in present if c not in ensemble.models]
    if missing:
        raise EnsembleIncompleteError(f"no trained model for classes {missing}")

    values = np.empty(len(embeddings), dtype=np.float64)
    with torch.no_grad():
        for class_index in present:
            positions = np.nonzero(embeddings.class_labels == class_index)[0]
            module = ensemble.models[class_index].module
            module.eval()
            logits = module(torch.from_numpy(embeddings.vectors[positions]))
            values[positions] = torch.sigmoid(logits).numpy()

    return [
        MembershipScore(
            sample_id=str(embeddings.sample_ids[i]),
            class_index=int(embeddings.class_labels[i]),
            score=float(values[i]),
            predicted_member=bool(values[i] >= threshold),
        )
        for i in range(len(embeddings))
    ]


def scores_by_class(scores: list[MembershipScore],
                    membership_by_id: dict[str, bool]) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Group scores for report building: {class: (scores, true_membership)}."""
    grouped: dict[int, tuple[list, list]] = {}
    for item in scores:
        bucket = grouped.setdefault(item.class_index, ([], []))
        bucket[0].append(item.score)
        bucket[1].append(membership_by_id[item.sample_id])
    return {
        c: (np.array(vals, dtype=np.float64), np.array(flags, dtype=bool))
        for c, (vals, flags) in grouped.items()
    }
