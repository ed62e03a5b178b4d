"""The audited model M: architectures, training, checkpoints.

The reference architecture is an 8-layer CNN (six 3x3 conv layers with
filter counts 32,32,64,64,128,128, then a 128-unit dense layer, then the
softmax head). Each architecture publishes a layer catalog naming the
activation taps an audit may request; layer indices in the catalog are the
contract every downstream stage uses.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .corpus import Corpus, DatasetSplit
from .errors import ConfigurationError, DivergenceError, IntegrityError, ProtocolError

ARCHITECTURES = ("paper_cnn", "resnet50", "resnet100", "efficientnet_b0")

_LEARNING_RATE = 1e-3
_EVAL_BATCH = 256


def layer_catalog(architecture: str, num_classes: int) -> list[tuple[int, str, tuple[int, ...]]]:
    """Ordered (layer_index, layer_name, output_shape) taps for an architecture."""
    if architecture == "paper_cnn":
        return [
            (1, "conv32_a", (32, 32, 32)),
            (2, "conv32_b_pool", (32, 16, 16)),
            (3, "conv64_a", (64, 16, 16)),
            (4, "conv64_b_pool", (64, 8, 8)),
            (5, "conv128_a", (128, 8, 8)),
            (6, "conv128_b_pool", (128, 4, 4)),
            (7, "dense128", (128,)),
            (8, "softmax", (num_classes,)),
        ]
    if architecture in ("resnet50", "resnet100"):
        return [(1, "penultimate", (2048,)), (2, "softmax", (num_classes,))]
    if architecture == "efficientnet_b0":
        return [(1, "penultimate", (1280,)), (2, "softmax", (num_classes,))]
    raise ConfigurationError(f"unknown architecture {architecture!r}, expected one of {ARCHITECTURES}")


@dataclass(frozen=True)
class AuditedModelSpec:
    architecture: str
    num_classes: int
    layer_catalog: list = field(default=None, compare=False)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        catalog = layer_catalog(self.architecture, self.num_classes)
        if self.layer_catalog is None:
            object.__setattr__(self, "layer_catalog", catalog)
        elif [tuple(e[:2]) + (tuple(e[2]),) for e in self.layer_catalog] != [
            (i, n, tuple(s)) for i, n, s in catalog
        ]:
            raise ValueError("layer_catalog does not match the architecture definition")

    @property
    def layer_indices(self) -> list[int]:
        return [entry[0] for entry in self.layer_catalog]

    def layer_dim(self, layer_index: int) -> int:
        for index, _, shape in self.layer_catalog:
            if index == layer_index:
                return int(np.prod(shape))
        raise KeyError(f"layer {layer_index} not in catalog")

    def to_dict(self) -> dict:
        return {"architecture": self.architecture, "num_classes": self.num_classes}


class _PaperCnn(nn.Module):
    """Six conv layers in three pooled blocks, then dense128 and the head.

    Every conv is followed by batch norm and ReLU; each block ends with
    2x2 max pooling and dropout 0.25; dropout 0.5 sits before the output
    layer. Tap points match the published layer catalog.
    """

    def __init__(self, num_classes: int):
        super().__init__()

        def conv(in_ch, out_ch):
            return nn.Sequential(
                nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1),
                nn.BatchNorm2d(out_ch),
                nn.ReLU(),
            )

        self.conv1 = conv(3, 32)
        self.conv2 = conv(32, 32)
        self.conv3 = conv(32, 64)
        self.conv4 = conv(64, 64)
        self.conv5 = conv(64, 128)
        self.conv6 = conv(128, 128)
        self.pool = nn.MaxPool2d(2)
        self.block_dropout = nn.Dropout(0.25)
        self.dense = nn.Linear(128 * 4 * 4, 128)
        self.head_dropout = nn.Dropout(0.5)
        self.head = nn.Linear(128, num_classes)

    def forward(self, x, taps=None):
        recorded = {}

        def record(index, tensor):
            if taps is not None and index in taps:
                recorded[index] = tensor

        x = self.conv1(x)
        record(1, x)
        x = self.block_dropout(self.pool(self.conv2(x)))
        record(2, x)
        x = self.conv3(x)
        record(3, x)
        x = self.block_dropout(self.pool(self.conv4(x)))
        record(4, x)
        x = self.conv5(x)
        record(5, x)
        x = self.block_dropout(self.pool(self.conv6(x)))
        record(6, x)
        x = torch.relu(self.dense(torch.flatten(x, 1)))
        record(7, x)
        logits = self.head(self.head_dropout(x))
        record(8, torch.softmax(logits, dim=1))
        if taps is not None:
            return logits, recorded
        return logits


class _BackboneWithTaps(nn.Module):
    """torchvision backbone split into features / head for tap access."""

    def __init__(self, features: nn.Module, head: nn.Module):
        super().__init__()
        self.features = features
        self.head = head

    def forward(self, x, taps=None):
        penultimate = torch.flatten(self.features(x), 1)
        logits = self.head(penultimate)
        if taps is not None:
            recorded = {}
            if 1 in taps:
                recorded[1] = penultimate
            if 2 in taps:
                recorded[2] = torch.softmax(logits, dim=1)
            return logits, recorded
        return logits


def _build_torchvision(architecture: str, num_classes: int) -> nn.Module:
    from torchvision import models

    if architecture in ("resnet50", "resnet100"):
        factory = models.resnet50 if architecture == "resnet50" else models.resnet101
        net = factory(weights=None, num_classes=num_classes)
        # 32x32 stem: stride-1 3x3 first conv, no initial max pool
        net.conv1 = nn.Conv2d(3, 64, kernel_size=3, stride=1, padding=1, bias=False)
        net.maxpool = nn.Identity()
        head = net.fc
        net.fc = nn.Identity()
        return _BackboneWithTaps(net, head)
    if architecture == "efficientnet_b0":
        net = models.efficientnet_b0(weights=None, num_classes=num_classes)
        first = net.features[0][0]
        net.features[0][0] = nn.Conv2d(
            first.in_channels, first.out_channels, kernel_size=3, stride=1, padding=1, bias=False
        )
        head = net.classifier
        net.classifier = nn.Identity()
        return _BackboneWithTaps(net, head)
    raise ConfigurationError(f"unknown architecture {architecture!r}, expected one of {ARCHITECTURES}")


@dataclass
class AuditedModel:
    """An (untrained or training) audited model bound to its spec."""

    spec: AuditedModelSpec
    module: nn.Module
    init_seed: int


def build_model(spec: AuditedModelSpec, init_seed: int) -> AuditedModel:
    """Construct an untrained audited model with seeded initialization."""
    torch.manual_seed(init_seed)
    if spec.architecture == "paper_cnn":
        module = _PaperCnn(spec.num_classes)
    else:
        module = _build_torchvision(spec.architecture, spec.num_classes)
    return AuditedModel(spec=spec, module=module, init_seed=init_seed)


@dataclass
class TrainReport:
    train_accuracy: float
    test_accuracy: float
    per_epoch_loss: list[float]

    def to_dict(self) -> dict:
        return {
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "per_epoch_loss": self.per_epoch_loss,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json() + "\n")


class AuditedModelCheckpoint:
    """Trained weights w plus the provenance needed to audit them."""

    def __init__(self, spec: AuditedModelSpec, module: nn.Module, *, epochs_trained: int,
                 batch_size: int, train_seed: int, split_ref: str):
        if epochs_trained < 1:
            raise ValueError(f"epochs_trained must be >= 1, got {epochs_trained}")
        self.spec = spec
        self.module = module
        self.epochs_trained = epochs_trained
        self.batch_size = batch_size
        self.train_seed = train_seed
        self.split_ref = split_ref
        self._checkpoint_id = None

    @property
    def checkpoint_id(self) -> str:
        if self._checkpoint_id is None:
            digest = hashlib.sha256()
            digest.update(json.dumps(self._metadata_core(), sort_keys=True).encode())
            for name, tensor in sorted(self.module.state_dict().items()):
                digest.update(name.encode())
                digest.update(tensor.numpy().tobytes())
            self._checkpoint_id = digest.hexdigest()[:16]
        return self._checkpoint_id

    def _metadata_core(self) -> dict:
        return {
            "architecture": self.spec.architecture,
            "num_classes": self.spec.num_classes,
            "epochs_trained": self.epochs_trained,
            "batch_size": self.batch_size,
            "train_seed": self.train_seed,
            "split_ref": self.split_ref,
        }

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        torch.save(self.module.state_dict(), out_dir / "weights.pt")
        metadata = self._metadata_core() | {"checkpoint_id": self.checkpoint_id}
        (out_dir / "metadata.json").write_text(json.dumps(metadata, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, in_dir) -> "AuditedModelCheckpoint":
        in_dir = Path(in_dir)
        meta_path = in_dir / "metadata.json"
        weights_path = in_dir / "weights.pt"
        for path in (meta_path, weights_path):
            if not path.exists():
                raise IntegrityError(f"missing checkpoint file: {path}")
        metadata = json.loads(meta_path.read_text())
        spec = AuditedModelSpec(metadata["architecture"], metadata["num_classes"])
        model = build_model(spec, init_seed=0)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.module.load_state_dict(state)
        checkpoint = cls(
            spec,
            model.module,
            epochs_trained=metadata["epochs_trained"],
            batch_size=metadata["batch_size"],
            train_seed=metadata["train_seed"],
            split_ref=metadata["split_ref"],
        )
        if checkpoint.checkpoint_id != metadata["checkpoint_id"]:
            raise IntegrityError(
                f"checkpoint id mismatch in {in_dir}: weights do not match metadata "
                f"({checkpoint.checkpoint_id} vs {metadata['checkpoint_id']})"
            )
        return checkpoint


def _to_input_tensor(pixels: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(pixels.transpose(0, 3, 1, 2)))


def _accuracy_on(module: nn.Module, corpus: Corpus, indices: np.ndarray) -> float:
    module.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, indices.size, _EVAL_BATCH):
            chunk = indices[start:start + _EVAL_BATCH]
            logits = module(_to_input_tensor(corpus.pixel_batch(chunk)))
            predicted = logits.argmax(dim=1).numpy()
            correct += int((predicted == corpus.labels[chunk]).sum())
    return correct / indices.size


def train(
    model: AuditedModel,
    corpus: Corpus,
    split: DatasetSplit,
    epochs: int,
    batch_size: int = 32,
    *,
    train_seed: int = 0,
    on_batch=None,
) -> tuple[AuditedModelCheckpoint, TrainReport]:
    """Train on the member side of the split only.

    `on_batch`, when given, receives the sample ids of every training batch;
    tests use it to assert that no external sample is ever touched.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if not split.members:
        raise ProtocolError("split has an empty member set, nothing to train on")
    if split.corpus != corpus.descriptor.name:
        raise ProtocolError(
            f"split is for corpus {split.corpus!r} but got {corpus.descriptor.name!r}"
        )

    member_idx = corpus.index_of(split.members)
    external_idx = corpus.index_of(split.externals)

    module = model.module
    optimizer = torch.optim.Adam(module.parameters(), lr=_LEARNING_RATE)
    loss_fn = nn.CrossEntropyLoss()
    rng = np.random.default_rng(train_seed)
    torch.manual_seed(train_seed)

    per_epoch_loss = []
    for epoch in range(1, epochs + 1):
        module.train()
        order = member_idx[rng.permutation(member_idx.size)]
        epoch_loss, batches = 0.0, 0
        for start in range(0, order.size, batch_size):
            chunk = order[start:start + batch_size]
            if on_batch is not None:
                on_batch([str(s) for s in corpus.sample_ids[chunk]])
            inputs = _to_input_tensor(corpus.pixel_batch(chunk))
            targets = torch.from_numpy(corpus.labels[chunk])
            optimizer.zero_grad()
            loss = loss_fn(module(inputs), targets)
            loss_value = float(loss.detach())
            if not np.isfinite(loss_value):
                raise DivergenceError(epoch=epoch, loss=loss_value)
            loss.backward()
            optimizer.step()
            epoch_loss += loss_value
            batches += 1
        per_epoch_loss.append(epoch_loss / batches)

    report = TrainReport(
        train_accuracy=_accuracy_on(module, corpus, member_idx),
        test_accuracy=_accuracy_on(module, corpus, external_idx) if external_idx.size else float("nan"),
        per_epoch_loss=per_epoch_loss,
    )
    checkpoint = AuditedModelCheckpoint(
        model.spec,
        module,
        epochs_trained=epochs,
        batch_size=batch_size,
        train_seed=train_seed,
        split_ref=split.split_id,
    )
    return checkpoint, report


def predict(checkpoint: AuditedModelCheckpoint, images: np.ndarray) -> np.ndarray:
    """Class-probability vectors for a batch of 32x32x3 unit-interval images."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    if images.ndim != 4 or images.shape[1:] != (32, 32, 3):
        raise ValueError(f"expected Nx32x32x3 images, got {images.shape}")
    module = checkpoint.module
    module.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, images.shape[0], _EVAL_BATCH):
            logits = module(_to_input_tensor(images[start:start + _EVAL_BATCH]))
            outputs.append(torch.softmax(logits, dim=1).numpy())
    return np.concatenate(outputs).astype(np.float64)


def append_run_record(csv_path, checkpoint: AuditedModelCheckpoint, report: TrainReport,
                      corpus_name: str = "") -> None:
    """Append one training run to the shared runs log."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    fields = [
        "checkpoint_id", "corpus", "architecture", "num_classes", "epochs_trained",
        "batch_size", "train_seed", "split_ref", "train_accuracy", "test_accuracy",
        "final_loss",
    ]
    write_header = not csv_path.exists()
    with open(csv_path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        if write_header:
            writer.writeheader()
        writer.writerow({
            "checkpoint_id": checkpoint.checkpoint_id,
            "corpus": corpus_name,
            "architecture": checkpoint.spec.architecture,
            "num_classes": checkpoint.spec.num_classes,
            "epochs_trained": checkpoint.epochs_trained,
            "batch_size": checkpoint.batch_size,
            "train_seed": checkpoint.train_seed,
            "split_ref": checkpoint.split_ref,
            "train_accuracy": repr(report.train_accuracy),
            "test_accuracy": repr(report.test_accuracy),
            "final_loss": repr(report.per_epoch_loss[-1]),
        })
