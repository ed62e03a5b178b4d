"""Activation extraction: the model outcome y for any cataloged layer.

A chosen layer's activations are flattened to one float32 vector per
sample (convolutional maps in C, H, W row-major order) and tagged with the
sample's membership side from the split manifest. Archives persist the
vectors with enough provenance that a later audit cannot silently mix
layers, checkpoints, or splits.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .classifier import AuditedModelCheckpoint, _to_input_tensor
from .corpus import Corpus, DatasetSplit
from .errors import CatalogError, ConsistencyError, IntegrityError

_EXTRACT_BATCH = 256


@dataclass(frozen=True)
class EmbeddingRecord:
    sample_id: str
    layer_index: int
    vector: np.ndarray
    membership: bool
    class_label: int


class EmbeddingSet:
    """Columnar embeddings for one (checkpoint, layer, split) triple."""

    def __init__(self, *, layer_index: int, checkpoint_id: str, split_ref: str,
                 vectors: np.ndarray, sample_ids, membership, class_labels):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValueError(f"expected a 2-D vector matrix, got shape {vectors.shape}")
        if not np.isfinite(vectors).all():
            raise ValueError("embedding vectors contain non-finite entries")
        n = vectors.shape[0]
        self.layer_index = int(layer_index)
        self.checkpoint_id = checkpoint_id
        self.split_ref = split_ref
        self.vectors = vectors
        self.sample_ids = np.asarray(sample_ids, dtype=np.str_)
        self.membership = np.asarray(membership, dtype=bool)
        self.class_labels = np.asarray(class_labels, dtype=np.int64)
        if not (self.sample_ids.shape == (n,) == self.membership.shape == self.class_labels.shape):
            raise ValueError("metadata arrays do not align with the vector matrix")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def vector_len(self) -> int:
        return self.vectors.shape[1]

    def records(self) -> Iterator[EmbeddingRecord]:
        for i in range(len(self)):
            yield EmbeddingRecord(
                sample_id=str(self.sample_ids[i]),
                layer_index=self.layer_index,
                vector=self.vectors[i],
                membership=bool(self.membership[i]),
                class_label=int(self.class_labels[i]),
            )

    def for_class(self, class_index: int) -> "EmbeddingSet":
        mask = self.class_labels == class_index
        return EmbeddingSet(
            layer_index=self.layer_index,
            checkpoint_id=self.checkpoint_id,
            split_ref=self.split_ref,
            vectors=self.vectors[mask],
            sample_ids=self.sample_ids[mask],
            membership=self.membership[mask],
            class_labels=self.class_labels[mask],
        )

    def subset(self, positions) -> "EmbeddingSet":
        positions = np.asarray(positions)
        return EmbeddingSet(
            layer_index=self.layer_index,
            checkpoint_id=self.checkpoint_id,
            split_ref=self.split_ref,
            vectors=self.vectors[positions],
            sample_ids=self.sample_ids[positions],
            membership=self.membership[positions],
            class_labels=self.class_labels[positions],
        )

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = np.ascontiguousarray(self.vectors).tobytes()
        meta = {
            "checkpoint_id": self.checkpoint_id,
            "layer_index": self.layer_index,
            "vector_len": self.vector_len,
            "count": len(self),
            "split_ref": self.split_ref,
            "sha256": hashlib.sha256(payload).hexdigest(),
            "sample_ids": self.sample_ids.tolist(),
            "membership": self.membership.astype(int).tolist(),
            "class_labels": self.class_labels.tolist(),
        }
        (out_dir / "payload.bin").write_bytes(payload)
        (out_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")

    @classmethod
    def load(cls, in_dir, *, expected_layer_index: int | None = None,
             expected_checkpoint_id: str | None = None) -> "EmbeddingSet":
        in_dir = Path(in_dir)
        meta_path = in_dir / "meta.json"
        payload_path = in_dir / "payload.bin"
        for path in (meta_path, payload_path):
            if not path.exists():
                raise IntegrityError(f"missing embedding archive file: {path}")
        meta = json.loads(meta_path.read_text())
        payload = payload_path.read_bytes()
        actual_sha = hashlib.sha256(payload).hexdigest()
        if actual_sha != meta["sha256"]:
            raise IntegrityError(
                f"embedding payload checksum mismatch in {in_dir}: "
                f"expected {meta['sha256']}, got {actual_sha}"
            )
        if expected_layer_index is not None and meta["layer_index"] != expected_layer_index:
            raise IntegrityError(
                f"archive {in_dir} holds layer {meta['layer_index']} embeddings, "
                f"but layer {expected_layer_index} was requested"
            )
        if expected_checkpoint_id is not None and meta["checkpoint_id"] != expected_checkpoint_id:
            raise IntegrityError(
                f"archive {in_dir} was extracted from checkpoint {meta['checkpoint_id']}, "
                f"not {expected_checkpoint_id}"
            )
        vectors = np.frombuffer(payload, dtype=np.float32).reshape(meta["count"], meta["vector_len"])
        return cls(
            layer_index=meta["layer_index"],
            checkpoint_id=meta["checkpoint_id"],
            split_ref=meta["split_ref"],
            vectors=vectors.copy(),
            sample_ids=meta["sample_ids"],
            membership=np.array(meta["membership"], dtype=bool),
            class_labels=meta["class_labels"],
        )


def _check_layer(checkpoint: AuditedModelCheckpoint, layer_index: int) -> None:
    valid = checkpoint.spec.layer_indices
    if layer_index not in valid:
        raise CatalogError(layer_index, valid)


def extract_set(
    checkpoint: AuditedModelCheckpoint,
    corpus: Corpus,
    layer_index: int,
    split: DatasetSplit,
    *,
    sample_ids=None,
    batch_size: int = _EXTRACT_BATCH,
) -> EmbeddingSet:
    """Extract one layer's activations for the given samples (default: all).

    Runs in inference mode, so dropout is disabled and batch norm uses its
    trained running statistics; repeated extraction is bit-identical.
    """
    _check_layer(checkpoint, layer_index)
    if sample_ids is None:
        indices = np.arange(len(corpus))
    else:
        indices = corpus.index_of(sample_ids)

    module = checkpoint.module
    module.eval()
    parts = []
    with torch.no_grad():
        for start in range(0, indices.size, batch_size):
            chunk = indices[start:start + batch_size]
            _, taps = module(_to_input_tensor(corpus.pixel_batch(chunk)), taps={layer_index})
            parts.append(torch.flatten(taps[layer_index], 1).numpy().astype(np.float32))

    vectors = np.concatenate(parts) if parts else np.empty((0, checkpoint.spec.layer_dim(layer_index)), np.float32)
    ids = corpus.sample_ids[indices]
    return EmbeddingSet(
        layer_index=layer_index,
        checkpoint_id=checkpoint.checkpoint_id,
        split_ref=split.split_id,
        vectors=vectors,
        sample_ids=ids,
        membership=split.membership_mask(ids),
        class_labels=corpus.labels[indices],
    )


def extract(checkpoint, corpus, layer_index, split, **kwargs) -> Iterator[EmbeddingRecord]:
    """Stream EmbeddingRecords; see extract_set for the batched form."""
    yield from extract_set(checkpoint, corpus, layer_index, split, **kwargs).records()


def persist_embeddings(records, path, *, checkpoint_id: str | None = None,
                       split_ref: str | None = None) -> None:
    """Write records (an EmbeddingSet or record iterable) as an archive."""
    if isinstance(records, EmbeddingSet):
        records.save(path)
        return
    materialized = list(records)
    if not materialized:
        raise ValueError("cannot persist an empty record stream")
    layer_indices = {r.layer_index for r in materialized}
    if len(layer_indices) != 1:
        raise ConsistencyError(f"mixed layer indices in one archive: {sorted(layer_indices)}")
    lengths = {r.vector.shape for r in materialized}
    if len(lengths) != 1:
        raise ConsistencyError(f"mixed vector lengths in one archive: {sorted(lengths)}")
    if checkpoint_id is None or split_ref is None:
        raise ValueError("checkpoint_id and split_ref are required to persist a record stream")
    EmbeddingSet(
        layer_index=materialized[0].layer_index,
        checkpoint_id=checkpoint_id,
        split_ref=split_ref,
        vectors=np.stack([r.vector for r in materialized]),
        sample_ids=[r.sample_id for r in materialized],
        membership=[r.membership for r in materialized],
        class_labels=[r.class_label for r in materialized],
    ).save(path)


def load_embeddings(path, **expected) -> EmbeddingSet:
    return EmbeddingSet.load(path, **expected)
