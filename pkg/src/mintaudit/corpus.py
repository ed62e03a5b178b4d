"""Corpus ingestion and deterministic member/external splitting.

Every corpus is reduced to the same shape: 32x32x3 images with pixel values
in [0, 1], integer class labels, and stable string sample ids. Splits are
reproducible functions of (corpus, fraction, seed) and serialize to JSON
manifests so that every later stage can state exactly which samples the
audited model saw.
"""

from __future__ import annotations

import csv
import hashlib
import json
import pickle
from collections.abc import Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IngestionError, IntegrityError

CORPUS_NAMES = ("cifar10", "cifar100", "gtsrb", "synthetic")

CHECKSUM_MANIFEST = "checksums.sha256.json"

_CIFAR10_DIR = "cifar-10-batches-py"
_CIFAR100_DIR = "cifar-100-python"
_CIFAR10_FILES = [f"data_batch_{i}" for i in range(1, 6)] + ["test_batch"]
_CIFAR100_FILES = ["train", "test"]


@dataclass(frozen=True)
class LabeledImage:
    """One sample as the audited model sees it."""

    pixels: np.ndarray
    class_label: int
    sample_id: str


@dataclass(frozen=True)
class CorpusDescriptor:
    name: str
    num_classes: int
    image_count: int

    def __post_init__(self):
        if self.name not in CORPUS_NAMES:
            raise ValueError(f"unknown corpus {self.name!r}, expected one of {CORPUS_NAMES}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "num_classes": self.num_classes,
            "image_count": self.image_count,
        }


class Corpus:
    """Materialized corpus: descriptor plus aligned pixel/label/id arrays.

    Pixels are kept in their storage dtype (uint8 for ingested image files,
    float32 for synthetic data) and converted to unit-interval float32 on
    access, so a 60k-image corpus does not quadruple in memory.
    """

    def __init__(self, descriptor: CorpusDescriptor, pixels: np.ndarray,
                 labels: np.ndarray, sample_ids: np.ndarray):
        if pixels.shape[1:] != (32, 32, 3):
            raise ValueError(f"expected Nx32x32x3 pixels, got {pixels.shape}")
        if not (len(pixels) == len(labels) == len(sample_ids) == descriptor.image_count):
            raise ValueError("descriptor image_count disagrees with array lengths")
        if len(np.unique(sample_ids)) != len(sample_ids):
            raise ValueError("sample_ids are not unique")
        if labels.size and (labels.min() < 0 or labels.max() >= descriptor.num_classes):
            raise ValueError("class labels outside [0, num_classes)")
        self.descriptor = descriptor
        self._pixels = pixels
        self.labels = np.asarray(labels, dtype=np.int64)
        self.sample_ids = np.asarray(sample_ids, dtype=np.str_)

    def __len__(self) -> int:
        return self.descriptor.image_count

    def pixel_batch(self, indices) -> np.ndarray:
        """Unit-interval float32 pixels for the given positions."""
        batch = self._pixels[np.asarray(indices)]
        if batch.dtype == np.uint8:
            return batch.astype(np.float32) / 255.0
        return batch.astype(np.float32, copy=False)

    def image(self, index: int) -> LabeledImage:
        return LabeledImage(
            pixels=self.pixel_batch([index])[0],
            class_label=int(self.labels[index]),
            sample_id=str(self.sample_ids[index]),
        )

    def stream(self) -> Iterator[LabeledImage]:
        for i in range(len(self)):
            yield self.image(i)

    def index_of(self, sample_ids) -> np.ndarray:
        """Positions of the given sample ids, in the order given."""
        lookup = {sid: i for i, sid in enumerate(self.sample_ids)}
        try:
            return np.array([lookup[str(s)] for s in sample_ids], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"sample id {exc.args[0]!r} not in corpus {self.descriptor.name}") from None

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(
            out_dir / "corpus.npz",
            pixels=self._pixels,
            labels=self.labels,
            sample_ids=self.sample_ids,
        )
        (out_dir / "corpus.json").write_text(
            json.dumps(self.descriptor.to_dict(), sort_keys=True, indent=2) + "\n"
        )

    @classmethod
    def load(cls, in_dir) -> "Corpus":
        in_dir = Path(in_dir)
        meta_path = in_dir / "corpus.json"
        data_path = in_dir / "corpus.npz"
        for path in (meta_path, data_path):
            if not path.exists():
                raise IngestionError(f"missing corpus file: {path}")
        meta = json.loads(meta_path.read_text())
        with np.load(data_path) as data:
            return cls(
                CorpusDescriptor(**meta),
                pixels=data["pixels"],
                labels=data["labels"],
                sample_ids=data["sample_ids"],
            )


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _verify_checksums(corpus_dir: Path, filenames) -> None:
    manifest_path = corpus_dir / CHECKSUM_MANIFEST
    if not manifest_path.exists():
        return
    expected = json.loads(manifest_path.read_text())
    for name in filenames:
        if name in expected:
            actual = _sha256_file(corpus_dir / name)
            if actual != expected[name]:
                raise IntegrityError(
                    f"checksum mismatch for {corpus_dir / name}: "
                    f"expected {expected[name]}, got {actual}"
                )


def _find_corpus_dir(root_path, canonical: str, probe: str) -> Path:
    """Accept either the canonical directory itself or its parent."""
    root = Path(root_path)
    for candidate in (root / canonical, root):
        if (candidate / probe).exists():
            return candidate
    raise IngestionError(
        f"missing corpus file: {root / canonical / probe} (also tried {root / probe})"
    )


def _read_cifar_batch(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return pickle.load(fh, encoding="bytes")
    except FileNotFoundError:
        raise IngestionError(f"missing corpus file: {path}") from None
    except (pickle.UnpicklingError, EOFError, ValueError) as exc:
        raise IngestionError(f"corrupt corpus file: {path} ({exc})") from exc


def _load_cifar(root_path, name: str) -> Corpus:
    if name == "cifar10":
        canonical, files, label_key, num_classes = _CIFAR10_DIR, _CIFAR10_FILES, b"labels", 10
    else:
        canonical, files, label_key, num_classes = _CIFAR100_DIR, _CIFAR100_FILES, b"fine_labels", 100
    corpus_dir = _find_corpus_dir(root_path, canonical, files[0])
    _verify_checksums(corpus_dir, files)

    pixel_parts, label_parts, id_parts = [], [], []
    for filename in files:
        batch = _read_cifar_batch(corpus_dir / filename)
        if b"data" not in batch or label_key not in batch:
            raise IngestionError(
                f"corrupt corpus file: {corpus_dir / filename} (missing data or label field)"
            )
        data = np.asarray(batch[b"data"], dtype=np.uint8)
        labels = np.asarray(batch[label_key], dtype=np.int64)
        if data.ndim != 2 or data.shape[1] != 3072 or data.shape[0] != labels.shape[0]:
            raise IngestionError(
                f"corrupt corpus file: {corpus_dir / filename} (bad array shapes {data.shape})"
            )
        # rows are channel-major planes: 3x32x32 -> HWC
        pixel_parts.append(data.reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
        label_parts.append(labels)
        id_parts.extend(f"{name}/{filename}/{i:05d}" for i in range(data.shape[0]))

    pixels = np.concatenate(pixel_parts)
    descriptor = CorpusDescriptor(name, num_classes, pixels.shape[0])
    return Corpus(descriptor, pixels, np.concatenate(label_parts), np.array(id_parts))


def _resize_bilinear(pixels: np.ndarray, size: int = 32) -> np.ndarray:
    from PIL import Image

    img = Image.fromarray(pixels).resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


def _read_gtsrb_annotations(csv_path: Path) -> list[tuple[str, int]]:
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=";")
        if reader.fieldnames is None or "Filename" not in reader.fieldnames:
            raise IngestionError(f"corrupt corpus file: {csv_path} (no Filename column)")
        if "ClassId" not in reader.fieldnames:
            raise IngestionError(
                f"corrupt corpus file: {csv_path} (annotations lack the ClassId column; "
                "use the ground-truth release that includes class ids)"
            )
        return [(row["Filename"], int(row["ClassId"])) for row in reader]


def _load_gtsrb(root_path) -> Corpus:
    root = Path(root_path)
    base = root / "GTSRB" if (root / "GTSRB").is_dir() else root
    train_dir = base / "Final_Training" / "Images"
    test_dir = base / "Final_Test" / "Images"
    if not train_dir.is_dir() and not test_dir.is_dir():
        raise IngestionError(f"missing corpus file: {train_dir} (no GTSRB image directories under {base})")

    sources: list[tuple[Path, str, int]] = []
    if train_dir.is_dir():
        for class_dir in sorted(p for p in train_dir.iterdir() if p.is_dir()):
            csv_path = class_dir / f"GT-{class_dir.name}.csv"
            if not csv_path.exists():
                raise IngestionError(f"missing corpus file: {csv_path}")
            for filename, class_id in _read_gtsrb_annotations(csv_path):
                sources.append((class_dir / filename, f"gtsrb/train/{class_dir.name}/{filename}", class_id))
    if test_dir.is_dir():
        csv_candidates = [test_dir / "GT-final_test.csv", base / "GT-final_test.csv"]
        csv_path = next((p for p in csv_candidates if p.exists()), None)
        if csv_path is None:
            raise IngestionError(f"missing corpus file: {csv_candidates[0]}")
        for filename, class_id in _read_gtsrb_annotations(csv_path):
            sources.append((test_dir / filename, f"gtsrb/test/{filename}", class_id))

    from PIL import Image, UnidentifiedImageError

    pixels = np.empty((len(sources), 32, 32, 3), dtype=np.uint8)
    labels = np.empty(len(sources), dtype=np.int64)
    ids = []
    for i, (path, sample_id, class_id) in enumerate(sources):
        try:
            with Image.open(path) as img:
                rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except FileNotFoundError:
            raise IngestionError(f"missing corpus file: {path}") from None
        except (UnidentifiedImageError, OSError) as exc:
            raise IngestionError(f"corrupt corpus file: {path} ({exc})") from exc
        pixels[i] = _resize_bilinear(rgb)
        labels[i] = class_id
        ids.append(sample_id)

    descriptor = CorpusDescriptor("gtsrb", 43, len(sources))
    return Corpus(descriptor, pixels, labels, np.array(ids))


def make_synthetic_corpus(
    num_classes: int,
    per_class: int,
    seed: int,
    *,
    class_contrast: float = 0.30,
    structure_noise: float = 0.22,
    pixel_noise: float = 0.05,
) -> Corpus:
    """Deterministic toy corpus a small classifier can overfit in minutes.

    Each image is a shared low-frequency class pattern plus a per-sample
    low-frequency pattern plus pixel noise. The class pattern makes classes
    separable; the per-sample pattern gives the audited model something
    instance-specific to memorize, which is what a membership audit needs
    to detect.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if per_class < 2:
        raise ValueError(f"per_class must be >= 2, got {per_class}")

    rng = np.random.default_rng(seed)
    count = num_classes * per_class
    class_patterns = rng.standard_normal((num_classes, 4, 4, 3))
    sample_patterns = rng.standard_normal((count, 8, 8, 3))
    noise = rng.standard_normal((count, 32, 32, 3))

    labels = np.repeat(np.arange(num_classes), per_class)
    class_field = np.kron(class_patterns[labels], np.ones((1, 8, 8, 1)))
    sample_field = np.kron(sample_patterns, np.ones((1, 4, 4, 1)))
    pixels = 0.5 + class_contrast * class_field + structure_noise * sample_field + pixel_noise * noise
    pixels = np.clip(pixels, 0.0, 1.0).astype(np.float32)

    ids = np.array([f"syn{seed}-{i:06d}" for i in range(count)])
    descriptor = CorpusDescriptor("synthetic", num_classes, count)
    return Corpus(descriptor, pixels, labels, ids)


def load_corpus(name: str, root_path=None, **synthetic_params):
    """Ingest a corpus and return (descriptor, stream of LabeledImage).

    `root_path` locates the canonical published layout for the real
    corpora; the synthetic corpus ignores it and takes generator keywords
    (num_classes, per_class, seed, ...) instead. Use `load_corpus_arrays`
    when the materialized form is more convenient than the stream.
    """
    corpus = load_corpus_arrays(name, root_path, **synthetic_params)
    return corpus.descriptor, corpus.stream()


def load_corpus_arrays(name: str, root_path=None, **synthetic_params) -> Corpus:
    if name in ("cifar10", "cifar100"):
        if root_path is None:
            raise ValueError(f"root_path is required for corpus {name!r}")
        if synthetic_params:
            raise ValueError(f"generator parameters only apply to the synthetic corpus, got {sorted(synthetic_params)}")
        return _load_cifar(root_path, name)
    if name == "gtsrb":
        if root_path is None:
            raise ValueError("root_path is required for corpus 'gtsrb'")
        if synthetic_params:
            raise ValueError(f"generator parameters only apply to the synthetic corpus, got {sorted(synthetic_params)}")
        return _load_gtsrb(root_path)
    if name == "synthetic":
        return make_synthetic_corpus(**synthetic_params)
    raise ValueError(f"unknown corpus {name!r}, expected one of {CORPUS_NAMES}")


@dataclass
class DatasetSplit:
    """Member (D) / external (E) partition of one corpus."""

    corpus: str
    split_seed: int
    member_fraction: float
    members: list[str]
    externals: list[str]

    @property
    def split_id(self) -> str:
        digest = hashlib.sha256(self.to_json().encode()).hexdigest()
        return digest[:16]

    def member_set(self) -> frozenset:
        return frozenset(self.members)

    def membership_mask(self, sample_ids) -> np.ndarray:
        """Boolean member flag per id; every id must be covered by the split."""
        members = self.member_set()
        externals = frozenset(self.externals)
        mask = np.empty(len(sample_ids), dtype=bool)
        for i, sid in enumerate(sample_ids):
            sid = str(sid)
            if sid in members:
                mask[i] = True
            elif sid in externals:
                mask[i] = False
            else:
                raise KeyError(f"sample id {sid!r} is in neither side of the split")
        return mask

    def to_manifest(self) -> dict:
        return {
            "corpus": self.corpus,
            "seed": self.split_seed,
            "member_fraction": self.member_fraction,
            "members": list(self.members),
            "externals": list(self.externals),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_manifest(), sort_keys=True)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")

    @classmethod
    def from_manifest(cls, manifest: dict) -> "DatasetSplit":
        return cls(
            corpus=manifest["corpus"],
            split_seed=manifest["seed"],
            member_fraction=manifest["member_fraction"],
            members=list(manifest["members"]),
            externals=list(manifest["externals"]),
        )

    @classmethod
    def load(cls, path) -> "DatasetSplit":
        path = Path(path)
        if not path.exists():
            raise IngestionError(f"missing split manifest: {path}")
        return cls.from_manifest(json.loads(path.read_text()))

    def validate(self, corpus: Corpus) -> None:
        """Assert the split invariants against its corpus.

        Fraction tolerance is the contractual 0.005 except where integer
        granularity makes that unreachable; class balance to within one
        sample is asserted only when the corpus itself has balanced
        classes (a proportional split of imbalanced classes cannot give
        equal member counts and full coverage at once).
        """
        member_set, external_set = set(self.members), set(self.externals)
        if member_set & external_set:
            raise AssertionError("members and externals overlap")
        if member_set | external_set != set(str(s) for s in corpus.sample_ids):
            raise AssertionError("split does not cover the corpus exactly")
        total = len(corpus)
        achieved = len(self.members) / total
        tolerance = max(0.005, 0.5 / total + 1e-12)
        if abs(achieved - self.member_fraction) > tolerance:
            raise AssertionError(
                f"member fraction {achieved:.4f} deviates from {self.member_fraction} by more than {tolerance}"
            )
        class_sizes = np.bincount(corpus.labels, minlength=corpus.descriptor.num_classes)
        if class_sizes.max() - class_sizes.min() <= 1:
            member_idx = corpus.index_of(self.members)
            member_counts = np.bincount(
                corpus.labels[member_idx], minlength=corpus.descriptor.num_classes
            )
            if member_counts.max() - member_counts.min() > 1:
                raise AssertionError(
                    f"per-class member counts unbalanced: {member_counts.tolist()}"
                )


def _apportion_counts(class_sizes: np.ndarray, fraction: float, target_total: int,
                      min_count: np.ndarray, max_count: np.ndarray) -> np.ndarray:
    """Largest-remainder apportionment of target_total across classes."""
    raw = fraction * class_sizes
    counts = np.clip(np.floor(raw).astype(np.int64), min_count, max_count)
    remainder = target_total - int(counts.sum())
    if remainder != 0:
        # largest fractional part first, class index breaking ties
        order = sorted(range(class_sizes.size), key=lambda c: (-(raw[c] - np.floor(raw[c])), c))
        step = 1 if remainder > 0 else -1
        i = 0
        while remainder != 0:
            c = order[i % len(order)] if step > 0 else order[-1 - (i % len(order))]
            new = counts[c] + step
            if min_count[c] <= new <= max_count[c]:
                counts[c] = new
                remainder -= step
            i += 1
    return counts


def subsample_corpus(corpus: Corpus, size: int, seed: int) -> Corpus:
    """Deterministic class-stratified subset of a corpus.

    Keeps every class represented and class proportions intact, so a small
    slice of a large corpus behaves like the whole for desk-scale runs.
    """
    num_classes = corpus.descriptor.num_classes
    if not num_classes <= size <= len(corpus):
        raise ValueError(
            f"subset size must be in [{num_classes}, {len(corpus)}], got {size}"
        )
    class_sizes = np.bincount(corpus.labels, minlength=num_classes)
    if (class_sizes == 0).any():
        empty = np.nonzero(class_sizes == 0)[0].tolist()
        raise ValueError(f"corpus has no samples for classes {empty}")
    counts = _apportion_counts(
        class_sizes,
        size / len(corpus),
        size,
        np.ones(num_classes, dtype=np.int64),
        class_sizes,
    )
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(num_classes):
        positions = np.nonzero(corpus.labels == c)[0]
        keep.append(positions[rng.permutation(positions.size)][: counts[c]])
    keep = np.sort(np.concatenate(keep))
    descriptor = CorpusDescriptor(corpus.descriptor.name, num_classes, int(keep.size))
    return Corpus(descriptor, corpus._pixels[keep], corpus.labels[keep], corpus.sample_ids[keep])


def make_split(corpus: Corpus, member_fraction: float, seed: int) -> DatasetSplit:
    """Deterministic class-stratified member/external split.

    Per-class member counts come from largest-remainder apportionment of
    round(member_fraction * total), so balanced corpora get member counts
    within one sample of each other and imbalanced corpora stay
    proportional per class.
    """
    if not 0.0 < member_fraction < 1.0:
        raise ValueError(f"member_fraction must be in (0, 1), got {member_fraction}")

    labels = corpus.labels
    num_classes = corpus.descriptor.num_classes
    class_sizes = np.bincount(labels, minlength=num_classes)
    if (class_sizes == 0).any():
        empty = np.nonzero(class_sizes == 0)[0].tolist()
        raise ValueError(f"corpus has no samples for classes {empty}")

    target_total = int(round(member_fraction * len(corpus)))
    target_total = min(max(target_total, num_classes), len(corpus) - num_classes)
    # every class keeps at least one member and one external
    counts = _apportion_counts(
        class_sizes,
        member_fraction,
        target_total,
        np.ones(num_classes, dtype=np.int64),
        class_sizes - 1,
    )

    rng = np.random.default_rng(seed)
    members, externals = [], []
    for c in range(num_classes):
        positions = np.nonzero(labels == c)[0]
        shuffled = positions[rng.permutation(positions.size)]
        take = int(counts[c])
        members.extend(str(s) for s in corpus.sample_ids[shuffled[:take]])
        externals.extend(str(s) for s in corpus.sample_ids[shuffled[take:]])

    return DatasetSplit(
        corpus=corpus.descriptor.name,
        split_seed=seed,
        member_fraction=member_fraction,
        members=members,
        externals=externals,
    )
