"""Which layer's activations should feed the membership test?

Every supported architecture publishes a catalog of tap points. For the
reference CNN, early conv layers are wide spatial maps that mostly encode
the input itself, while the late dense layer is a compact summary shaped
by training; audits read best from late layers. This demo prints the
catalog, extracts from several layers, and audits two of them.
"""

import numpy as np

from mintaudit import (
    AuditedModelSpec,
    build_model,
    extract_set,
    layer_catalog,
    make_split,
    make_synthetic_corpus,
    roc_auc,
    score,
    train,
    train_ensemble,
)


def main() -> None:
    print("== tap catalog for the reference CNN (10 classes) ==")
    for index, name, shape in layer_catalog("paper_cnn", 10):
        size = int(np.prod(shape))
        print(f"layer {index}: {name:<12} shape {str(tuple(shape)):<16} "
              f"-> vector length {size}")

    corpus = make_synthetic_corpus(
        3, 60, seed=7, class_contrast=0.05, structure_noise=0.35, pixel_noise=0.10
    )
    split = make_split(corpus, 0.5, seed=1)
    model = build_model(AuditedModelSpec("paper_cnn", 3), init_seed=0)
    checkpoint, _ = train(model, corpus, split, epochs=20, batch_size=16, train_seed=0)

    print("\n== auditing from the two dense taps ==")
    for layer_index in (7, 8):
        embeddings = extract_set(checkpoint, corpus, layer_index, split)
        ensemble, eval_sets = train_ensemble(embeddings, seed=0)
        values, membership = [], []
        for class_index in sorted(eval_sets):
            for item in score(ensemble, eval_sets[class_index]):
                values.append(item.score)
            membership.extend(eval_sets[class_index].membership.tolist())
        auc = roc_auc(values, membership).auc
        print(f"layer {layer_index} (length {embeddings.vector_len}): "
              f"pooled AUC {auc:.3f}")
    print("\nthe sweep runner automates this across any layer list:")
    print('  "sweep": {"axis": "layers", "values": [1, 2, 3, 4, 5, 6, 7, 8]}')


if __name__ == "__main__":
    main()
