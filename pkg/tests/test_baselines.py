"""Output-only membership attacks: statistic values, orientation, separation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mintaudit.baselines import (
    BASELINE_METHODS,
    BaselineScore,
    baseline_score_rows,
    salem_from_probs,
    salem_score,
    song_from_probs,
    song_score,
    yeom_from_probs,
    yeom_score,
)
from mintaudit.classifier import AuditedModelSpec, build_model, predict, train
from mintaudit.corpus import make_split, make_synthetic_corpus
from mintaudit.metrics import SCORE_CSV_FIELDS, roc_auc


@pytest.fixture(scope="module")
def memorizing_run():
    """A classifier trained into heavy memorization, plus everything needed
    to score the whole corpus: (checkpoint, probs, labels, membership)."""
    corpus = make_synthetic_corpus(
        4, 100, seed=7, class_contrast=0.05, structure_noise=0.35, pixel_noise=0.10
    )
    split = make_split(corpus, 0.5, seed=1)
    model = build_model(AuditedModelSpec("paper_cnn", 4), init_seed=0)
    checkpoint, _ = train(model, corpus, split, epochs=30, batch_size=16, train_seed=0)
    probs = predict(checkpoint, corpus.pixel_batch(np.arange(corpus.labels.size)))
    membership = split.membership_mask(corpus.sample_ids)
    return checkpoint, corpus, probs, membership


def softmax_rows(rng, n, k):
    logits = rng.normal(scale=3.0, size=(n, k))
    exp = np.exp(logits - logits.max(axis=1, keepdims=True))
    return exp / exp.sum(axis=1, keepdims=True)


# --- statistic values on known inputs ---


def test_loss_statistic_on_certain_and_even_predictions() -> None:
    probs = np.array([[1.0, 0.0, 0.0], [0.5, 0.25, 0.25]])
    raw, oriented = yeom_from_probs(probs, [0, 0])
    assert raw[0] == pytest.approx(0.0, abs=1e-9)
    assert raw[1] == pytest.approx(math.log(2), abs=1e-12)
    np.testing.assert_array_equal(oriented, -raw)


def test_confidence_statistic_on_uniform_and_peaked_predictions() -> None:
    uniform = np.full((1, 10), 0.1)
    peaked = np.eye(10)[[3]]
    assert salem_from_probs(uniform)[0][0] == pytest.approx(0.1, abs=1e-12)
    assert salem_from_probs(peaked)[0][0] == pytest.approx(1.0, abs=1e-9)
    raw, oriented = salem_from_probs(uniform)
    np.testing.assert_array_equal(oriented, raw)


def test_mentropy_is_zero_for_confident_correct_predictions() -> None:
    probs = np.eye(4)[[2]]
    raw, oriented = song_from_probs(probs, [2])
    assert raw[0] == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_array_equal(oriented, -raw)


def test_mentropy_explodes_for_confident_wrong_predictions() -> None:
    probs = np.array([[1.0, 0.0]])
    raw, _ = song_from_probs(probs, [1])  # true class got zero mass
    assert raw[0] > 20.0


def test_mentropy_sees_spread_that_plain_loss_cannot() -> None:
    flat = np.array([[0.5, 0.5, 0.0, 0.0]])
    spread = np.array([[0.5, 0.25, 0.25, 0.0]])
    labels = [0]
    assert yeom_from_probs(flat, labels)[0][0] == pytest.approx(
        yeom_from_probs(spread, labels)[0][0], abs=1e-12
    )
    assert song_from_probs(flat, labels)[0][0] == pytest.approx(0.6931471805599453, abs=1e-9)
    assert song_from_probs(spread, labels)[0][0] == pytest.approx(0.4904146265058631, abs=1e-9)


def test_saturated_probabilities_stay_finite() -> None:
    probs = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    labels = [2, 1, 0]
    for raw, oriented in (
        yeom_from_probs(probs, labels),
        salem_from_probs(probs),
        song_from_probs(probs, labels),
    ):
        assert np.isfinite(raw).all() and np.isfinite(oriented).all()


def test_input_validation() -> None:
    with pytest.raises(ValueError, match="matrix"):
        yeom_from_probs(np.array([0.5, 0.5]), [0])
    with pytest.raises(ValueError, match="labels"):
        yeom_from_probs(np.full((3, 2), 0.5), [0, 1])
    with pytest.raises(ValueError, match="class range"):
        song_from_probs(np.full((2, 2), 0.5), [0, 2])


@settings(deadline=None, max_examples=60)
@given(seed=st.integers(0, 10_000))
def test_statistic_ranges_and_orientation(seed: int) -> None:
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 12))
    probs = softmax_rows(rng, 25, k)
    labels = rng.integers(0, k, size=25)

    loss, loss_score = yeom_from_probs(probs, labels)
    top, top_score = salem_from_probs(probs)
    ment, ment_score = song_from_probs(probs, labels)

    assert (loss > 0).all()
    assert ((top > 0) & (top <= 1)).all()
    assert (ment >= 0).all()
    np.testing.assert_array_equal(loss_score, -loss)
    np.testing.assert_array_equal(top_score, top)
    np.testing.assert_array_equal(ment_score, -ment)


@settings(deadline=None, max_examples=60)
@given(seed=st.integers(0, 10_000))
def test_more_true_class_mass_means_lower_loss(seed: int) -> None:
    rng = np.random.default_rng(seed)
    row = softmax_rows(rng, 1, 6)[0]
    label = int(np.argmax(row))
    boosted = row.copy()
    boosted[label] = min(1.0, row[label] + 0.1)
    low = yeom_from_probs(boosted[None, :], [label])[0][0]
    high = yeom_from_probs(row[None, :], [label])[0][0]
    assert low < high


# --- checkpoint-facing wrappers ---


def test_wrappers_match_direct_statistics(memorizing_run) -> None:
    checkpoint, corpus, _, _ = memorizing_run
    images = corpus.pixel_batch(np.arange(20))
    labels = corpus.labels[:20]
    probs = predict(checkpoint, images)

    by_method = {
        "yeom_loss": yeom_score(checkpoint, images, labels),
        "salem_confidence": salem_score(checkpoint, images),
        "song_mentropy": song_score(checkpoint, images, labels),
    }
    assert set(by_method) == set(BASELINE_METHODS)
    expected = {
        "yeom_loss": yeom_from_probs(probs, labels),
        "salem_confidence": salem_from_probs(probs),
        "song_mentropy": song_from_probs(probs, labels),
    }
    for method, scores in by_method.items():
        raw, oriented = expected[method]
        assert [s.method for s in scores] == [method] * 20
        assert scores[0].sample_id == "sample-000000"  # default ids
        np.testing.assert_allclose([s.raw_statistic for s in scores], raw, atol=1e-9)
        np.testing.assert_allclose([s.membership_score for s in scores], oriented, atol=1e-9)


def test_wrappers_accept_explicit_sample_ids(memorizing_run) -> None:
    checkpoint, corpus, _, _ = memorizing_run
    images = corpus.pixel_batch([0, 1])
    scores = salem_score(checkpoint, images, sample_ids=["a", "b"])
    assert [s.sample_id for s in scores] == ["a", "b"]
    with pytest.raises(ValueError, match="sample ids"):
        salem_score(checkpoint, images, sample_ids=["only-one"])


def test_score_rows_fit_the_shared_csv_layout() -> None:
    scores = [
        BaselineScore("s-0", "yeom_loss", 0.25, -0.25),
        BaselineScore("s-1", "yeom_loss", 1.5, -1.5),
    ]
    rows = baseline_score_rows(scores, class_by_id={"s-0": 3})
    assert list(rows[0]) == SCORE_CSV_FIELDS
    assert rows[0]["class_index"] == 3
    assert rows[1]["class_index"] == ""  # unknown id stays blank
    assert rows[0]["predicted_member"] == ""  # baselines draw no threshold
    assert float(rows[0]["score"]) == -0.25
    assert float(rows[0]["raw_statistic"]) == 0.25


# --- separation on a memorizing classifier ---


def test_members_have_lower_loss_than_externals(memorizing_run) -> None:
    _, corpus, probs, membership = memorizing_run
    loss, _ = yeom_from_probs(probs, corpus.labels)
    assert loss[membership].mean() < loss[~membership].mean()


def test_loss_attack_separates_membership(memorizing_run) -> None:
    _, corpus, probs, membership = memorizing_run
    _, oriented = yeom_from_probs(probs, corpus.labels)
    assert roc_auc(oriented, membership).auc > 0.80


def test_confidence_attack_separates_membership(memorizing_run) -> None:
    _, _, probs, membership = memorizing_run
    _, oriented = salem_from_probs(probs)
    assert roc_auc(oriented, membership).auc > 0.75


def test_mentropy_attack_keeps_pace_with_loss_attack(memorizing_run) -> None:
    _, corpus, probs, membership = memorizing_run
    yeom_auc = roc_auc(yeom_from_probs(probs, corpus.labels)[1], membership).auc
    song_auc = roc_auc(song_from_probs(probs, corpus.labels)[1], membership).auc
    assert song_auc > 0.80
    assert song_auc >= yeom_auc - 0.02
