import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from golden import CONFUSION
from helpers import mann_whitney, round2
from scalelab.errors import InvalidDataError, InvalidLabelError, ShapeError
from scalelab.metrics import (
    ConfusionMatrix,
    auc,
    class_scores,
    confusion,
    format_report,
    history_read,
    history_write,
    roc,
)
from scalelab.training import EpochRecord


def test_confusion_perfect():
    cm = confusion([0, 1, 0, 1], [0, 1, 0, 1])
    assert cm.counts == ((2, 0), (0, 2))


def test_confusion_constant_classifier():
    cm = confusion([1, 1, 1, 1, 1], [0, 0, 1, 0, 1])
    assert cm.counts == ((0, 3), (0, 2))


def test_confusion_reconstructs_published_counts():
    labels = [0] * 8000 + [1] * 8000
    preds = [0] * 7609 + [1] * 391 + [0] * 693 + [1] * 7307
    cm = confusion(preds, labels)
    assert cm.counts == ((7609, 391), (693, 7307))
    assert cm.total == 16000
    assert cm.accuracy == 14916 / 16000 == 0.93225


def test_confusion_errors():
    with pytest.raises(ShapeError):
        confusion([0, 1], [0])
    with pytest.raises(InvalidLabelError):
        confusion([0, 2], [0, 1])


@pytest.mark.parametrize(
    "name,want",
    [
        ("baseline", ((0.92, 0.95, 0.93), (0.95, 0.91, 0.93))),
        ("depth", ((0.94, 0.95, 0.94), (0.95, 0.94, 0.94))),
    ],
)
def test_class_scores_published_examples(name, want):
    got = class_scores(ConfusionMatrix.from_counts(CONFUSION[name]))
    for scores, expected in zip(got, want):
        assert (round2(scores.precision), round2(scores.recall), round2(scores.f1)) == expected
        assert not scores.degenerate


def test_class_scores_degenerate():
    benign, malignant = class_scores(ConfusionMatrix.from_counts([[5, 0], [3, 0]]))
    assert malignant.precision == 0 and malignant.degenerate
    assert malignant.recall == 0 and malignant.f1 == 0
    assert benign.precision == 5 / 8 and benign.recall == 1


@settings(max_examples=50)
@given(st.lists(st.integers(0, 500), min_size=4, max_size=4))
def test_class_scores_swap_symmetry(c):
    a, b, d, e = c
    s0, s1 = class_scores(ConfusionMatrix.from_counts([[a, b], [d, e]]))
    t0, t1 = class_scores(ConfusionMatrix.from_counts([[e, d], [b, a]]))
    assert (s0, s1) == (t1, t0)


@settings(max_examples=50)
@given(st.lists(st.integers(1, 500), min_size=4, max_size=4))
def test_f1_is_harmonic_mean(c):
    for s in class_scores(ConfusionMatrix.from_counts(np.reshape(c, (2, 2)))):
        assert s.f1 == pytest.approx(2 / (1 / s.precision + 1 / s.recall))


# --- ROC ---------------------------------------------------------------------

def test_roc_perfect_ranking():
    curve = roc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert (0.0, 1.0) in curve.points
    assert curve.auc == 1.0 == auc(curve)


def test_roc_identical_scores():
    curve = roc([0.4] * 6, [0, 1, 0, 1, 1, 0])
    assert curve.points == [(0.0, 0.0), (1.0, 1.0)]
    assert curve.auc == 0.5


def test_roc_reversed_ranking():
    assert roc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]).auc == 0.0


def test_auc_of_point_lists():
    assert auc([(0, 0), (0, 1), (1, 1)]) == 1.0
    assert auc([(0, 0), (1, 1)]) == 0.5


def test_roc_single_class_rejected():
    with pytest.raises(InvalidDataError):
        roc([0.1, 0.5], [1, 1])


def test_roc_matches_pair_counting(rng):
    for _ in range(50):
        n = int(rng.integers(2, 200))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        # coarse grid forces ties
        scores = np.round(rng.random(n), int(rng.integers(1, 3)))
        curve = roc(scores, labels)
        assert abs(curve.auc - mann_whitney(scores, labels)) <= 1e-12
        assert abs(auc(curve) - curve.auc) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=2, max_size=60))
def test_roc_curve_invariants(pairs):
    scores = [s for s, _ in pairs]
    labels = [y for _, y in pairs]
    if len(set(labels)) < 2:
        return
    curve = roc(scores, labels)
    assert curve.points[0] == (0.0, 0.0) and curve.points[-1] == (1.0, 1.0)
    assert all(np.diff(curve.fpr) >= 0) and all(np.diff(curve.tpr) >= 0)
    assert 0 <= curve.auc <= 1


# --- files -------------------------------------------------------------------

def test_history_files(tmp_path):
    path = tmp_path / "h.csv"
    history_write([], path)
    assert path.read_text() == "epoch,train_loss,train_acc,val_loss,val_acc\n"
    rec = EpochRecord(1, 0.69314718, 0.5, 0.7123456789, 0.4375)
    history_write([rec], path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[1] == "1,0.693147,0.5,0.712346,0.4375"
    (back,) = history_read(path)
    for a, b in zip(
        (back.train_loss, back.train_accuracy, back.val_loss, back.val_accuracy),
        (rec.train_loss, rec.train_accuracy, rec.val_loss, rec.val_accuracy),
    ):
        assert abs(a - b) <= 1e-5


def test_history_write_reports_path(tmp_path):
    with pytest.raises(OSError, match="nope"):
        history_write([], tmp_path / "nope" / "h.csv")


def test_report_contents():
    cm = ConfusionMatrix.from_counts(CONFUSION["baseline"])
    curve = roc([0.1, 0.7, 0.6, 0.9], [0, 0, 1, 1])
    text = format_report(cm, curve)
    assert "benign,7609,391" in text and "malignant,693,7307" in text
    assert f"auc: {curve.auc!r}" in text
    assert text.rstrip().endswith("1.0,1.0")
