"""Confusion-matrix metrics against a direct-formula oracle."""

import numpy as np
import pytest

from hsiformer import metrics
from hsiformer.errors import DataError


def oracle(confusion):
    """Independent direct-formula reimplementation."""
    confusion = np.asarray(confusion, dtype=float)
    total = confusion.sum()
    oa = confusion.trace() / total
    row = confusion.sum(axis=1)
    col = confusion.sum(axis=0)
    per = np.array([confusion[i, i] / row[i] if row[i] else np.nan for i in range(len(row))])
    aa = np.nanmean(per)
    pe = (row * col).sum() / total**2
    kappa = (oa - pe) / (1 - pe) if pe != 1 else (1.0 if oa == 1.0 else 0.0)
    return oa, aa, kappa, per


def test_perfect_agreement():
    oa, aa, kappa, _ = metrics.compute_metrics(np.array([[2, 0], [0, 2]]))
    assert (oa, aa, kappa) == (1.0, 1.0, 1.0)


def test_chance_agreement():
    oa, aa, kappa, _ = metrics.compute_metrics(np.array([[1, 1], [1, 1]]))
    assert oa == 0.5
    assert kappa == 0.0


def test_hand_worked_kappa():
    oa, aa, kappa, per = metrics.compute_metrics(np.array([[3, 1], [0, 4]]))
    assert oa == pytest.approx(0.875)
    assert aa == pytest.approx(0.875)
    assert kappa == pytest.approx(0.75)
    np.testing.assert_allclose(per, [0.75, 1.0])


def test_matches_oracle_on_random_matrices():
    rng = np.random.default_rng(0)
    for _ in range(200):
        c = int(rng.integers(2, 7))
        confusion = rng.integers(0, 30, size=(c, c))
        if confusion.sum() == 0:
            confusion[0, 0] = 1
        if (confusion.sum(axis=1) == 0).any():
            confusion += 1  # keep this batch free of empty rows
        oa, aa, kappa, per = metrics.compute_metrics(confusion)
        e_oa, e_aa, e_kappa, e_per = oracle(confusion)
        assert oa == e_oa
        assert aa == pytest.approx(e_aa, abs=1e-15)
        assert kappa == pytest.approx(e_kappa, abs=1e-15)
        np.testing.assert_allclose(per, e_per, atol=1e-15)


def test_kappa_bounded_by_oa_and_diagonal_iff_one():
    rng = np.random.default_rng(1)
    for _ in range(200):
        c = int(rng.integers(2, 6))
        confusion = rng.integers(0, 20, size=(c, c)) + np.eye(c, dtype=int)
        oa, _aa, kappa, _ = metrics.compute_metrics(confusion)
        assert kappa <= oa + 1e-12
        off_diagonal = confusion.sum() - np.trace(confusion)
        if kappa == 1.0:
            assert off_diagonal == 0
        if off_diagonal == 0:
            assert kappa == 1.0


def test_kappa_zero_for_independent_tables():
    # rank-one tables factor into marginals: agreement is pure chance
    rng = np.random.default_rng(2)
    for _ in range(200):
        c = int(rng.integers(2, 6))
        row = rng.integers(1, 12, size=c)
        col = rng.integers(1, 12, size=c)
        confusion = np.outer(row, col)
        _oa, _aa, kappa, _ = metrics.compute_metrics(confusion)
        assert kappa == pytest.approx(0.0, abs=1e-12)


def test_empty_row_excluded_from_aa_with_warning():
    confusion = np.array([[5, 0, 0], [1, 3, 0], [0, 0, 0]])
    with pytest.warns(UserWarning, match="no test samples"):
        oa, aa, kappa, per = metrics.compute_metrics(confusion)
    assert np.isnan(per[2])
    assert aa == pytest.approx((1.0 + 0.75) / 2)
    with pytest.warns(UserWarning):
        report = metrics.build_report(confusion)
    assert report.excluded_classes == [3]


def test_empty_confusion_rejected():
    with pytest.raises(DataError):
        metrics.compute_metrics(np.zeros((2, 2)))


def test_confusion_matrix_bookkeeping():
    truth = [1, 1, 2, 3, 2, 1]
    pred = [1, 2, 2, 3, 2, 1]
    confusion = metrics.confusion_matrix(truth, pred, 3)
    assert confusion.sum() == 6
    np.testing.assert_array_equal(confusion.sum(axis=1), [3, 2, 1])
    np.testing.assert_array_equal(confusion, [[2, 1, 0], [0, 2, 0], [0, 0, 1]])


def test_confusion_matrix_range_check():
    with pytest.raises(DataError):
        metrics.confusion_matrix([1, 4], [1, 1], 3)


def test_report_csv_roundtrip_is_deterministic(tmp_path):
    report = metrics.build_report(np.array([[3, 1], [0, 4]]), train_time_seconds=12.5)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    report.write_csv(a)
    report.write_csv(b)
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert "kappa" in text and "0.75" in text
    assert "12.5" not in text  # wall time never serialized
