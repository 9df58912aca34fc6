import itertools

import numpy as np
import pytest

from hybridlab.errors import DataError
from hybridlab.metrics import (
    CSV_COLUMNS, ConfusionMatrix, MetricsLog, MetricsReport, accuracy, confusion, read_log, read_rows,
    sensitivity, specificity,
)


class TestConfusion:

    def test_all_correct(self):
        cm = confusion([0, 1, 1, 0], [0, 1, 1, 0])
        assert (cm.fp, cm.fn) == (0, 0)
        assert (cm.tp, cm.tn) == (2, 2)

    def test_one_of_each(self):
        assert confusion([1, 1, 0, 0], [1, 0, 0, 1]) == ConfusionMatrix(tp=1, tn=1, fp=1, fn=1)

    def test_single_class_present(self):
        assert confusion([1] * 4, [1] * 4) == ConfusionMatrix(tp=4)
        assert confusion([1] * 4, [1] * 4, positive=0) == ConfusionMatrix(tn=4)

    def test_all_false_positives(self):
        assert confusion([1] * 5, [0] * 5) == ConfusionMatrix(fp=5)

    def test_matches_enumeration(self, rng):
        predicted = rng.integers(0, 2, 40)
        truth = rng.integers(0, 2, 40)
        cm = confusion(predicted, truth)
        pairs = list(zip(predicted.tolist(), truth.tolist()))
        assert cm.tp == pairs.count((1, 1))
        assert cm.tn == pairs.count((0, 0))
        assert cm.fp == pairs.count((1, 0))
        assert cm.fn == pairs.count((0, 1))
        assert cm.n == 40

    def test_swapping_the_positive_class(self, rng):
        predicted = rng.integers(0, 2, 30)
        truth = rng.integers(0, 2, 30)
        assert confusion(predicted, truth, positive=0) == confusion(predicted, truth).swapped()

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            confusion([0, 1], [0])

    def test_empty(self):
        with pytest.raises(DataError):
            confusion([], [])

    def test_label_outside_classes(self):
        with pytest.raises(DataError):
            confusion([0, 2], [0, 1])


class TestRates:

    def test_perfect(self):
        cm = confusion([0, 1, 1], [0, 1, 1])
        assert (accuracy(cm), sensitivity(cm), specificity(cm)) == (100.0, 100.0, 100.0)

    def test_hand_arithmetic(self):
        cm = ConfusionMatrix(tp=3, tn=4, fp=2, fn=1)
        assert accuracy(cm) == 70.0
        assert sensitivity(cm) == 75.0
        assert specificity(cm) == 66.67

    def test_zero_denominator_is_undefined(self):
        cm = confusion([0, 0], [0, 0])
        assert sensitivity(cm) is None
        assert specificity(cm) == 100.0

    def test_sensitivity_and_specificity_swap(self):
        for tp, tn, fp, fn in itertools.product(range(3), repeat=4):
            cm = ConfusionMatrix(tp, tn, fp, fn)
            assert sensitivity(cm.swapped()) == specificity(cm)
            assert specificity(cm.swapped()) == sensitivity(cm)
            if cm.n:
                assert accuracy(cm.swapped()) == accuracy(cm)

    def test_against_brute_force(self, rng):
        for _ in range(20):
            n = int(rng.integers(1, 30))
            predicted, truth = rng.integers(0, 2, n), rng.integers(0, 2, n)
            cm = confusion(predicted, truth)
            assert accuracy(cm) == round(100.0 * int(np.sum(predicted == truth)) / n, 2)
            positives = truth == 1
            if positives.any():
                assert sensitivity(cm) == round(100.0 * int(np.sum(predicted[positives] == 1)) / int(positives.sum()), 2)


class TestMetricsReport:

    def test_row_format(self):
        report = MetricsReport.from_confusion(ConfusionMatrix(tp=3, tn=4, fp=2, fn=1), 0.5)
        assert report.row(3, 'val') == [3, 'val', '0.500000', '70.00', '75.00', '66.67', 10]

    def test_undefined_metric_is_empty_field(self):
        report = MetricsReport.from_confusion(ConfusionMatrix(tn=2), 0.1)
        assert report.row(0, 'test')[4] == ''


class TestMetricsLog:

    def test_write_and_read(self, tmp_path):
        path = tmp_path / 'metrics.csv'
        log = MetricsLog(path)
        log.write([1, 'train', '0.693147', '50.00', '', '100.00', 4])
        assert path.read_text().splitlines()[0] == ','.join(CSV_COLUMNS)
        assert read_rows(path) == [['1', 'train', '0.693147', '50.00', '', '100.00', '4']]
        frame = read_log(path)
        assert list(frame.columns) == list(CSV_COLUMNS)
        assert np.isnan(frame.loc[0, 'sensitivity'])

    def test_append_keeps_existing_rows(self, tmp_path):
        path = tmp_path / 'eval.csv'
        MetricsLog(path).write([0, 'test', '0.1', '1.00', '1.00', '1.00', 1])
        MetricsLog(path, append=True).write([0, 'val', '0.2', '2.00', '2.00', '2.00', 2])
        assert [row[1] for row in read_rows(path)] == ['test', 'val']

    def test_initial_rows(self, tmp_path):
        path = tmp_path / 'metrics.csv'
        MetricsLog(path, rows=[[0, 'val', '0.1', '', '', '', 0]])
        assert len(read_rows(path)) == 1
