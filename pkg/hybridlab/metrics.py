"""
Confusion-matrix accounting and the accuracy, sensitivity and specificity metrics.

The positive class is ALL (label 1). A metric whose denominator is zero is
undefined and reported as None (an empty CSV field), never as 0.
"""
import csv
import pathlib
from dataclasses import dataclass

import numpy as np
import pandas
from sklearn.metrics import confusion_matrix

from hybridlab.errors import DataError, StorageError

POSITIVE = 1
CSV_COLUMNS = ('epoch', 'split', 'loss', 'accuracy', 'sensitivity', 'specificity', 'n')


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def swapped(self) -> 'ConfusionMatrix':
        """The same counts read with the other class as positive."""
        return ConfusionMatrix(tp=self.tn, tn=self.tp, fp=self.fn, fn=self.fp)


def confusion(predicted, truth, positive: int = POSITIVE) -> ConfusionMatrix:
    """
    Tallies predictions against true labels.

    Args:
        predicted (sequence[int]): Predicted labels in {0, 1}.
        truth (sequence[int]): True labels in {0, 1}.
        positive (int): The positive class, ALL (1) by default.

    Returns:
        ConfusionMatrix: TP, TN, FP, FN counts.

    Raises:
        DataError: If the lengths differ, are zero, or a label is not 0 or 1.

    Example:
        confusion([1, 1, 0, 0], [1, 0, 0, 1]) gives TP=1, FP=1, TN=1, FN=1.
    """
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape or predicted.ndim != 1 or len(truth) == 0:
        raise DataError(f"Need equal, non-zero numbers of predictions and labels, got {predicted.shape} and {truth.shape}")
    if not (np.isin(predicted, (0, 1)).all() and np.isin(truth, (0, 1)).all()):
        raise DataError("Labels must be 0 or 1")
    # rows are true labels, columns predictions, negative class first
    tn, fp, fn, tp = confusion_matrix(truth, predicted, labels=[1 - positive, positive]).ravel()
    return ConfusionMatrix(tp=int(tp), tn=int(tn), fp=int(fp), fn=int(fn))


def _percentage(numerator: int, denominator: int):
    if denominator == 0:
        return None
    return round(100.0 * numerator / denominator, 2)


def accuracy(cm: ConfusionMatrix):
    return _percentage(cm.tp + cm.tn, cm.n)


def sensitivity(cm: ConfusionMatrix):
    return _percentage(cm.tp, cm.tp + cm.fn)


def specificity(cm: ConfusionMatrix):
    return _percentage(cm.tn, cm.tn + cm.fp)


@dataclass(frozen=True)
class MetricsReport:
    """
    Metrics of one evaluation.

    Attributes:
        accuracy (float | None): Percentage, 2 decimals.
        sensitivity (float | None): Percentage, 2 decimals.
        specificity (float | None): Percentage, 2 decimals.
        loss (float): Mean cross-entropy.
        n (int): Number of evaluated samples.
    """
    accuracy: float
    sensitivity: float
    specificity: float
    loss: float
    n: int

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, loss: float) -> 'MetricsReport':
        return cls(accuracy(cm), sensitivity(cm), specificity(cm), float(loss), cm.n)

    def row(self, epoch: int, split: str) -> list:
        """One CSV row: epoch, split, loss, accuracy, sensitivity, specificity, n."""
        def fmt(value):
            return '' if value is None else f"{value:.2f}"
        return [epoch, split, f"{self.loss:.6f}", fmt(self.accuracy), fmt(self.sensitivity), fmt(self.specificity), self.n]


class MetricsLog:
    """
    A metrics CSV file, one row per evaluation.

    Args:
        path (str | pathlib.Path): The CSV file.
        rows (list | None): Rows written right after the header.
        append (bool): Keep an existing file and add to it; the header is written only
            when the file is new.

    Raises:
        StorageError: If the file cannot be written.
    """

    def __init__(self, path, rows=None, append: bool = False):
        self.path = pathlib.Path(path)
        if append and self.path.is_file():
            return
        try:
            with open(self.path, 'w', newline='') as csv_file:
                writer = csv.writer(csv_file)
                writer.writerow(CSV_COLUMNS)
                writer.writerows(rows or [])
        except OSError as e:
            raise StorageError(f"Could not write metrics log '{self.path}': {e}")

    def write(self, row) -> None:
        try:
            with open(self.path, 'a', newline='') as csv_file:
                csv.writer(csv_file).writerow(row)
        except OSError as e:
            raise StorageError(f"Could not write metrics log '{self.path}': {e}")


def read_rows(path) -> list:
    """Reads the rows of a metrics log (without the header) as lists of strings."""
    try:
        with open(path, 'r', newline='') as csv_file:
            rows = list(csv.reader(csv_file))
    except OSError as e:
        raise StorageError(f"Could not read metrics log '{path}': {e}")
    return rows[1:]


def read_log(path) -> pandas.DataFrame:
    """
    Loads a metrics log as a DataFrame; undefined metrics become NaN.

    Example:
        read_log('runs/a/metrics.csv').query("split == 'val'")['accuracy'].max()
    """
    try:
        return pandas.read_csv(path, comment='#')
    except (OSError, pandas.errors.ParserError) as e:
        raise StorageError(f"Could not read metrics log '{path}': {e}")
