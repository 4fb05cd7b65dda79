"""Prediction-error statistics: percentile tables and sequence averages."""

from __future__ import annotations

import numpy as np

from .errors import DivisionByZeroLabel, EmptyInput, WindowTooLong


def _pairs(labels, preds):
    labels = np.asarray(labels, dtype=float).ravel()
    preds = np.asarray(preds, dtype=float).ravel()
    if labels.shape != preds.shape:
        raise ValueError("labels and predictions differ in length")
    if labels.size == 0:
        raise EmptyInput("no (label, prediction) pairs")
    return labels, preds


def normalized_errors(labels, preds, mode="normalized"):
    """``|label - pred| / label`` (or the absolute error)."""
    labels, preds = _pairs(labels, preds)
    err = np.abs(labels - preds)
    if mode == "absolute":
        return err
    if np.any(labels <= 0):
        raise DivisionByZeroLabel("normalized errors need positive labels")
    return err / labels


def percentile_table(errors):
    """Empirical CDF: sorted errors against percentile rank ``100 (i + 1) / n``."""
    errors = np.sort(np.asarray(errors, dtype=float).ravel())
    if errors.size == 0:
        raise EmptyInput("no errors to rank")
    ranks = 100.0 * np.arange(1, errors.size + 1) / errors.size
    return errors, ranks


def percentile_at(errors, q):
    """Smallest error whose empirical CDF reaches ``q`` percent."""
    errors = np.asarray(errors, dtype=float).ravel()
    if errors.size == 0:
        raise EmptyInput("no errors to rank")
    return np.percentile(errors, q, method="inverted_cdf")


def sequence_errors(labels, preds, n_seq, n_draws, rng):
    """``|sum(pred - label)| / sum(label)`` over random contiguous windows.

    Windows of length ``n_seq`` start uniformly at random among all valid
    positions of the record order. Windows whose labels sum to zero have no
    normalized error and are dropped, matching the single-record tables.
    """
    labels, preds = _pairs(labels, preds)
    if n_seq < 1:
        raise ValueError("n_seq must be >= 1")
    if n_seq > labels.size:
        raise WindowTooLong(f"window {n_seq} longer than the {labels.size} records")
    cl = np.concatenate([[0.0], np.cumsum(labels)])
    ce = np.concatenate([[0.0], np.cumsum(preds - labels)])
    starts = rng.integers(0, labels.size - n_seq + 1, size=n_draws)
    den = cl[starts + n_seq] - cl[starts]
    num = np.abs(ce[starts + n_seq] - ce[starts])
    keep = den > 0
    if not keep.any():
        raise DivisionByZeroLabel("every window has zero total label")
    return num[keep] / den[keep]
