"""Smoothed Markov transition tracking over event state labels.

Transition rows are formed with additive (Laplace) smoothing so that
row-wise divergences stay defined even for states never visited; the
default pseudocount of 1 matches what the KL variant needs for absolute
continuity. Transitional surprise accumulates, event by event, the
divergence between each transition row before and after the event's
(from, to) pair is counted.
"""

from dataclasses import dataclass, replace

import numpy as np

from .surprise import mass_divergence
from .validation import check_positive, check_positive_int


@dataclass(frozen=True)
class TransitionModel:
    """Raw K x K transition counts plus the smoothing pseudocount."""

    counts: np.ndarray
    smoothing: float = 1.0
    n_states: int = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.float64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"counts must be square, got shape {counts.shape}")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise ValueError("counts must be finite and nonnegative")
        check_positive(self.smoothing, "smoothing")
        counts = counts.copy()
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "smoothing", float(self.smoothing))
        object.__setattr__(self, "n_states", counts.shape[0])

    @staticmethod
    def empty(n_states, smoothing=1.0):
        n = check_positive_int(n_states, "n_states")
        return TransitionModel(np.zeros((n, n)), smoothing)

    @property
    def total(self):
        return float(self.counts.sum())


def _check_state(tm, idx, name):
    idx = int(idx)
    if not 0 <= idx < tm.n_states:
        raise IndexError(f"{name}={idx} outside [0, {tm.n_states})")
    return idx


def record_transition(tm, z_prev, z_next):
    """Count one (z_prev -> z_next) transition; returns a new model."""
    i = _check_state(tm, z_prev, "z_prev")
    j = _check_state(tm, z_next, "z_next")
    counts = tm.counts.copy()
    counts[i, j] += 1.0
    return replace(tm, counts=counts)


def record_sequence(tm, labels):
    """Count every consecutive pair of a label sequence."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= tm.n_states):
        raise IndexError(
            f"labels outside [0, {tm.n_states}): "
            f"[{labels.min()}, {labels.max()}]")
    counts = tm.counts.copy()
    np.add.at(counts, (labels[:-1], labels[1:]), 1.0)
    return replace(tm, counts=counts)


def transition_row(tm, j):
    """Smoothed conditional distribution of the next state given state j."""
    j = _check_state(tm, j, "j")
    row = tm.counts[j] + tm.smoothing
    return row / row.sum()


def smoothed_matrix(tm):
    m = tm.counts + tm.smoothing
    return m / m.sum(axis=1, keepdims=True)


def transitional_surprise_window(z, n_prior, window, n_states, smoothing=1.0,
                                 kind="js"):
    """Accumulated row divergences as window events join the counts.

    For i = 0..window, the counts built from the first ``n_prior + i``
    labels gain the transition introduced by label ``n_prior + i + 1``,
    and the divergence between each state's smoothed row before and
    after is summed. Steps that add no transition (prefix shorter than
    two labels) contribute zero.

    Parameters
    ----------
    z : int sequence
        Cumulative state labels.
    n_prior : int
        Labels observed before the window.
    window : int
        Number of additional steps beyond the first; ``window + 1``
        events are consumed in total.
    n_states : int
        Row length K; must exceed every label.
    smoothing : float
        Laplace pseudocount added per cell.
    kind : {"js", "kl"}
    """
    z = np.asarray(z, dtype=np.int64)
    if window < 0 or n_prior < 0:
        raise ValueError("window and n_prior must be nonnegative")
    if n_prior + window + 1 > z.size:
        raise ValueError(
            f"window needs {n_prior + window + 1} labels, got {z.size}")
    if z.size and (z.min() < 0 or z.max() >= n_states):
        raise IndexError(
            f"labels outside [0, {n_states}): [{z.min()}, {z.max()}]")
    check_positive(smoothing, "smoothing")

    tm = record_sequence(TransitionModel.empty(n_states, smoothing),
                         z[:n_prior])
    total = 0.0
    for i in range(window + 1):
        new_index = n_prior + i  # 0-based index of the label being added
        if new_index == 0:
            continue  # first label creates no transition
        frm = int(z[new_index - 1])
        row_before = transition_row(tm, frm)
        tm = record_transition(tm, frm, int(z[new_index]))
        row_after = transition_row(tm, frm)
        # only the updated row moves, so the sum over rows has one term
        total += mass_divergence(kind, row_before, row_after)
    return total
