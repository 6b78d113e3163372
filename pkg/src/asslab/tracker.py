"""Streaming per-sample acquisition statistics.

Each unlabeled sample carries exponential moving averages and variances of
two quantities observed whenever it appears in a training mini-batch: the
distance of its weak-view prediction from certainty, and the divergence
between its weak-view and strong-view predictions. Upper confidence bounds
over both streams multiply into the final acquisition score, so scoring
needs no extra inference after training ends.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, TrackerError

# Floor applied inside logarithms so degenerate (imported) distributions
# with exact zeros cannot produce infinities.
EPS_PROB = 1e-12


def uncertainty(probs: np.ndarray) -> float:
    """L2 distance between a distribution and the one-hot of its argmax.

    Zero exactly when the prediction is one-hot, growing as confidence
    drops. Ties in the argmax resolve to the lowest index.
    """
    p = np.asarray(probs, dtype=np.float64)
    one_hot = np.zeros_like(p)
    one_hot[np.argmax(p)] = 1.0
    return float(np.linalg.norm(p - one_hot))


def uncertainty_batch(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    one_hot = np.zeros_like(p)
    one_hot[np.arange(p.shape[0]), np.argmax(p, axis=1)] = 1.0
    return np.linalg.norm(p - one_hot, axis=1)


def inconsistency(probs_w: np.ndarray, probs_s: np.ndarray) -> float:
    """Symmetrized KL divergence between weak-view and strong-view predictions.

    (KL(p_w||p_s) + KL(p_s||p_w)) / 2, natural log, probabilities floored
    at EPS_PROB inside the logs only.
    """
    return float(
        inconsistency_batch(
            np.asarray(probs_w, dtype=np.float64)[None, :],
            np.asarray(probs_s, dtype=np.float64)[None, :],
        )[0]
    )


def inconsistency_batch(probs_w: np.ndarray, probs_s: np.ndarray) -> np.ndarray:
    pw = np.asarray(probs_w, dtype=np.float64)
    ps = np.asarray(probs_s, dtype=np.float64)
    log_w = np.log(np.maximum(pw, EPS_PROB))
    log_s = np.log(np.maximum(ps, EPS_PROB))
    kl_ws = ((pw * (log_w - log_s)).sum(axis=1))
    kl_sw = ((ps * (log_s - log_w)).sum(axis=1))
    return 0.5 * (kl_ws + kl_sw)


@dataclass
class EmaState:
    """Exponential moving mean/variance, zero-initialized, no bias correction."""

    mean: float = 0.0
    var: float = 0.0
    count: int = 0


def ema_update(
    state: EmaState, value: float, alpha: float, variance_mean: str = "post"
) -> EmaState:
    """One step of the moving mean/variance recurrences.

    mean' = alpha*value + (1-alpha)*mean, then
    var'  = alpha*(value - mean')^2 + (1-alpha)*var.

    The variance centers on the updated mean ("post"); pass "pre" to center
    on the previous mean instead, kept for ablation.
    """
    if not 0.0 < alpha <= 1.0:
        raise InputError(f"alpha must be in (0, 1], got {alpha}")
    if variance_mean not in ("post", "pre"):
        raise InputError(f"variance_mean must be 'post' or 'pre', got {variance_mean!r}")
    if not np.isfinite(value):
        raise TrackerError(f"non-finite tracked value {value}")
    new_mean = alpha * value + (1.0 - alpha) * state.mean
    center = new_mean if variance_mean == "post" else state.mean
    new_var = alpha * (value - center) ** 2 + (1.0 - alpha) * state.var
    return EmaState(mean=new_mean, var=new_var, count=state.count + 1)


def ucb(state: EmaState, c: float) -> float:
    """mean + c * sqrt(var), with the variance clamped at zero."""
    if c < 0:
        raise InputError(f"confidence multiplier must be nonnegative, got {c}")
    return state.mean + c * np.sqrt(max(state.var, 0.0))


def final_score(u_ucb: float, i_ucb: float) -> float:
    """Acquisition score: product of the two upper confidence bounds."""
    if not (np.isfinite(u_ucb) and np.isfinite(i_ucb)):
        raise InputError("scores must be finite")
    return float(u_ucb * i_ucb)


@dataclass
class PredictionEvent:
    """Weak/strong prediction pair for one appearance of one sample.

    step is the sample's own appearance index, which strictly increases
    per sample even when an epoch boundary puts the same sample into one
    training step twice.
    """

    sample_id: int
    step: int
    probs_weak: np.ndarray
    probs_strong: np.ndarray


@dataclass
class TrackerSnapshot:
    """Frozen copy of tracker statistics with UCBs and scores precomputed.

    counts carries each sample's appearance count when the snapshot comes
    straight from a TrackerStore; it is not part of the CSV format, so
    snapshots loaded from disk leave it None.
    """

    ids: np.ndarray
    u_mean: np.ndarray
    u_var: np.ndarray
    u_ucb: np.ndarray
    i_mean: np.ndarray
    i_var: np.ndarray
    i_ucb: np.ndarray
    score: np.ndarray
    counts: np.ndarray | None = None

    def export_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(SNAPSHOT_COLUMNS)
            for i in range(len(self.ids)):
                writer.writerow(
                    [int(self.ids[i])]
                    + [
                        repr(float(col[i]))
                        for col in (
                            self.u_mean, self.u_var, self.u_ucb,
                            self.i_mean, self.i_var, self.i_ucb, self.score,
                        )
                    ]
                )


SNAPSHOT_COLUMNS = [
    "sample_id", "u_mean", "u_var", "u_ucb", "i_mean", "i_var", "i_ucb", "score",
]


def load_snapshot_csv(path) -> TrackerSnapshot:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != SNAPSHOT_COLUMNS:
            raise InputError(f"unexpected snapshot header {header!r}")
        rows = [row for row in reader]
    cols = list(zip(*rows)) if rows else [[] for _ in SNAPSHOT_COLUMNS]
    return TrackerSnapshot(
        ids=np.asarray([int(v) for v in cols[0]], dtype=np.int64),
        **{
            name: np.asarray([float(v) for v in cols[j]], dtype=np.float64)
            for j, name in enumerate(SNAPSHOT_COLUMNS[1:], start=1)
        },
    )


class TrackerStore:
    """Vectorized id -> (uncertainty EMA, inconsistency EMA) map.

    Holds exactly the current unlabeled pool; acquired ids are removed by
    the caller between rounds. Single training loop ownership, no locking.
    """

    def __init__(
        self,
        ids,
        alpha: float = 0.8,
        c_u: float = 0.5,
        c_i: float = 2.0,
        variance_mean: str = "post",
    ):
        if not 0.0 < alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0, 1], got {alpha}")
        if c_u < 0 or c_i < 0:
            raise ConfigError("confidence multipliers must be nonnegative")
        if variance_mean not in ("post", "pre"):
            raise ConfigError(f"variance_mean must be 'post' or 'pre', got {variance_mean!r}")
        ids = np.asarray(sorted(int(i) for i in ids), dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise ConfigError("tracker ids must be unique")
        self.alpha = alpha
        self.c_u = c_u
        self.c_i = c_i
        self.variance_mean = variance_mean
        self.ids = ids
        n = len(ids)
        self._u_mean = np.zeros(n)
        self._u_var = np.zeros(n)
        self._i_mean = np.zeros(n)
        self._i_var = np.zeros(n)
        self._count = np.zeros(n, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.ids)

    def _locate(self, ids: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.ids, ids)
        bad = (pos >= len(self.ids)) | (self.ids[np.minimum(pos, len(self.ids) - 1)] != ids)
        if np.any(bad):
            raise TrackerError(f"unknown sample id {int(np.asarray(ids)[bad][0])}")
        return pos

    def ingest(self, event: PredictionEvent) -> None:
        """Fold one weak/strong prediction pair into the sample's streams."""
        self.ingest_batch(
            np.asarray([event.sample_id], dtype=np.int64),
            np.asarray(event.probs_weak, dtype=np.float64)[None, :],
            np.asarray(event.probs_strong, dtype=np.float64)[None, :],
        )

    def ingest_batch(
        self, ids: np.ndarray, probs_weak: np.ndarray, probs_strong: np.ndarray
    ) -> None:
        """Vectorized ingest of one mini-batch of prediction pairs.

        ids must be unique within the call: the EMA recurrence is
        sequential per sample, and a fancy-indexed update would silently
        keep only the last duplicate.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise TrackerError("duplicate sample ids within one ingest batch")
        pos = self._locate(ids)
        u_vals = uncertainty_batch(probs_weak)
        i_vals = inconsistency_batch(probs_weak, probs_strong)
        finite = np.isfinite(u_vals) & np.isfinite(i_vals)
        if not np.all(finite):
            raise TrackerError(
                f"non-finite statistics for sample id {int(ids[~finite][0])}"
            )
        a = self.alpha
        for vals, means, variances in (
            (u_vals, self._u_mean, self._u_var),
            (i_vals, self._i_mean, self._i_var),
        ):
            old_mean = means[pos]
            new_mean = a * vals + (1.0 - a) * old_mean
            center = new_mean if self.variance_mean == "post" else old_mean
            variances[pos] = a * (vals - center) ** 2 + (1.0 - a) * variances[pos]
            means[pos] = new_mean
        self._count[pos] += 1

    def state_of(self, sample_id: int) -> tuple[EmaState, EmaState]:
        pos = int(self._locate(np.asarray([sample_id], dtype=np.int64))[0])
        c = int(self._count[pos])
        return (
            EmaState(mean=float(self._u_mean[pos]), var=float(self._u_var[pos]), count=c),
            EmaState(mean=float(self._i_mean[pos]), var=float(self._i_var[pos]), count=c),
        )

    def remove(self, ids) -> None:
        """Drop acquired ids; the store then matches the shrunken pool."""
        drop = self._locate(np.asarray(sorted(int(i) for i in ids), dtype=np.int64))
        keep = np.ones(len(self.ids), dtype=bool)
        keep[drop] = False
        self.ids = self.ids[keep]
        self._u_mean = self._u_mean[keep]
        self._u_var = self._u_var[keep]
        self._i_mean = self._i_mean[keep]
        self._i_var = self._i_var[keep]
        self._count = self._count[keep]

    def reset(self) -> None:
        """Zero every stream, keeping the id set and hyperparameters."""
        for arr in (self._u_mean, self._u_var, self._i_mean, self._i_var):
            arr.fill(0.0)
        self._count.fill(0)

    def snapshot(self) -> TrackerSnapshot:
        u_ucb = self._u_mean + self.c_u * np.sqrt(np.maximum(self._u_var, 0.0))
        i_ucb = self._i_mean + self.c_i * np.sqrt(np.maximum(self._i_var, 0.0))
        return TrackerSnapshot(
            ids=self.ids.copy(),
            u_mean=self._u_mean.copy(),
            u_var=self._u_var.copy(),
            u_ucb=u_ucb,
            i_mean=self._i_mean.copy(),
            i_var=self._i_var.copy(),
            i_ucb=i_ucb,
            score=u_ucb * i_ucb,
            counts=self._count.copy(),
        )
