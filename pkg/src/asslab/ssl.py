"""Consistency-based semi-supervised training for one acquisition round.

Each step draws a labeled batch and an epoch-shuffled unlabeled batch,
weakly augments both, pseudo-labels confident weak-view predictions, and
penalizes strong-view disagreement with those pseudo-labels. Every
unlabeled appearance feeds one weak/strong prediction pair to the tracker
before the parameter update, and periodic snapshots of the whole unlabeled
pool are collected for post-hoc analysis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .analysis import SnapshotSeries
from .data import Augmenter, Dataset, SamplePools
from .errors import ConfigError, TrainingError
from .tracker import PredictionEvent, TrackerStore, uncertainty_batch

INIT_MODES = ("rand_init", "con_init")


@dataclass
class SslConfig:
    steps_per_round: int = 2000
    batch_size: int = 16  # labeled examples per step
    mu: int = 4  # unlabeled batch = mu * batch_size
    tau: float = 0.95  # pseudo-label confidence threshold, strict
    lambda_u: float = 1.0  # unsupervised loss weight
    lr: float = 0.03
    momentum: float = 0.0
    init_mode: str = "rand_init"  # fresh fixed weights vs carry per round
    snapshot_interval: int = 200
    hidden_dims: list[int] = field(default_factory=lambda: [64, 64])
    weak_augment_labeled: bool = True
    carry_tracker: bool = False  # keep tracker streams across rounds

    def validate(self):
        if self.steps_per_round < 1:
            raise ConfigError("steps_per_round must be at least 1")
        if self.batch_size < 1 or self.mu < 1:
            raise ConfigError("batch_size and mu must be at least 1")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if self.lambda_u < 0:
            raise ConfigError("lambda_u must be nonnegative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if self.snapshot_interval < 1:
            raise ConfigError("snapshot_interval must be at least 1")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims must be positive")

    def to_dict(self) -> dict:
        return {
            "steps_per_round": self.steps_per_round,
            "batch_size": self.batch_size,
            "mu": self.mu,
            "tau": self.tau,
            "lambda_u": self.lambda_u,
            "lr": self.lr,
            "momentum": self.momentum,
            "init_mode": self.init_mode,
            "snapshot_interval": self.snapshot_interval,
            "hidden_dims": list(self.hidden_dims),
            "weak_augment_labeled": self.weak_augment_labeled,
            "carry_tracker": self.carry_tracker,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SslConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown ssl config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


@dataclass
class RoundMetrics:
    test_accuracy: float
    supervised_loss: float  # mean over steps
    unsupervised_loss: float  # mean over steps, before lambda_u weighting
    mask_rate: float  # fraction of unlabeled appearances that were pseudo-labeled
    series: SnapshotSeries | None
    n_events: int


def pseudo_label(probs_weak: np.ndarray, tau: float) -> tuple[int, int]:
    """(argmax class, mask): mask is 1 only when max prob strictly exceeds tau."""
    p = np.asarray(probs_weak, dtype=np.float64)
    label = int(np.argmax(p))
    return label, int(p[label] > tau)


def pseudo_label_batch(probs_weak: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(probs_weak, dtype=np.float64)
    labels = np.argmax(p, axis=1)
    mask = (p[np.arange(len(p)), labels] > tau).astype(np.float64)
    return labels, mask


class _UnlabeledIterator:
    """Epoch-shuffled stream over the unlabeled pool.

    Yields each step's ids as one or two chunks: a step that crosses an
    epoch boundary finishes the old permutation first, then continues in a
    fresh one. Each chunk lies within a single permutation and is
    therefore free of duplicate ids.
    """

    def __init__(self, ids: np.ndarray, rng: np.random.Generator):
        self.ids = ids
        self.rng = rng
        self._perm = rng.permutation(ids)
        self._cursor = 0

    def next_chunks(self, m: int) -> list[np.ndarray]:
        chunks = []
        while m > 0:
            remaining = len(self._perm) - self._cursor
            if remaining == 0:
                self._perm = self.rng.permutation(self.ids)
                self._cursor = 0
                remaining = len(self._perm)
            take = min(m, remaining)
            chunks.append(self._perm[self._cursor : self._cursor + take])
            self._cursor += take
            m -= take
        return chunks


def one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    t = np.zeros((len(labels), k))
    t[np.arange(len(labels)), labels] = 1.0
    return t


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def evaluate_accuracy(params: nn.ModelParams, dataset: Dataset, ids: np.ndarray) -> float:
    if len(ids) == 0:
        return float("nan")
    pred = nn.predict_batch(params, dataset.x[ids])
    return float(np.mean(pred == dataset.y[ids]))


def _pool_snapshot(params, x_pool):
    probs = nn.forward_batch(params, x_pool).probs
    return (
        np.argmax(probs, axis=1),
        uncertainty_batch(probs),
        probs.max(axis=1),
    )


def train_round(
    params: nn.ModelParams,
    pools: SamplePools,
    dataset: Dataset,
    cfg: SslConfig,
    tracker: TrackerStore,
    rng: np.random.Generator,
    augmenter: Augmenter | None = None,
    event_sink=None,
) -> tuple[nn.ModelParams, RoundMetrics]:
    """Run one round of semi-supervised training.

    The first draw on rng seeds a separate generator for snapshot views,
    so the training stream's consumption is independent of the snapshot
    cadence. Per step, in fixed rng order: labeled ids, unlabeled id
    chunks, weak augmentation of the labeled batch, weak then strong
    augmentation of the unlabeled batch. The supervised and unsupervised
    gradients come from separate backward passes so that lambda_u = 0
    reproduces a purely supervised run bit for bit on the same rng stream.

    Pool snapshots record predictions on a fresh weak view, the same kind
    of view pseudo-labels are read from.

    event_sink, when given, receives (step, ids, probs_weak, probs_strong)
    for every ingested chunk.
    """
    cfg.validate()
    if not pools.labeled or not pools.unlabeled:
        raise ConfigError("labeled and unlabeled pools must both be nonempty")
    labeled_ids = pools.sorted_labeled()
    unlabeled_ids = pools.sorted_unlabeled()
    mu_b = cfg.mu * cfg.batch_size
    if len(unlabeled_ids) < mu_b:
        raise ConfigError(
            f"unlabeled pool size {len(unlabeled_ids)} below unlabeled batch {mu_b}"
        )
    if not np.array_equal(tracker.ids, unlabeled_ids):
        raise ConfigError("tracker ids must match the unlabeled pool")
    if augmenter is None:
        augmenter = Augmenter.for_data(dataset.x)
    k = dataset.n_classes
    x_unlabeled_pool = dataset.x[unlabeled_ids]
    snap_rng = np.random.default_rng(int(rng.integers(2**63)))
    iterator = _UnlabeledIterator(unlabeled_ids, rng)

    sup_losses = np.empty(cfg.steps_per_round)
    unsup_losses = np.empty(cfg.steps_per_round)
    masked_count = 0
    n_events = 0
    snap_steps, snap_labels, snap_u, snap_mp = [], [], [], []
    use_momentum = cfg.momentum > 0.0
    optimizer = nn.SgdOptimizer(cfg.lr, cfg.momentum) if use_momentum else None

    for step in range(1, cfg.steps_per_round + 1):
        batch_lab = rng.choice(labeled_ids, size=cfg.batch_size, replace=True)
        chunks = iterator.next_chunks(mu_b)
        batch_unl = np.concatenate(chunks)

        x_lab = dataset.x[batch_lab]
        if cfg.weak_augment_labeled:
            x_lab = augmenter.weak_batch(x_lab, rng)
        x_unl_weak = augmenter.weak_batch(dataset.x[batch_unl], rng)
        x_unl_strong = augmenter.strong_batch(dataset.x[batch_unl], rng)

        sup_loss, sup_grads, _ = nn.loss_and_grads(
            params, x_lab, one_hot(dataset.y[batch_lab], k)
        )
        probs_weak = nn.forward_batch(params, x_unl_weak).probs
        pl, mask = pseudo_label_batch(probs_weak, cfg.tau)
        targets = one_hot(pl, k)
        if cfg.lambda_u > 0.0:
            unsup_loss, unsup_grads, probs_strong = nn.loss_and_grads(
                params, x_unl_strong, targets, weights=mask
            )
            grads = sup_grads.add_scaled(unsup_grads, cfg.lambda_u)
        else:
            strong_res = nn.forward_batch(params, x_unl_strong)
            probs_strong = strong_res.probs
            logp = _log_softmax(strong_res.logits)
            unsup_loss = float(np.sum(mask * -(targets * logp).sum(axis=1)) / mu_b)
            grads = sup_grads

        total = sup_loss + cfg.lambda_u * unsup_loss
        if not np.isfinite(total):
            raise TrainingError(f"non-finite loss {total} at step {step}", step=step)

        offset = 0
        for chunk in chunks:
            sel = slice(offset, offset + len(chunk))
            tracker.ingest_batch(chunk, probs_weak[sel], probs_strong[sel])
            if event_sink is not None:
                event_sink(step, chunk, probs_weak[sel], probs_strong[sel])
            offset += len(chunk)
        n_events += len(batch_unl)
        masked_count += int(mask.sum())
        sup_losses[step - 1] = sup_loss
        unsup_losses[step - 1] = unsup_loss
        params = optimizer.step(params, grads) if use_momentum else nn.sgd_step(
            params, grads, cfg.lr
        )

        if step % cfg.snapshot_interval == 0:
            labels, u_vals, mp = _pool_snapshot(
                params, augmenter.weak_batch(x_unlabeled_pool, snap_rng)
            )
            snap_steps.append(step)
            snap_labels.append(labels)
            snap_u.append(u_vals)
            snap_mp.append(mp)

    series = None
    if snap_steps:
        series = SnapshotSeries(
            ids=unlabeled_ids.copy(),
            steps=np.asarray(snap_steps, dtype=np.int64),
            labels=np.stack(snap_labels),
            uncertainty=np.stack(snap_u),
            max_prob=np.stack(snap_mp),
        )
    metrics = RoundMetrics(
        test_accuracy=evaluate_accuracy(params, dataset, pools.sorted_test()),
        supervised_loss=float(sup_losses.mean()),
        unsupervised_loss=float(unsup_losses.mean()),
        mask_rate=masked_count / n_events if n_events else 0.0,
        series=series,
        n_events=n_events,
    )
    return params, metrics
