"""Self-paced trusted-set construction from the unlabeled pool."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import round_half_up
from .errors import ConfigError, DataError, ScheduleError, SelectionError
from .losses import sigmoid
from .nn import ModelParams, forward

STRATEGIES = ("fixed_size", "without_replacement", "dynamic_linear")


@dataclass(frozen=True)
class SelectionConfig:
    strategy: str = "dynamic_linear"
    max_trust_frac: float = 0.2
    bootstrap_frac: float = 0.75
    warmup_epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown selection strategy {self.strategy!r}")
        for name in ("max_trust_frac", "bootstrap_frac"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be nonnegative")


@dataclass
class TrustedSet:
    """Pool positions pseudo-labelled +1 (``pos``) and -1 (``neg``)."""

    pos_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    neg_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    epoch: int = 0

    def __len__(self):
        return len(self.pos_indices) + len(self.neg_indices)

    def indices(self):
        return np.concatenate([self.pos_indices, self.neg_indices])

    def labels(self):
        return np.concatenate([np.ones(len(self.pos_indices), dtype=np.int8),
                               -np.ones(len(self.neg_indices), dtype=np.int8)])

    def as_arrays(self, pool_size):
        """(mask, pseudo_labels) over the whole pool; unselected positions carry label 0."""
        labels = np.zeros(pool_size, dtype=np.int8)
        labels[self.pos_indices] = 1
        labels[self.neg_indices] = -1
        return labels != 0, labels

    def issubset(self, other):
        return set(self.pos_indices) <= set(other.pos_indices) and set(self.neg_indices) <= set(other.neg_indices)

    def to_dict(self):
        return {"epoch": self.epoch, "pos": [int(i) for i in self.pos_indices],
                "neg": [int(i) for i in self.neg_indices]}


def rank_scores(scores):
    """Indices by descending score; ties keep ascending index order."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise DataError("cannot rank an empty pool")
    return np.argsort(-scores, kind="stable")


def rank_by_confidence(model, pool):
    """(order, probabilities) for the pool under ``model``.

    ``model`` may be a :class:`ModelParams` or any callable returning scores.
    Ranking uses raw scores, which orders identically to the probabilities but
    does not collapse saturated values into ties.
    """
    pool = np.asarray(pool, dtype=float)
    if pool.shape[0] == 0:
        raise DataError("cannot rank an empty pool")
    scores = forward(model, pool) if isinstance(model, ModelParams) else np.asarray(model(pool), dtype=float)
    return rank_scores(scores), sigmoid(scores)


def schedule_trust_size(epoch, total_epochs, cfg, pool_size):
    """Total trusted size, rising linearly from 0 after warm-up to max_trust_frac * pool."""
    warmup = cfg.warmup_epochs
    if epoch < warmup:
        raise ScheduleError(f"selection cannot run during warm-up (epoch {epoch} < {warmup})")
    if epoch > total_epochs or total_epochs <= warmup:
        raise ScheduleError(f"epoch {epoch} outside the selection window ({warmup}, {total_epochs}]")
    return round_half_up(cfg.max_trust_frac * pool_size * (epoch - warmup) / (total_epochs - warmup))


def per_class_size(total):
    return total // 2


def bootstrap_subset(pool_size, frac, rng):
    size = round_half_up(frac * pool_size)
    return np.sort(rng.choice(pool_size, size=size, replace=False))


def select_trusted(scores, n_per_class, strategy, previous=None, bootstrap_frac=0.75, rng=None, epoch=0):
    """Pick the n most and n least confident pool members from a bootstrap draw.

    ``scores`` are the model scores for every pool member (position = pool index).
    ``without_replacement`` keeps everything in ``previous`` and adds only the
    increment; the other strategies select afresh.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown selection strategy {strategy!r}")
    scores = np.asarray(scores, dtype=float)
    if n_per_class < 0:
        raise SelectionError("negative selection size")
    if rng is None:
        rng = np.random.default_rng(0)
    boot = bootstrap_subset(scores.size, bootstrap_frac, rng)
    if 2 * n_per_class > boot.size:
        raise SelectionError(f"cannot select 2x{n_per_class} samples from a bootstrap of {boot.size}")
    if n_per_class == 0 and (previous is None or strategy != "without_replacement"):
        return TrustedSet(epoch=epoch)

    if strategy == "without_replacement" and previous is not None:
        keep_pos = np.asarray(previous.pos_indices, dtype=int)
        keep_neg = np.asarray(previous.neg_indices, dtype=int)
    else:
        keep_pos = keep_neg = np.zeros(0, dtype=int)
    taken = np.zeros(scores.size, dtype=bool)
    taken[keep_pos] = True
    taken[keep_neg] = True
    cand = boot[~taken[boot]]
    order = cand[rank_scores(scores[cand])]
    add_pos = max(0, n_per_class - keep_pos.size)
    add_neg = max(0, n_per_class - keep_neg.size)
    if add_pos + add_neg > order.size:
        raise SelectionError("bootstrap draw too small for the requested increment")
    new_pos = order[:add_pos]
    new_neg = order[order.size - add_neg:][::-1] if add_neg else np.zeros(0, dtype=int)
    return TrustedSet(np.concatenate([keep_pos, new_pos]).astype(int),
                      np.concatenate([keep_neg, new_neg]).astype(int), epoch)
