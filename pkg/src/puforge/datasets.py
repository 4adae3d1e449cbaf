"""Synthetic benchmarks, PU marking, stratified splits and the ``puforge-data v1`` text format."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, DataError, ParseError
from .rng import derive_rng

DATA_HEADER = "puforge-data v1"


def round_half_up(x):
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class PUDataset:
    """Feature matrix with hidden true labels and an optional P/U marking.

    ``marks`` is a boolean array (True = P) or None for a fully labelled view.
    ``true_labels`` is for evaluation only and never read by PU trainers.
    """

    features: np.ndarray
    true_labels: np.ndarray
    marks: np.ndarray | None
    prior: float
    r: float | None = None
    seed: int = 0
    prior_source: str = "generative"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.true_labels, dtype=np.int8)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DataError(f"features {X.shape} and labels {y.shape} are inconsistent")
        if not np.all(np.isin(y, (-1, 1))):
            raise DataError("true labels must be -1 or +1")
        if not np.all(np.isfinite(X)):
            raise DataError("features must be finite")
        if not 0.0 < self.prior < 1.0:
            raise ConfigError(f"class prior must lie in (0, 1), got {self.prior}")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "true_labels", y)
        if self.marks is not None:
            m = np.asarray(self.marks, dtype=bool)
            if m.shape != y.shape:
                raise DataError("marks must align with samples")
            if np.any(y[m] != 1):
                raise DataError("a P-marked sample has a negative true label")
            object.__setattr__(self, "marks", m)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def p_index(self):
        return np.flatnonzero(self.marks)

    @property
    def u_index(self):
        return np.flatnonzero(~self.marks)

    @property
    def n_p(self):
        return int(self.marks.sum())

    @property
    def n_u(self):
        return self.n - self.n_p

    def subset(self, idx):
        idx = np.asarray(idx)
        return replace(self, features=self.features[idx], true_labels=self.true_labels[idx],
                       marks=None if self.marks is None else self.marks[idx])

    def empirical_prior(self):
        return float(np.mean(self.true_labels == 1))

    def __eq__(self, other):
        if not isinstance(other, PUDataset):
            return NotImplemented
        same_marks = (self.marks is None and other.marks is None) or (
            self.marks is not None and other.marks is not None and np.array_equal(self.marks, other.marks))
        return (same_marks and np.array_equal(self.features, other.features)
                and np.array_equal(self.true_labels, other.true_labels)
                and self.prior == other.prior and self.r == other.r and self.seed == other.seed
                and self.prior_source == other.prior_source)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.4, 0.3, 0.3)
    stratified: bool = True

    def __post_init__(self):
        if len(self.ratios) != 3 or any(not r > 0 for r in self.ratios):
            raise ConfigError(f"split ratios must be three positive numbers, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {sum(self.ratios)}")


def _class_counts(n, prior):
    n_pos = round_half_up(prior * n)
    return n_pos, n - n_pos


def _shuffle(X, y, rng):
    order = rng.permutation(len(y))
    return X[order], y[order]


def gen_two_gaussians(n, prior, mu_sep, d, seed):
    """Unit-covariance Gaussians centred at +-mu_sep/2 along the first axis."""
    if n < 10 or d < 1:
        raise ConfigError("need n >= 10 and d >= 1")
    if not mu_sep > 0:
        raise ConfigError("mean separation must be positive")
    if not 0.0 < prior < 1.0:
        raise ConfigError("class prior must lie in (0, 1)")
    rng = derive_rng(seed, "two_gaussians")
    n_pos, n_neg = _class_counts(n, prior)
    shift = np.zeros(d)
    shift[0] = mu_sep / 2
    X = np.vstack([rng.standard_normal((n_pos, d)) + shift, rng.standard_normal((n_neg, d)) - shift])
    y = np.concatenate([np.ones(n_pos, dtype=np.int8), -np.ones(n_neg, dtype=np.int8)])
    X, y = _shuffle(X, y, rng)
    return PUDataset(X, y, None, prior, None, seed,
                     meta={"generator": "two_gaussians", "n": n, "d": d, "mu_sep": mu_sep})


def bayes_accuracy_two_gaussians(mu_sep):
    """Phi(mu_sep / 2): accuracy of the midpoint rule, exact for balanced classes."""
    return float(norm.cdf(mu_sep / 2))


def gen_two_moons(n, prior, noise_sd, seed):
    """Interleaved half circles; the upper moon is the positive class."""
    if n < 10:
        raise ConfigError("need n >= 10")
    if noise_sd < 0:
        raise ConfigError("noise_sd must be nonnegative")
    if not 0.0 < prior < 1.0:
        raise ConfigError("class prior must lie in (0, 1)")
    rng = derive_rng(seed, "two_moons")
    n_pos, n_neg = _class_counts(n, prior)
    t_pos = rng.uniform(0, np.pi, n_pos)
    t_neg = rng.uniform(0, np.pi, n_neg)
    upper = np.column_stack([np.cos(t_pos), np.sin(t_pos)])
    lower = np.column_stack([1 - np.cos(t_neg), 0.5 - np.sin(t_neg)])
    X = np.vstack([upper, lower])
    if noise_sd > 0:
        X = X + noise_sd * rng.standard_normal(X.shape)
    y = np.concatenate([np.ones(n_pos, dtype=np.int8), -np.ones(n_neg, dtype=np.int8)])
    X, y = _shuffle(X, y, rng)
    return PUDataset(X, y, None, prior, None, seed,
                     meta={"generator": "two_moons", "n": n, "noise_sd": noise_sd})


def make_pu(dataset, r, seed):
    """Mark a seeded uniform r-fraction of the true positives as P; all else is U."""
    if not 0.0 < r <= 1.0:
        raise ConfigError(f"labeling ratio must lie in (0, 1], got {r}")
    pos = np.flatnonzero(dataset.true_labels == 1)
    if pos.size == 0:
        raise DataError("dataset has no positives to mark")
    n_p = round_half_up(r * pos.size)
    if n_p == 0:
        raise DataError(f"r={r} marks no positives out of {pos.size}")
    rng = derive_rng(seed, "make_pu")
    chosen = rng.choice(pos, size=n_p, replace=False)
    marks = np.zeros(dataset.n, dtype=bool)
    marks[chosen] = True
    return replace(dataset, marks=marks, r=r)


def split(dataset, spec=SplitSpec(), seed=0):
    """Stratified (by true label) train/val/test partition."""
    rng = derive_rng(seed, "split")
    parts = [[], [], []]
    strata = [np.flatnonzero(dataset.true_labels == c) for c in (1, -1)] if spec.stratified \
        else [np.arange(dataset.n)]
    for idx in strata:
        idx = rng.permutation(idx)
        n_train = round_half_up(spec.ratios[0] * idx.size)
        n_val = round_half_up(spec.ratios[1] * idx.size)
        n_val = min(n_val, idx.size - n_train)
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    out = []
    for name, chunks in zip(("train", "val", "test"), parts):
        idx = np.sort(np.concatenate(chunks))
        if idx.size == 0:
            raise DataError(f"{name} split is empty")
        out.append(dataset.subset(idx))
    return tuple(out)


def _fmt(x):
    return format(float(x), ".17g")


def save_dataset(dataset, path):
    r = "none" if dataset.r is None else _fmt(dataset.r)
    header = (f"{DATA_HEADER} n={dataset.n} d={dataset.d} prior={_fmt(dataset.prior)} r={r} "
              f"seed={dataset.seed} prior_source={dataset.prior_source}")
    lines = [header]
    for i in range(dataset.n):
        mark = "-" if dataset.marks is None else ("P" if dataset.marks[i] else "U")
        feats = ",".join(_fmt(v) for v in dataset.features[i])
        lines.append(f"{feats},{int(dataset.true_labels[i])},{mark}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path):
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError("empty file", 1)
    tokens = lines[0].split()
    if " ".join(tokens[:2]) != DATA_HEADER:
        if tokens[:1] == ["puforge-data"]:
            raise ParseError(f"unknown version {' '.join(tokens[1:2])!r}", 1)
        raise ParseError(f"expected header {DATA_HEADER!r}", 1)
    fields = {}
    for tok in tokens[2:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ParseError(f"malformed header field {tok!r}", 1)
        fields[key] = value
    missing = {"n", "d", "prior", "r", "seed"} - fields.keys()
    if missing:
        raise ParseError(f"header missing {sorted(missing)}", 1)
    try:
        n, d = int(fields["n"]), int(fields["d"])
        prior = float(fields["prior"])
        r = None if fields["r"] == "none" else float(fields["r"])
        seed = int(fields["seed"])
    except ValueError as exc:
        raise ParseError(f"bad header value: {exc}", 1) from None
    prior_source = fields.get("prior_source", "generative")
    if len(lines) - 1 < n:
        raise ParseError(f"expected {n} sample rows, file ends after {len(lines) - 1}", len(lines) + 1)
    X = np.empty((n, d))
    y = np.empty(n, dtype=np.int8)
    marks = []
    for i in range(n):
        lineno = i + 2
        cols = lines[i + 1].split(",")
        if len(cols) != d + 2:
            raise ParseError(f"expected {d + 2} fields, got {len(cols)}", lineno)
        try:
            X[i] = [float(c) for c in cols[:d]]
            y[i] = int(cols[d])
        except ValueError:
            raise ParseError("non-numeric field", lineno) from None
        if y[i] not in (-1, 1):
            raise ParseError(f"label must be -1 or 1, got {y[i]}", lineno)
        if cols[d + 1] not in ("P", "U", "-"):
            raise ParseError(f"mark must be P, U or -, got {cols[d + 1]!r}", lineno)
        marks.append(cols[d + 1])
    if any(line.strip() for line in lines[n + 1:]):
        raise ParseError("trailing data after declared sample count", n + 2)
    if "-" in marks:
        if set(marks) != {"-"}:
            raise ParseError("mixed labelled and PU rows")
        mark_arr = None
    else:
        mark_arr = np.array([m == "P" for m in marks])
    if prior_source == "empirical":
        emp = float(np.mean(y == 1))
        if abs(emp - prior) > 1.0 / n:
            raise ParseError(f"header prior {prior} differs from empirical prior {emp}", 1)
    try:
        return PUDataset(X, y, mark_arr, prior, r, seed, prior_source)
    except DataError as exc:
        raise ParseError(str(exc)) from None
