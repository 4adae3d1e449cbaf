"""Training loops for the supervised baselines, nnPU and the self-paced dual-student/teacher pipeline."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import losses
from .datasets import PUDataset, round_half_up
from .errors import ConfigError, DataError, SelectionError
from .nn import (ModelParams, backward, ema_update, forward, forward_cached, init_model, new_optimizer,
                 sgd_step)
from .rng import derive_rng
from .selection import SelectionConfig, TrustedSet, per_class_size, schedule_trust_size, select_trusted

METHODS = ("full_pn", "standard_pn", "small_pn", "naive_pu", "nnpu", "self_pu")
BASELINES = ("full_pn", "standard_pn", "small_pn", "naive_pu")
METHOD_LABELS = {"full_pn": "Full PN", "standard_pn": "Standard PN", "small_pn": "Small PN",
                 "naive_pu": "PU", "nnpu": "nnPU", "self_pu": "Self-PU"}


@dataclass(frozen=True)
class TrainerConfig:
    method: str = "self_pu"
    r: float = 0.1
    alpha: float = 20.0
    beta: float = 0.5
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 100
    hidden: tuple = (64, 32)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    seed: int = 0
    gamma: float = 1.0
    # component switches for the ablation rows
    use_selection: bool = True
    use_student: bool = True
    use_teacher: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if not 0.0 < self.r <= 1.0:
            raise ConfigError(f"labeling ratio must lie in (0, 1], got {self.r}")
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError("beta must lie in (0, 1]")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch_size < 2:
            raise ConfigError("batch size must be at least 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if any(int(h) < 1 for h in self.hidden):
            raise ConfigError("hidden layer widths must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def layer_dims(self, d):
        return [d, *self.hidden, 1]

    def to_dict(self):
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out


@dataclass
class RunResult:
    method: str
    seed: int
    metrics: dict
    history: dict
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)
    best_epoch: int = 0
    trusted_log: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)

    def to_dict(self):
        return {"method": self.method, "seed": self.seed, "config": self.config, "metrics": self.metrics,
                "best_epoch": self.best_epoch, "counts": self.counts, "history": self.history,
                "wall_time": self.wall_time, "trusted_log": self.trusted_log}


@dataclass
class SelfPUModels:
    students: tuple
    teachers: tuple


# --- inference and metrics -------------------------------------------------

def predict_proba(models, X):
    """Mean sigmoid score over ``models`` (a single model or a sequence)."""
    if isinstance(models, ModelParams):
        models = (models,)
    elif isinstance(models, SelfPUModels):
        models = models.teachers
    return np.mean([losses.sigmoid(forward(m, X)) for m in models], axis=0)


def predict(models, X):
    """(probability, class in {-1, +1}) with the class thresholded at 0.5."""
    prob = predict_proba(models, X)
    return prob, np.where(prob >= 0.5, 1, -1)


def metrics_from_labels(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if truth.size == 0:
        raise DataError("cannot evaluate on an empty set")
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == -1)))
    fn = int(np.sum((pred == -1) & (truth == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"accuracy": float(np.mean(pred == truth)), "precision": precision, "recall": recall, "f1": f1}


def evaluate(models, dataset):
    if dataset.n == 0:
        raise DataError("cannot evaluate on an empty set")
    _, cls = predict(models, dataset.features)
    return metrics_from_labels(cls, dataset.true_labels)


# --- baselines -----------------------------------------------------------------

def make_supervised_view(pu_train, method, r=None, seed=0):
    """Labelled training set for one of the supervised baselines."""
    if method not in BASELINES:
        raise ConfigError(f"{method!r} is not a supervised baseline")
    y = pu_train.true_labels
    marks = pu_train.marks
    if method == "full_pn":
        idx, labels = np.arange(pu_train.n), y
    elif method == "naive_pu":
        idx, labels = np.arange(pu_train.n), np.where(marks, 1, -1).astype(np.int8)
    else:
        p_idx = np.flatnonzero(marks)
        neg = np.flatnonzero(y == -1)
        if method == "small_pn":
            r = pu_train.r if r is None else r
            k = round_half_up(r * neg.size)
            neg = np.sort(derive_rng(seed, "small_pn").choice(neg, size=k, replace=False))
        idx = np.concatenate([p_idx, neg])
        labels = y[idx]
    view = pu_train.subset(idx)
    return replace(view, true_labels=np.asarray(labels, dtype=np.int8), marks=None)


class _Tracker:
    """Per-epoch validation and best-checkpoint bookkeeping."""

    def __init__(self, val):
        self.val = val
        self.best_acc = -1.0
        self.best_epoch = 0
        self.best = None

    def update(self, epoch, models, snapshot):
        if self.val is None:
            self.best, self.best_epoch = snapshot, epoch
            return float("nan")
        acc = evaluate(models, self.val)["accuracy"]
        if acc > self.best_acc:
            self.best_acc, self.best_epoch, self.best = acc, epoch, snapshot()
        return acc

    def final(self, snapshot):
        # without a validation set the final model is returned
        return snapshot() if self.val is None else self.best


def _finish(method, cfg, history, tracker, model_for_eval, test, start, trusted_log=(), counts=None):
    metrics = evaluate(model_for_eval, test) if test is not None else {}
    return RunResult(method, cfg.seed, metrics, history, time.perf_counter() - start, cfg.to_dict(),
                     tracker.best_epoch, list(trusted_log), dict(counts or {}))


def train_supervised(view, cfg, val=None, test=None):
    """Mean cross-entropy with SGD-momentum on shuffled mini-batches."""
    if view.n == 0:
        raise DataError("empty training view")
    if len(np.unique(view.true_labels)) < 2:
        raise DataError("supervised view contains a single class")
    start = time.perf_counter()
    model = init_model(cfg.layer_dims(view.d), rng=derive_rng(cfg.seed, "init", 0))
    opt = new_optimizer(model, cfg.lr, cfg.momentum)
    order_rng = derive_rng(cfg.seed, "order", "supervised")
    X, y = view.features, view.true_labels
    history = {"loss_total": [], "val_accuracy": []}
    tracker = _Tracker(val)
    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(view.n)
        total = 0.0
        n_batches = 0
        for lo in range(0, view.n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            scores, cache = forward_cached(model, X[idx])
            total += losses.ce_mean(scores, y[idx])
            grads = backward(model, X[idx], losses.ce_mean_grad(scores, y[idx]), cache)
            sgd_step(model, opt, grads)
            n_batches += 1
        history["loss_total"].append(total / n_batches)
        history["val_accuracy"].append(tracker.update(epoch, model, model.copy))
    best = tracker.final(model.copy)
    return best, _finish(cfg.method, cfg, history, tracker, best, test, start,
                         counts={"n": view.n, "n_pos": int(np.sum(y == 1))})


# --- PU mini-batching ---------------------------------------------------------

class _Cycler:
    """Endless stream of indices in 0..n-1, reshuffled on every pass."""

    def __init__(self, n, rng):
        self.n, self.rng = n, rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def take(self, k):
        out = []
        while k > 0:
            if self.pos == self.n:
                self.perm = self.rng.permutation(self.n)
                self.pos = 0
            chunk = self.perm[self.pos:self.pos + k]
            out.append(chunk)
            self.pos += chunk.size
            k -= chunk.size
        return np.concatenate(out)


def pu_batch_sizes(n_p, n_u, batch_size):
    """(positives, unlabeled) per mini-batch, proportional with at least one positive."""
    k_p = max(1, round_half_up(batch_size * n_p / (n_p + n_u)))
    k_p = min(k_p, batch_size - 1)
    return k_p, batch_size - k_p


def _u_batches(n_u, k_u, rng):
    perm = rng.permutation(n_u)
    return [perm[lo:lo + k_u] for lo in range(0, n_u, k_u)]


def _check_pu(pu_train):
    if pu_train.marks is None:
        raise DataError("training set carries no P/U marking")
    if pu_train.n_p < 1 or pu_train.n_u < 1:
        raise DataError("PU training needs at least one P and one U sample")
    if pu_train.prior is None:
        raise ConfigError("class prior is required for PU training")


class _PUStudent:
    """One scorer trained on a PU set: its model, optimizer and private positive stream."""

    def __init__(self, pu_train, cfg, student):
        self.model = init_model(cfg.layer_dims(pu_train.d), rng=derive_rng(cfg.seed, "init", student))
        self.opt = new_optimizer(self.model, cfg.lr, cfg.momentum)
        self.p_stream = _Cycler(pu_train.n_p, derive_rng(cfg.seed, "order", "p", student))


def _risk(estimator, sp, su, prior):
    return losses.nnpu_risk(sp, su, prior) if estimator == "nnpu" else losses.upu_risk(sp, su, prior)


def _risk_grad(estimator, sp, su, prior, gamma):
    if estimator == "nnpu":
        return losses.nnpu_grad(sp, su, prior, gamma)
    return losses.upu_grad(sp, su, prior)


def _pu_step(student, Xp, Xu, prior, cfg, estimator):
    X = np.vstack([Xp, Xu])
    scores, cache = forward_cached(student.model, X)
    k = Xp.shape[0]
    risk = _risk(estimator, scores[:k], scores[k:], prior)
    gp, gu = _risk_grad(estimator, scores[:k], scores[k:], prior, cfg.gamma)
    sgd_step(student.model, student.opt, backward(student.model, X, np.concatenate([gp, gu]), cache))
    return risk


def _full_risk(model, Xp, Xu, prior, estimator):
    return _risk(estimator, forward(model, Xp), forward(model, Xu), prior).total


def train_nnpu(pu_train, cfg, val=None, test=None, estimator="nnpu", student=0):
    """nnPU (or, with ``estimator='upu'``, unbiased PU) training.

    ``student`` selects the init/positive-order streams; Self-PU student k
    during warm-up follows exactly the same streams.
    """
    _check_pu(pu_train)
    if estimator not in ("nnpu", "upu"):
        raise ConfigError(f"unknown estimator {estimator!r}")
    start = time.perf_counter()
    prior = pu_train.prior
    Xp = pu_train.features[pu_train.p_index]
    Xu = pu_train.features[pu_train.u_index]
    st = _PUStudent(pu_train, cfg, student)
    k_p, k_u = pu_batch_sizes(Xp.shape[0], Xu.shape[0], cfg.batch_size)
    u_rng = derive_rng(cfg.seed, "order", "u")
    history = {"loss_total": [], "risk_min": [], "clip_rate": [], "train_risk": [], "val_accuracy": []}
    tracker = _Tracker(val)
    for epoch in range(1, cfg.epochs + 1):
        totals, clipped = [], 0
        for ub in _u_batches(Xu.shape[0], k_u, u_rng):
            risk = _pu_step(st, Xp[st.p_stream.take(k_p)], Xu[ub], prior, cfg, estimator)
            totals.append(risk.total)
            clipped += risk.correction_clipped
        history["loss_total"].append(float(np.mean(totals)))
        history["risk_min"].append(float(np.min(totals)))
        history["clip_rate"].append(clipped / len(totals))
        history["train_risk"].append(_full_risk(st.model, Xp, Xu, prior, estimator))
        history["val_accuracy"].append(tracker.update(epoch, st.model, st.model.copy))
    best = tracker.final(st.model.copy)
    return best, _finish(estimator if estimator == "upu" else cfg.method, cfg, history, tracker, best, test, start,
                         counts={"n_p": pu_train.n_p, "n_u": pu_train.n_u})


# --- Self-PU ---------------------------------------------------------------------

@dataclass
class BatchParts:
    """Per-student inputs for one Self-PU mini-batch.

    ``trusted_*`` are positions inside the shared unlabeled sub-batch that the
    student has pseudo-labelled; the rest of the sub-batch feeds its nnPU term.
    """

    Xp: tuple
    Xu: np.ndarray
    trusted_mask: tuple
    trusted_labels: tuple


def selfpu_batch_objective(students, teachers, parts, prior, cfg, active=True):
    """Loss value, per-component breakdown and per-student gradients for one mini-batch.

    With ``active=False`` (warm-up) each student only sees its nnPU risk.
    Gradients flow into the two students; teacher scores are constants.
    """
    n_u = parts.Xu.shape[0]
    scores, caches, X = [], [], []
    for k in range(2):
        Xk = np.vstack([parts.Xp[k], parts.Xu])
        s, c = forward_cached(students[k], Xk)
        scores.append(s)
        caches.append(c)
        X.append(Xk)
    sp = [scores[k][:parts.Xp[k].shape[0]] for k in range(2)]
    su = [scores[k][parts.Xp[k].shape[0]:] for k in range(2)]
    gp = [np.zeros_like(sp[k]) for k in range(2)]
    gu = [np.zeros(n_u) for _ in range(2)]
    comp = {"hybrid": 0.0, "student": 0.0, "teacher": 0.0, "risk": 0.0, "clipped": 0, "gate_active": 0,
            "gate_count": 0}

    for k in range(2):
        mask = parts.trusted_mask[k] if active else np.zeros(n_u, dtype=bool)
        rest = ~mask
        if rest.any():
            risk = losses.nnpu_risk(sp[k], su[k][rest], prior)
            g_p, g_u = losses.nnpu_grad(sp[k], su[k][rest], prior, cfg.gamma)
            gp[k] += g_p
            gu[k][rest] += g_u
            comp["risk"] += risk.total / 2
            comp["clipped"] += risk.correction_clipped
            comp["hybrid"] += risk.total
        if mask.any():
            labels = parts.trusted_labels[k][mask]
            comp["hybrid"] += losses.ce_mean(su[k][mask], labels)
            gu[k][mask] += losses.ce_mean_grad(su[k][mask], labels)

    if active and cfg.use_student:
        for k, other in ((0, 1), (1, 0)):
            rest = ~parts.trusted_mask[k]
            if not rest.any():
                continue
            pu_terms = losses.per_sample_pu(su[k][rest])
            comp["student"] += losses.gated_mse(su[k][rest], su[other][rest], pu_terms, cfg.alpha, denom=n_u)
            g_k, g_o = losses.gated_mse_grad(su[k][rest], su[other][rest], pu_terms, cfg.alpha, denom=n_u)
            gu[k][rest] += g_k
            gu[other][rest] += g_o
            gate = pu_terms > cfg.alpha * (losses.sigmoid(su[k][rest]) - losses.sigmoid(su[other][rest])) ** 2
            comp["gate_active"] += int(gate.sum())
            comp["gate_count"] += int(gate.size)

    if active and cfg.use_teacher:
        for k in range(2):
            ts = forward(teachers[k], parts.Xu)
            comp["teacher"] += losses.teacher_consistency_loss(ts, su[k])
            gu[k] += losses.teacher_consistency_grad(ts, su[k])

    comp["total"] = losses.total_loss([comp["hybrid"], comp["student"], comp["teacher"]])
    grads = [backward(students[k], X[k], np.concatenate([gp[k], gu[k]]), caches[k]) for k in range(2)]
    return comp["total"], comp, grads


def _trust_target(epoch, cfg, pool_size):
    sel = cfg.selection
    if cfg.epochs <= sel.warmup_epochs or epoch <= sel.warmup_epochs:
        return 0
    if sel.strategy == "fixed_size":
        return schedule_trust_size(cfg.epochs, cfg.epochs, sel, pool_size)
    return schedule_trust_size(epoch, cfg.epochs, sel, pool_size)


def train_selfpu(pu_train, cfg, val=None, test=None, log_trusted=True, on_step=None):
    """Warm-up on nnPU, then self-paced hybrid training of two students with EMA teachers.

    ``on_step(epoch, students, teachers)`` is called after every optimisation step.
    Returns ``(SelfPUModels, RunResult)``; the models are the best-validation
    snapshot (or the final state when ``val`` is None).
    """
    _check_pu(pu_train)
    if cfg.method != "self_pu":
        raise ConfigError("train_selfpu requires method = self_pu")
    start = time.perf_counter()
    prior = pu_train.prior
    sel = cfg.selection
    Xp = pu_train.features[pu_train.p_index]
    Xu = pu_train.features[pu_train.u_index]
    n_u = Xu.shape[0]
    if sel.warmup_epochs < cfg.epochs and cfg.use_selection:
        final = schedule_trust_size(cfg.epochs, cfg.epochs, sel, n_u)
        if 2 * per_class_size(final) > round_half_up(sel.bootstrap_frac * n_u):
            raise SelectionError(f"trusted size {final} exceeds the bootstrap pool")
    studs = [_PUStudent(pu_train, cfg, k) for k in range(2)]
    students = [s.model for s in studs]
    teachers = [m.copy() for m in students]
    k_p, k_u = pu_batch_sizes(Xp.shape[0], n_u, cfg.batch_size)
    u_rng = derive_rng(cfg.seed, "order", "u")
    trusted = [TrustedSet(), TrustedSet()]
    history = {key: [] for key in ("loss_total", "loss_hybrid", "loss_student", "loss_teacher", "risk_min",
                                   "clip_rate", "trust_target", "trust_size_1", "trust_size_2",
                                   "gate_active_frac", "val_accuracy")}
    trusted_log = []
    tracker = _Tracker(val)

    def snapshot():
        return SelfPUModels(tuple(m.copy() for m in students), tuple(m.copy() for m in teachers))

    for epoch in range(1, cfg.epochs + 1):
        active = epoch > sel.warmup_epochs
        target = _trust_target(epoch, cfg, n_u) if cfg.use_selection else 0
        masks, labels = [], []
        for k in range(2):
            if active and cfg.use_selection:
                scores = forward(students[k], Xu)
                trusted[k] = select_trusted(scores, per_class_size(target), sel.strategy, trusted[k],
                                            sel.bootstrap_frac, derive_rng(cfg.seed, "bootstrap", epoch, k),
                                            epoch)
            else:
                trusted[k] = TrustedSet(epoch=epoch)
            m, lab = trusted[k].as_arrays(n_u)
            masks.append(m)
            labels.append(lab)
        if active and log_trusted and cfg.use_selection:
            trusted_log.append({"epoch": epoch, "students": [t.to_dict() for t in trusted]})

        sums = {"total": [], "hybrid": [], "student": [], "teacher": []}
        clipped = steps = gate_active = gate_count = 0
        risk_min = math.inf
        beta = cfg.beta if (active and cfg.use_teacher) else 1.0
        for ub in _u_batches(n_u, k_u, u_rng):
            parts = BatchParts(tuple(Xp[s.p_stream.take(k_p)] for s in studs), Xu[ub],
                               tuple(m[ub] for m in masks), tuple(lab[ub] for lab in labels))
            _, comp, grads = selfpu_batch_objective(students, teachers, parts, prior, cfg, active)
            for k in range(2):
                sgd_step(students[k], studs[k].opt, grads[k])
            for k in range(2):
                ema_update(teachers[k], students[k], beta)
            for key in sums:
                sums[key].append(comp[key])
            clipped += comp["clipped"]
            gate_active += comp["gate_active"]
            gate_count += comp["gate_count"]
            risk_min = min(risk_min, comp["risk"])
            steps += 1
            if on_step is not None:
                on_step(epoch, students, teachers)

        history["loss_total"].append(float(np.mean(sums["total"])))
        history["loss_hybrid"].append(float(np.mean(sums["hybrid"])))
        history["loss_student"].append(float(np.mean(sums["student"])))
        history["loss_teacher"].append(float(np.mean(sums["teacher"])))
        history["risk_min"].append(float(risk_min))
        history["clip_rate"].append(clipped / (2 * steps))
        history["trust_target"].append(int(target))
        history["trust_size_1"].append(len(trusted[0]))
        history["trust_size_2"].append(len(trusted[1]))
        history["gate_active_frac"].append(gate_active / gate_count if gate_count else 0.0)
        # before warm-up ends the teachers are exact copies, so this is the student mean
        history["val_accuracy"].append(tracker.update(epoch, teachers, snapshot))

    best = tracker.final(snapshot)
    return best, _finish(cfg.method, cfg, history, tracker, best, test, start, trusted_log,
                         counts={"n_p": pu_train.n_p, "n_u": pu_train.n_u})


def train(cfg, pu_train, val=None, test=None):
    """Dispatch on ``cfg.method``; returns (model or SelfPUModels, RunResult)."""
    if cfg.method == "self_pu":
        return train_selfpu(pu_train, cfg, val, test)
    if cfg.method == "nnpu":
        return train_nnpu(pu_train, cfg, val, test)
    view = make_supervised_view(pu_train, cfg.method, cfg.r, cfg.seed)
    return train_supervised(view, cfg, val, test)
