"""PU risks and the auxiliary losses used by the self-paced trainer.

Every batch loss is a mean over its sample set. Functions named ``*_grad``
return the derivative of the matching loss with respect to the raw scores;
backpropagation into parameters is left to :func:`puforge.nn.backward`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DataError, ShapeError


def sigmoid(z):
    return expit(z)


def surrogate(z):
    """Sigmoid loss l(z) = 1 / (1 + exp(z))."""
    return expit(-np.asarray(z, dtype=float))


def surrogate_deriv(z):
    # l'(z) = -f(z) f(-z), symmetric in z
    z = np.asarray(z, dtype=float)
    return -expit(z) * expit(-z)


@dataclass(frozen=True)
class RiskBreakdown:
    positive_term: float
    negative_correction: float
    total: float
    correction_clipped: bool

    def to_dict(self):
        return {"positive_term": self.positive_term, "negative_correction": self.negative_correction,
                "total": self.total, "correction_clipped": self.correction_clipped}


@dataclass(frozen=True)
class GateRecord:
    sample_index: int
    pu_term: float
    mse_term: float
    active: bool

    def to_dict(self):
        return {"sample_index": self.sample_index, "pu_term": self.pu_term,
                "mse_term": self.mse_term, "active": self.active}


def _check_pu_inputs(scores_p, scores_u, prior):
    scores_p = np.asarray(scores_p, dtype=float)
    scores_u = np.asarray(scores_u, dtype=float)
    if scores_p.size == 0 or scores_u.size == 0:
        raise DataError("PU risk needs at least one positive and one unlabeled score")
    if not 0.0 < prior < 1.0:
        raise ConfigError(f"class prior must lie in (0, 1), got {prior}")
    return scores_p, scores_u


def _risk_parts(scores_p, scores_u, prior):
    positive = prior * surrogate(scores_p).mean()
    correction = surrogate(-scores_u).mean() - prior * surrogate(-scores_p).mean()
    return float(positive), float(correction)


def upu_risk(scores_p, scores_u, prior):
    scores_p, scores_u = _check_pu_inputs(scores_p, scores_u, prior)
    positive, correction = _risk_parts(scores_p, scores_u, prior)
    return RiskBreakdown(positive, correction, positive + correction, False)


def nnpu_risk(scores_p, scores_u, prior):
    scores_p, scores_u = _check_pu_inputs(scores_p, scores_u, prior)
    positive, correction = _risk_parts(scores_p, scores_u, prior)
    clipped = correction < 0
    total = positive if clipped else positive + correction
    return RiskBreakdown(positive, correction, total, clipped)


def upu_grad(scores_p, scores_u, prior):
    """d(uPU total)/d scores, as (grad_p, grad_u)."""
    scores_p, scores_u = _check_pu_inputs(scores_p, scores_u, prior)
    n_p, n_u = scores_p.size, scores_u.size
    # d/ds [prior*l(s)] + d/ds [-prior*l(-s)] = prior*l'(s) + prior*l'(-s) = 2*prior*l'(s)
    grad_p = 2.0 * prior * surrogate_deriv(scores_p) / n_p
    grad_u = -surrogate_deriv(scores_u) / n_u
    return grad_p, grad_u


def nnpu_grad(scores_p, scores_u, prior, gamma=1.0):
    """Training gradient for the non-negative estimator.

    When the negative-risk correction is below zero the step ascends on it
    (gradient of ``-gamma * correction``) instead of descending the clipped total.
    """
    scores_p, scores_u = _check_pu_inputs(scores_p, scores_u, prior)
    _, correction = _risk_parts(scores_p, scores_u, prior)
    if correction >= 0:
        return upu_grad(scores_p, scores_u, prior)
    n_p, n_u = scores_p.size, scores_u.size
    grad_p = -gamma * prior * surrogate_deriv(scores_p) / n_p
    grad_u = gamma * surrogate_deriv(scores_u) / n_u
    return grad_p, grad_u


def per_sample_pu(score_u):
    """Contribution l(-g(x)) of one unlabeled sample to the negative risk."""
    return surrogate(-np.asarray(score_u, dtype=float))


def ce_loss(score, label):
    """Binary cross-entropy of sigmoid(score) against a +/-1 label, elementwise."""
    score = np.asarray(score, dtype=float)
    label = np.asarray(label)
    if not np.all(np.isin(label, (-1, 1))):
        raise DataError("pseudo labels must be -1 or +1")
    return np.logaddexp(0.0, -label * score)


def ce_mean(scores, labels):
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        return 0.0
    return float(ce_loss(scores, labels).mean())


def ce_mean_grad(scores, labels):
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        return np.zeros(0)
    labels = np.asarray(labels)
    return (expit(scores) - (labels == 1)) / scores.size


def hybrid_loss(trusted_scores, trusted_labels, scores_p, scores_u, prior):
    """Mean CE over the trusted pseudo-labelled samples plus nnPU over the remaining pool."""
    if np.asarray(scores_u).size == 0:
        raise DataError("hybrid loss needs a nonempty remaining unlabeled pool")
    return ce_mean(trusted_scores, trusted_labels) + nnpu_risk(scores_p, scores_u, prior).total


def hybrid_grad(trusted_scores, trusted_labels, scores_p, scores_u, prior, gamma=1.0):
    """(grad_trusted, grad_p, grad_u)."""
    if np.asarray(scores_u).size == 0:
        raise DataError("hybrid loss needs a nonempty remaining unlabeled pool")
    grad_p, grad_u = nnpu_grad(scores_p, scores_u, prior, gamma)
    return ce_mean_grad(trusted_scores, trusted_labels), grad_p, grad_u


def _gate(scores_1, scores_2, pu_terms, alpha):
    if not alpha > 0:
        raise ConfigError(f"gate parameter must be positive, got {alpha}")
    scores_1 = np.asarray(scores_1, dtype=float)
    scores_2 = np.asarray(scores_2, dtype=float)
    pu_terms = np.asarray(pu_terms, dtype=float)
    if not scores_1.shape == scores_2.shape == pu_terms.shape:
        raise ShapeError("gated MSE inputs must have equal length")
    diff = expit(scores_1) - expit(scores_2)
    mse = diff * diff
    active = pu_terms > alpha * mse
    return scores_1, scores_2, pu_terms, diff, mse, active


def gated_mse(scores_1, scores_2, pu_terms, alpha, denom=None, trace=False):
    """Squared probability gap, counted only where pu_term > alpha * gap.

    Returns the active contributions divided by ``denom`` (default: number of
    samples given). With ``trace=True`` the per-sample :class:`GateRecord` list
    is returned as well.
    """
    _, _, pu_terms, _, mse, active = _gate(scores_1, scores_2, pu_terms, alpha)
    denom = mse.size if denom is None else denom
    value = float(mse[active].sum() / denom) if mse.size else 0.0
    if not trace:
        return value
    records = [GateRecord(i, float(pu_terms[i]), float(mse[i]), bool(active[i])) for i in range(mse.size)]
    return value, records


def gated_mse_grad(scores_1, scores_2, pu_terms, alpha, denom=None):
    """(grad wrt scores_1, grad wrt scores_2); the gate itself is held fixed."""
    scores_1, scores_2, _, diff, mse, active = _gate(scores_1, scores_2, pu_terms, alpha)
    denom = mse.size if denom is None else denom
    if mse.size == 0:
        return np.zeros(0), np.zeros(0)
    p1, p2 = expit(scores_1), expit(scores_2)
    w = np.where(active, 2.0 * diff, 0.0) / denom
    return w * p1 * (1 - p1), -w * p2 * (1 - p2)


def teacher_consistency_loss(teacher_scores, student_scores):
    """Mean squared gap between teacher and student probabilities (one pair)."""
    teacher_scores = np.asarray(teacher_scores, dtype=float)
    student_scores = np.asarray(student_scores, dtype=float)
    if teacher_scores.shape != student_scores.shape:
        raise ShapeError("teacher and student score vectors differ in length")
    if teacher_scores.size == 0:
        return 0.0
    diff = expit(teacher_scores) - expit(student_scores)
    return float(np.mean(diff * diff))


def teacher_consistency_grad(teacher_scores, student_scores):
    """Gradient with respect to the student scores only; teachers are constants."""
    teacher_scores = np.asarray(teacher_scores, dtype=float)
    student_scores = np.asarray(student_scores, dtype=float)
    if teacher_scores.shape != student_scores.shape:
        raise ShapeError("teacher and student score vectors differ in length")
    if teacher_scores.size == 0:
        return np.zeros(0)
    ps = expit(student_scores)
    return -2.0 * (expit(teacher_scores) - ps) * ps * (1 - ps) / student_scores.size


def total_loss(parts):
    """Unweighted sum of loss components; accepts a mapping or an iterable."""
    if isinstance(parts, dict):
        parts = parts.values()
    return float(sum(parts))
