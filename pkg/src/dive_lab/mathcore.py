"""Softmax variants, the CE/BSCE/KD/DiVE loss family and their logit gradients.

Every function accepts a single score vector of shape ``(C,)`` or a batch of
shape ``(n, C)``; reductions always run over the last axis. Losses return a
:class:`LossValue` whose ``value`` is a scalar for a single example and a
length-``n`` array for a batch, with ``grad_logits`` shaped like the student
logits.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# floor applied to probabilities inside log()
LOG_FLOOR = 1e-12


class TargetForm(enum.Enum):
    """Which teacher signal the distillation term matches."""

    TEACHER_T_TAU = "t_tau"
    BLENDED_TTILDE = "t_tilde"


@dataclass(frozen=True)
class DistillConfig:
    """Hyper-parameters of the distillation term.

    ``tau`` is the temperature shared by the teacher and the student inside
    the KL term. ``power_p < 1`` power-normalizes the teacher distribution
    only, which is the same as using ``tau / power_p`` for the teacher.
    ``bsce_term=False`` drops the supervised term of the DiVE loss and keeps
    the distillation term alone (the "no BSCE" ablation rows).
    """

    alpha: float = 0.5
    tau: float = 1.0
    power_p: float = 1.0
    target_form: TargetForm = TargetForm.TEACHER_T_TAU
    bsce_term: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 < self.power_p <= 1.0:
            raise ValueError(f"power_p must lie in (0, 1], got {self.power_p}")
        if isinstance(self.target_form, str):
            object.__setattr__(self, "target_form", TargetForm(self.target_form))

    @property
    def teacher_tau(self) -> float:
        """Effective teacher temperature once power normalization is folded in."""
        return self.tau / self.power_p


@dataclass
class LossValue:
    value: float | np.ndarray
    grad_logits: np.ndarray


def _as_logits(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim not in (1, 2) or z.shape[-1] < 2:
        raise ValueError(f"logits must have shape (C,) or (n, C) with C >= 2, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return z


def _as_counts(counts, num_classes: int) -> np.ndarray:
    counts = np.asarray(counts)
    if counts.shape != (num_classes,):
        raise ValueError(f"expected {num_classes} class counts, got shape {counts.shape}")
    if np.any(counts < 1):
        raise ValueError("class counts must all be >= 1")
    return counts.astype(np.float64)


def log_softmax(z) -> np.ndarray:
    z = _as_logits(z)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z) -> np.ndarray:
    """Map logits to a probability vector, computed after a max shift."""
    z = _as_logits(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_temp(z, tau: float) -> np.ndarray:
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    z = _as_logits(z)
    if tau == 1:
        return softmax(z)
    return softmax(z / tau)


def _log_prior(counts: np.ndarray) -> np.ndarray:
    # relative to the largest count so equal counts add exactly 0.0
    return np.log(counts / counts.max())


def bsce_softmax(z, counts) -> np.ndarray:
    """Balanced softmax: ``n_i exp(z_i) / sum_k n_k exp(z_k)``."""
    z = _as_logits(z)
    counts = _as_counts(counts, z.shape[-1])
    return softmax(z + _log_prior(counts))


def power_normalize(t, p: float) -> np.ndarray:
    """Raise every probability to ``p`` and renormalize."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    t = np.asarray(t, dtype=np.float64)
    if p == 1:
        return t.copy()
    with np.errstate(divide="ignore"):
        logt = np.log(t)
    scaled = p * logt
    scaled -= scaled.max(axis=-1, keepdims=True)
    e = np.exp(scaled)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(target, pred) -> float | np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    return -(target * np.log(np.maximum(pred, LOG_FLOOR))).sum(axis=-1)


def entropy(d) -> float | np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    safe = np.where(d > 0, d, 1.0)
    return -(d * np.log(safe)).sum(axis=-1)


def kl_divergence(t, s) -> float | np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    safe_t = np.where(t > 0, t, 1.0)
    terms = t * (np.log(safe_t) - np.log(np.maximum(s, LOG_FLOOR)))
    return np.maximum(terms.sum(axis=-1), 0.0)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros(labels.shape + (num_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def _check_one_hot(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    ok = np.all((y == 0) | (y == 1), axis=-1) & (y.sum(axis=-1) == 1)
    if not np.all(ok):
        raise ValueError("y must be one-hot")
    return y


def blended_target(y, t, alpha: float) -> np.ndarray:
    """Convex mix ``(1 - alpha) y + alpha t`` of the label and teacher vectors."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    y = _check_one_hot(y)
    t = np.asarray(t, dtype=np.float64)
    if alpha == 0:
        return y.copy()
    if alpha == 1:
        return t.copy()
    return (1.0 - alpha) * y + alpha * t


def _teacher_log_dist(teacher_z, cfg: DistillConfig) -> np.ndarray:
    # power normalization with p is softmax at tau / p, evaluated in log space
    return log_softmax(_as_logits(teacher_z) / cfg.teacher_tau)


def _distill_term(y, teacher_z, student_z, cfg: DistillConfig):
    """Return ``tau^2 * KL(target, s^tau)`` and its gradient w.r.t. student_z.

    With the blended target form the teacher vector is first mixed with the
    label, ``target = (1 - alpha) y + alpha t^tau``.
    """
    tau = cfg.tau
    log_t = _teacher_log_dist(teacher_z, cfg)
    t = np.exp(log_t)
    log_s = log_softmax(student_z / tau)
    if cfg.target_form is TargetForm.BLENDED_TTILDE:
        target = blended_target(y, t, cfg.alpha)
        safe = np.where(target > 0, target, 1.0)
        log_target = np.log(safe)
    else:
        target = t
        log_target = log_t
    kl = (target * (log_target - log_s)).sum(axis=-1)
    grad = tau * (np.exp(log_s) - target)
    return tau * tau * kl, grad


def ce_loss(y, student_z) -> LossValue:
    """Cross entropy of the plain softmax against a (possibly soft) target."""
    y = np.asarray(y, dtype=np.float64)
    log_s = log_softmax(student_z)
    return LossValue(-(y * log_s).sum(axis=-1), np.exp(log_s) * y.sum(axis=-1, keepdims=True) - y)


def bsce_loss(y, student_z, counts) -> LossValue:
    """Cross entropy against the balanced softmax of the student logits."""
    z = _as_logits(student_z)
    counts = _as_counts(counts, z.shape[-1])
    return ce_loss(y, z + _log_prior(counts))


def kd_loss(y, teacher_z, student_z, cfg: DistillConfig) -> LossValue:
    """Classic distillation objective with a plain-softmax supervised term.

    ``(1 - a) CE(y, softmax(z_s)) + a tau^2 KL(t^tau, s^tau)``. With the
    blended target form the second term is ``tau^2 (CE(t~, s^tau) - a H(t^tau))``
    instead, which coincides with the classic form at tau = 1.
    """
    y = _check_one_hot(y)
    student_z = _as_logits(student_z)
    a = cfg.alpha
    if cfg.target_form is TargetForm.BLENDED_TTILDE:
        tau = cfg.tau
        t = np.exp(_teacher_log_dist(teacher_z, cfg))
        target = blended_target(y, t, a)
        log_s = log_softmax(student_z / tau)
        value = tau * tau * (-(target * log_s).sum(axis=-1) - a * entropy(t))
        return LossValue(value, tau * (np.exp(log_s) - target))
    sup = ce_loss(y, student_z)
    value = (1.0 - a) * sup.value
    grad = (1.0 - a) * sup.grad_logits
    if a > 0:
        dist, dgrad = _distill_term(y, teacher_z, student_z, cfg)
        value = value + a * dist
        grad = grad + a * dgrad
    return LossValue(value, grad)


def dive_loss(y, teacher_z, student_z, counts, cfg: DistillConfig) -> LossValue:
    """``(1 - a) CE(y, s_bsce) + a tau^2 KL(t^tau, s^tau)``.

    Only the teacher side sees power normalization; the student side of the
    KL term is a plain temperature softmax without count reweighting. When
    ``cfg.bsce_term`` is off the distillation term is used alone, unweighted.
    """
    y = _check_one_hot(y)
    student_z = _as_logits(student_z)
    a = cfg.alpha
    if not cfg.bsce_term:
        value, grad = _distill_term(y, teacher_z, student_z, cfg)
        return LossValue(value, grad)
    sup = bsce_loss(y, student_z, counts)
    value = (1.0 - a) * sup.value
    grad = (1.0 - a) * sup.grad_logits
    if a > 0:
        dist, dgrad = _distill_term(y, teacher_z, student_z, cfg)
        value = value + a * dist
        grad = grad + a * dgrad
    return LossValue(value, grad)
