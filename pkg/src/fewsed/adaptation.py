"""Teacher-student adaptation of the prototype classifier.

A frozen teacher provides per-segment class probabilities over the query
region. The student's prototypes are then updated to minimize

    (seg_len / duration_norm) * (KL(student || teacher) - mi_weight * MI)

where KL is summed over segments and classes, and MI is the mutual
information between the segment index and the student's predicted class
(entropy of the mean prediction minus mean per-segment entropy). Lowering KL
pulls the student toward the teacher; raising MI keeps predictions confident
and balanced instead of collapsing onto one class.

Probabilities are clamped to [1e-12, 1] inside logarithms only; the raw
values multiply the logs, so 0 * log 0 contributes nothing. Gradients flow
through the student's prototypes alone, and an update is taken only while
the student and teacher disagree on at least one segment's class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyMatrix, ShapeMismatch
from .optim import Adam
from .prototypes import ClassifierWeights, pairwise_distances, predict_probs

_CLAMP_LO = 1e-12
_CLAMP_HI = 1.0


@dataclass(frozen=True)
class AdaptiveConfig:
    mi_weight: float = 0.5
    duration_norm: float = 150.0
    lr: float = 1e-5
    max_steps: int = 20
    loss_scope: str = "full"

    def __post_init__(self):
        if self.duration_norm <= 0.0:
            raise ValueError("duration_norm must be positive")
        if self.loss_scope not in ("full", "disagreement"):
            raise ValueError(f"loss_scope must be 'full' or 'disagreement', got {self.loss_scope!r}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")


def _clipped_log(x: np.ndarray) -> np.ndarray:
    return np.log(np.clip(x, _CLAMP_LO, _CLAMP_HI))


def _inside_clamp(x: np.ndarray) -> np.ndarray:
    return ((x > _CLAMP_LO) & (x < _CLAMP_HI)).astype(np.float64)


def kl_divergence_sum(p_student: np.ndarray, p_teacher: np.ndarray) -> float:
    """Sum over segments and classes of p_st * log(p_st / p_te)."""
    p = np.asarray(p_student, dtype=np.float64)
    q = np.asarray(p_teacher, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeMismatch(f"student {p.shape} vs teacher {q.shape}")
    if p.size == 0:
        raise EmptyMatrix("no probability rows")
    return float(np.sum(p * (_clipped_log(p) - _clipped_log(q))))


def mutual_information_terms(p: np.ndarray) -> tuple[float, float, float]:
    """(marginal entropy, conditional entropy, mutual information).

    The marginal is the column mean over segments; mutual information is the
    difference of the two entropies.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise EmptyMatrix("no probability rows")
    marginal = p.mean(axis=0)
    h_marginal = float(-np.sum(marginal * _clipped_log(marginal)))
    h_conditional = float(-np.mean(np.sum(p * _clipped_log(p), axis=1)))
    return h_marginal, h_conditional, h_marginal - h_conditional


@dataclass(frozen=True)
class LossBreakdown:
    kl: float
    h_marginal: float
    h_conditional: float
    mutual_info: float
    weight: float
    total: float


def adaptive_loss(p_student: np.ndarray, p_teacher: np.ndarray, seg_len: int, cfg: AdaptiveConfig) -> LossBreakdown:
    kl = kl_divergence_sum(p_student, p_teacher)
    h_m, h_c, mi = mutual_information_terms(p_student)
    weight = seg_len / cfg.duration_norm
    total = weight * (kl - cfg.mi_weight * mi)
    return LossBreakdown(kl, h_m, h_c, mi, weight, total)


def student_loss_gradient(
    weights: ClassifierWeights,
    student_emb: np.ndarray,
    p_teacher: np.ndarray,
    seg_len: int,
    cfg: AdaptiveConfig,
) -> tuple[LossBreakdown, np.ndarray]:
    """Loss and its exact gradient with respect to the stacked prototypes.

    The gradient matches the implemented loss including its clamping: terms
    pinned at a clamp boundary contribute no derivative through the log.
    """
    z = np.asarray(student_emb, dtype=np.float64)
    q = np.asarray(p_teacher, dtype=np.float64)
    if z.size == 0:
        raise EmptyMatrix("no student embeddings")
    w = weights.stacked
    d = pairwise_distances(z, w)
    logits = -d
    shifted = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    p = expl / expl.sum(axis=1, keepdims=True)
    if p.shape != q.shape:
        raise ShapeMismatch(f"student {p.shape} vs teacher {q.shape}")

    breakdown = adaptive_loss(p, q, seg_len, cfg)
    n = len(p)
    lp = _clipped_log(p)
    inside_p = _inside_clamp(p)
    marginal = p.mean(axis=0)
    g_kl = (lp - _clipped_log(q)) + inside_p
    g_mi = (lp + inside_p - _clipped_log(marginal)[None, :] - _inside_clamp(marginal)[None, :]) / n
    g = g_kl - cfg.mi_weight * g_mi

    # softmax backward, then chain through l = -||z - w||
    dlogits = p * (g - np.sum(g * p, axis=1, keepdims=True))
    grad = np.zeros_like(w)
    for k in range(w.shape[0]):
        dk = d[:, k]
        safe = dk >= 1e-12
        coeff = np.where(safe, dlogits[:, k] / np.maximum(dk, 1e-12), 0.0)
        grad[k] = (coeff[:, None] * (z - w[k])).sum(axis=0)
    grad *= breakdown.weight
    return breakdown, grad


@dataclass(frozen=True)
class AdaptStep:
    step: int
    breakdown: LossBreakdown
    disagreements: int


def adapt_student(
    weights: ClassifierWeights,
    student_emb: np.ndarray,
    p_teacher: np.ndarray,
    seg_len: int,
    cfg: AdaptiveConfig,
) -> tuple[ClassifierWeights, list[AdaptStep]]:
    """Update the student's prototypes against frozen teacher predictions.

    Teacher class decisions are fixed up front; the loop stops as soon as
    the student agrees with all of them, or after max_steps updates. Each
    returned step records the loss evaluated just before that update.
    """
    q = np.asarray(p_teacher, dtype=np.float64)
    teacher_labels = q.argmax(axis=1)
    current = ClassifierWeights(weights.positive.copy(), weights.negative.copy(), "adapted")
    opt = Adam(lr=cfg.lr)
    steps: list[AdaptStep] = []
    for step in range(cfg.max_steps):
        p_st = predict_probs(current, student_emb)
        disagree = p_st.argmax(axis=1) != teacher_labels
        n_dis = int(disagree.sum())
        if n_dis == 0:
            break
        if cfg.loss_scope == "disagreement":
            rows = disagree
        else:
            rows = slice(None)
        breakdown, grad = student_loss_gradient(current, student_emb[rows], q[rows], seg_len, cfg)
        steps.append(AdaptStep(step, breakdown, n_dis))
        params = opt.step(
            {"positive": current.positive, "negative": current.negative},
            {"positive": grad[0], "negative": grad[1]},
        )
        current = ClassifierWeights(params["positive"], params["negative"], "adapted")
    return current, steps


def write_steps_jsonl(path, steps: list[AdaptStep]) -> None:
    """One JSON object per adaptation step, for offline inspection."""
    lines = []
    for s in steps:
        b = s.breakdown
        lines.append(
            json.dumps(
                {
                    "step": s.step,
                    "kl": b.kl,
                    "h_marginal": b.h_marginal,
                    "h_conditional": b.h_conditional,
                    "mutual_info": b.mutual_info,
                    "total": b.total,
                    "disagreements": s.disagreements,
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
