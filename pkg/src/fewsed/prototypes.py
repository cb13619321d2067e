"""Two-class prototype classifier and query-side negative selection.

Prototypes are plain means of L2-normalized embeddings (the mean itself is
not re-normalized). Class probabilities are a softmax over negated Euclidean
distances to the two prototypes, so the nearer prototype wins.

Negative selection rebuilds the negative prototype from query segments that
sit far from the positive prototype: a segment qualifies when it is farther
from the positive prototype than the two prototypes are from each other, and
its margin toward the negative side exceeds half that distance. The classifier
provenance tags W0 (initial), W1 (after support fine-tuning), W2 (after
negative selection), and adapted name the stages of that chain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyClass, QueryTooSmall


@dataclass
class ClassifierWeights:
    positive: np.ndarray
    negative: np.ndarray
    provenance: str = "W0"

    def __post_init__(self):
        self.positive = np.asarray(self.positive, dtype=np.float64)
        self.negative = np.asarray(self.negative, dtype=np.float64)
        if self.positive.shape != self.negative.shape or self.positive.ndim != 1:
            raise ValueError("prototypes must be two vectors of equal length")

    @property
    def stacked(self) -> np.ndarray:
        return np.stack([self.positive, self.negative])


def build_prototypes(pos_emb: np.ndarray, neg_emb: np.ndarray, provenance: str = "W0") -> ClassifierWeights:
    pos_emb = np.asarray(pos_emb, dtype=np.float64)
    neg_emb = np.asarray(neg_emb, dtype=np.float64)
    if len(pos_emb) == 0:
        raise EmptyClass("no positive embeddings to average")
    if len(neg_emb) == 0:
        raise EmptyClass("no negative embeddings to average")
    return ClassifierWeights(pos_emb.mean(axis=0), neg_emb.mean(axis=0), provenance)


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances between rows of a and rows of b, shape (len(a), len(b))."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


def predict_probs(weights: ClassifierWeights, emb: np.ndarray) -> np.ndarray:
    """Softmax over negated distances; column 0 is the positive class."""
    d = pairwise_distances(emb, weights.stacked)
    logits = -d
    shifted = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    return expl / expl.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class SelectionResult:
    selected: tuple[int, ...]
    candidate_count: int
    lower: int
    upper: int


def select_negatives(
    weights: ClassifierWeights,
    query_emb: np.ndarray,
    n_positive: int,
    n_negative: int,
    min_selected: int = 5,
) -> SelectionResult:
    """Pick query segments to rebuild the negative prototype from.

    A candidate must be farther from the positive prototype than the
    prototype gap, with margin (distance to positive minus distance to
    negative) above half the gap. The count is kept between min_selected and
    max(min_selected, n_positive - n_negative + min_selected): surplus
    candidates are trimmed keeping the largest margins, deficits are filled
    with the best-margined non-candidates. Ties break toward lower index.
    """
    if min(n_positive, n_negative, min_selected) < 1:
        raise ValueError("counts must be positive")
    query_emb = np.asarray(query_emb, dtype=np.float64)
    n = len(query_emb)
    if n < min_selected:
        raise QueryTooSmall(f"{n} query segments < {min_selected} required for selection")
    d = pairwise_distances(query_emb, weights.stacked)
    d1, d2 = d[:, 0], d[:, 1]
    gap = float(np.linalg.norm(weights.positive - weights.negative))
    margin = d1 - d2
    is_candidate = (d1 > gap) & (margin > gap / 2.0)
    lower = min_selected
    upper = max(min_selected, n_positive - n_negative + min_selected)

    order = sorted(range(n), key=lambda j: (-margin[j], j))
    candidates = [j for j in order if is_candidate[j]]
    chosen = candidates[:upper] if len(candidates) > upper else list(candidates)
    if len(chosen) < lower:
        fill = [j for j in order if not is_candidate[j]]
        chosen.extend(fill[: lower - len(chosen)])
    return SelectionResult(tuple(sorted(chosen)), len(candidates), lower, upper)


def rebuild_classifier(
    pos_emb: np.ndarray,
    neg_support_emb: np.ndarray,
    neg_selected_emb: np.ndarray,
) -> ClassifierWeights:
    """Classifier whose negative prototype averages support plus selected rows.

    An empty selected matrix reproduces the previous weights exactly (the
    disabled-selection case).
    """
    neg_selected_emb = np.asarray(neg_selected_emb, dtype=np.float64)
    if len(neg_selected_emb):
        combined = np.vstack([neg_support_emb, neg_selected_emb])
    else:
        combined = neg_support_emb
    return build_prototypes(pos_emb, combined, provenance="W2")


def save_classifier(path, weights: ClassifierWeights) -> None:
    doc = {
        "provenance": weights.provenance,
        "d": int(len(weights.positive)),
        "w1": weights.positive.tolist(),
        "w2": weights.negative.tolist(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_classifier(path) -> ClassifierWeights:
    doc = json.loads(Path(path).read_text())
    w = ClassifierWeights(np.array(doc["w1"]), np.array(doc["w2"]), doc["provenance"])
    if len(w.positive) != doc["d"]:
        raise ValueError(f"{path}: d field disagrees with vector length")
    return w
