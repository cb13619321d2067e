"""Segment embedders over PCEN grams.

All embedders start from per-segment pooled statistics: the segment window
(optionally extended by context frames on both sides) is split into equal
sub-windows, and each sub-window contributes the per-band mean and standard
deviation. Three kinds build on that:

  pooled     fixed random projection of the statistics
  trainable  tanh layer trained with a linear head on labeled segments
  external   embeddings precomputed elsewhere, loaded from file

Embeddings are L2-normalized before any distance computation; rows with
vanishing norm fall back to the first basis vector.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    CorruptHeader,
    DimensionMismatch,
    NonFiniteValue,
    RowCountMismatch,
    SingleClassCorpus,
)
from .episodes import SegmentGrid
from .frontend import PcenGram
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass(eq=False)
class EmbedderSpec:
    kind: str = "pooled"
    dim: int = 64
    seed: int = 0
    subwindows: int = 1
    context: float = 0.0
    path: str | None = None
    params: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("pooled", "trainable", "external"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if self.subwindows < 1:
            raise ValueError("subwindows must be positive")
        if self.context < 0.0:
            raise ValueError("context must be nonnegative")
        if self.kind == "external" and not self.path:
            raise ValueError("external embedder requires a path")


def default_student_spec() -> EmbedderSpec:
    return EmbedderSpec(kind="pooled", dim=64, seed=0, subwindows=4)


def default_teacher_spec() -> EmbedderSpec:
    return EmbedderSpec(kind="pooled", dim=64, seed=1, subwindows=1, context=0.5)


def specs_equal(a: EmbedderSpec, b: EmbedderSpec) -> bool:
    if (a.kind, a.dim, a.seed, a.subwindows, a.context, a.path) != (
        b.kind,
        b.dim,
        b.seed,
        b.subwindows,
        b.context,
        b.path,
    ):
        return False
    pa, pb = a.params or {}, b.params or {}
    if set(pa) != set(pb):
        return False
    return all(np.array_equal(pa[k], pb[k]) for k in pa)


def segment_stats(gram: PcenGram, grid: SegmentGrid, subwindows: int = 1, context: float = 0.0) -> np.ndarray:
    """Pooled statistics per segment, shape (n_segments, subwindows * 2 * n_mels).

    The pooling window is the segment extended by round(context * seg_len)
    frames on each side, clipped to the gram; the window splits into
    subwindows chunks, each contributing its per-band mean and standard
    deviation. A degenerate segment longer than the gram (short-span grids)
    keeps its nominal length with zero rows past the end, so feature size
    never varies.
    """
    vals = gram.values
    n, n_mels = vals.shape
    seg_len = grid.seg_len
    ctx = int(round(context * seg_len))
    feats = np.empty((len(grid), subwindows * 2 * n_mels))
    for i, s in enumerate(grid.starts):
        core = vals[s : s + seg_len]
        if len(core) < seg_len:  # only the single padded segment of a short span
            core = np.vstack([core, np.zeros((seg_len - len(core), n_mels))])
        pieces = [vals[max(0, s - ctx) : s], core, vals[s + seg_len : s + seg_len + ctx]]
        window = np.vstack([p for p in pieces if len(p)])
        parts = []
        for chunk in np.array_split(window, subwindows):
            if len(chunk):
                parts.append(chunk.mean(axis=0))
                parts.append(chunk.std(axis=0))
            else:
                parts.append(np.zeros(n_mels))
                parts.append(np.zeros(n_mels))
        feats[i] = np.concatenate(parts)
    return feats


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization; near-zero rows map to the first basis vector."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    degenerate = norms < 1e-12
    if degenerate.any():
        log.warning("%d embedding rows had vanishing norm", int(degenerate.sum()))
    out = x / np.maximum(norms, 1e-12)[:, None]
    out[degenerate] = 0.0
    out[degenerate, 0] = 1.0
    return out


def _projection(in_dim: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((in_dim, dim)) / np.sqrt(in_dim)


def _init_layer(in_dim: int, dim: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 0])
    return {
        "weight": rng.standard_normal((dim, in_dim)) / np.sqrt(in_dim),
        "bias": np.zeros(dim),
    }


def _init_head(dim: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 1])
    return {
        "head_weight": rng.standard_normal((2, dim)) / np.sqrt(dim),
        "head_bias": np.zeros(2),
    }


def _layer_forward(params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    return np.tanh(x @ params["weight"].T + params["bias"])


def embed(spec: EmbedderSpec, gram: PcenGram, grid: SegmentGrid, role: str = "") -> np.ndarray:
    """Raw (unnormalized) embeddings for every segment in the grid."""
    if spec.kind == "external":
        path = spec.path.format(role=role) if "{role}" in spec.path else spec.path
        emb = import_external_embeddings(path, expected_rows=len(grid), expected_dim=spec.dim)
        return emb
    stats = segment_stats(gram, grid, spec.subwindows, spec.context)
    if spec.kind == "pooled":
        return stats @ _projection(stats.shape[1], spec.dim, spec.seed)
    params = spec.params if spec.params is not None else _init_layer(stats.shape[1], spec.dim, spec.seed)
    if params["weight"].shape[1] != stats.shape[1]:
        raise DimensionMismatch(
            f"trained layer expects {params['weight'].shape[1]} features, stats have {stats.shape[1]}"
        )
    return _layer_forward(params, stats)


@dataclass
class LabeledFeatures:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.ndim != 1 or len(self.x) != len(self.y):
            raise DimensionMismatch("features and labels disagree in shape")


def ce_forward_backward(params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy of the tanh layer + linear head, with gradients.

    Returns (loss, grads) with grads keyed like params.
    """
    h = _layer_forward(params, x)
    logits = h @ params["head_weight"].T + params["head_bias"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(shifted)
    probs = expl / expl.sum(axis=1, keepdims=True)
    n = len(x)
    loss = -np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300)))
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    dh = dlogits @ params["head_weight"]
    dpre = dh * (1.0 - h**2)  # tanh'
    grads = {
        "head_weight": dlogits.T @ h,
        "head_bias": dlogits.sum(axis=0),
        "weight": dpre.T @ x,
        "bias": dpre.sum(axis=0),
    }
    return loss, grads


def pretrain_embedder(
    data: LabeledFeatures,
    spec: EmbedderSpec,
    epochs: int = 10,
    lr: float = 1e-4,
    batch_size: int = 32,
    seed: int = 0,
) -> tuple[EmbedderSpec, list[float]]:
    """Train a trainable embedder on labeled segment features.

    Minimizes cross-entropy of a two-class linear head on top of the tanh
    layer; the head itself is not kept in the returned spec. Returns the
    trained spec and the mean loss per epoch.
    """
    if spec.kind != "trainable":
        raise ValueError("only trainable embedders can be pretrained")
    if epochs == 0 or lr == 0.0:
        return spec, []
    classes = np.unique(data.y)
    if len(classes) < 2:
        raise SingleClassCorpus(f"pretraining needs both classes, got {classes.tolist()}")
    in_dim = data.x.shape[1]
    params = dict(spec.params) if spec.params is not None else _init_layer(in_dim, spec.dim, spec.seed)
    params.update(_init_head(spec.dim, spec.seed))
    opt = Adam(lr=lr)
    losses = []
    n = len(data.x)
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(n)
        batch_losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            loss, grads = ce_forward_backward(params, data.x[idx], data.y[idx])
            params = opt.step(params, grads)
            batch_losses.append(loss)
        losses.append(float(np.mean(batch_losses)))
    trained = {"weight": params["weight"], "bias": params["bias"]}
    return replace(spec, params=trained), losses


def finetune_on_support(
    spec: EmbedderSpec,
    feats: np.ndarray,
    labels: np.ndarray,
    steps: int = 20,
    lr: float = 1e-5,
    seed: int = 0,
) -> EmbedderSpec:
    """Adapt a trainable embedder to one episode's labeled support segments.

    Full-batch cross-entropy steps with a fresh head. Non-trainable kinds are
    returned unchanged with a notice, so pipelines can request fine-tuning
    unconditionally.
    """
    if spec.kind != "trainable":
        log.info("finetune skipped for %s embedder", spec.kind)
        return spec
    if steps == 0 or lr == 0.0:
        return spec
    y = np.asarray(labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        log.info("finetune skipped: support has a single class")
        return spec
    x = np.asarray(feats, dtype=np.float64)
    params = dict(spec.params) if spec.params is not None else _init_layer(x.shape[1], spec.dim, spec.seed)
    params.update(_init_head(spec.dim, spec.seed))
    opt = Adam(lr=lr)
    for _ in range(steps):
        _, grads = ce_forward_backward(params, x, y)
        params = opt.step(params, grads)
    return replace(spec, params={"weight": params["weight"], "bias": params["bias"]})


_EMB_MAGIC = b"EMBD"


def export_embeddings(path, emb: np.ndarray) -> None:
    """Write embeddings as CSV (.csv suffix) or the binary row-major format."""
    emb = np.asarray(emb, dtype=np.float64)
    path = Path(path)
    if path.suffix.lower() == ".csv":
        np.savetxt(path, emb, delimiter=",", fmt="%.10g")
        return
    rows, dim = emb.shape
    payload = struct.pack("<4sII", _EMB_MAGIC, rows, dim)
    payload += np.ascontiguousarray(emb, dtype="<f4").tobytes()
    path.write_bytes(payload)


def import_external_embeddings(path, expected_rows: int | None = None, expected_dim: int | None = None) -> np.ndarray:
    """Load embeddings from CSV or the binary format, with shape checks."""
    path = Path(path)
    head = path.read_bytes()[:4] if path.exists() else b""
    if head == _EMB_MAGIC:
        data = path.read_bytes()
        if len(data) < 12:
            raise CorruptHeader(f"{path}: truncated embedding header")
        rows, dim = struct.unpack_from("<II", data, 4)
        vals = np.frombuffer(data, dtype="<f4", offset=12)
        if vals.size != rows * dim:
            raise CorruptHeader(f"{path}: payload does not match declared shape")
        emb = vals.reshape(rows, dim).astype(np.float64)
    else:
        emb = np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))
    if expected_rows is not None and emb.shape[0] != expected_rows:
        raise RowCountMismatch(f"{path}: {emb.shape[0]} rows, expected {expected_rows}")
    if expected_dim is not None and emb.shape[1] != expected_dim:
        raise DimensionMismatch(f"{path}: dimension {emb.shape[1]}, expected {expected_dim}")
    if not np.isfinite(emb).all():
        raise NonFiniteValue(f"{path}: embeddings contain NaN or Inf")
    return emb
