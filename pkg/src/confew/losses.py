"""Training objectives: classification, feature/representation distillation,
triplet mining with margin loss over mined targets, and softened prediction
distillation, plus the weighted combinations.

Teacher-side quantities arrive as plain numpy arrays (constants); only the
student side carries gradients.  Cosine terms unit-normalize both operands
with a 1e-12 norm floor, so each term lies in [0, 2].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, MiningError

NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights: dst = alpha*fd + beta*(rd_scale*rd + dtr_scale*dtr)
    + gamma*pd; total = lambda1*csf + lambda2*dst.  The two scale knobs
    exist so ablations can zero one component of the hidden term without
    touching the code path."""

    alpha: float = 0.5
    beta: float = 1.0
    gamma: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 1.0
    temperature: float = 0.08
    rd_scale: float = 1.0
    dtr_scale: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ConfigError("temperature must be positive")


@dataclass(frozen=True, eq=False)
class TripletTargets:
    """Mined constants for one sample: farthest same-relation vector and
    nearest different-relation vector."""

    z_plus: np.ndarray
    z_minus: np.ndarray


def _as_constant(x) -> np.ndarray:
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return data


# The norm floor enters as NORM_FLOOR**2 inside the sqrt: a zero row gets an
# effective norm of exactly 1e-12 with a finite sqrt gradient, while any
# realistic magnitude leaves the float64 bits untouched (1e-24 is far below
# one ulp of the squared norms seen in practice).


def _normalize_rows_np(a: np.ndarray) -> np.ndarray:
    norms = np.sqrt((a * a).sum(axis=1, keepdims=True) + NORM_FLOOR ** 2)
    return a / norms


def _normalize_rows(t: Tensor) -> Tensor:
    norms = ad.sqrt((t * t).sum(axis=1, keepdims=True) + NORM_FLOOR ** 2)
    return t / norms


def classification_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer labels,
    computed in log space so zero probabilities cannot occur."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError("logits must be (B, R) with one label per row")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label outside classifier range")
    true = ad.gather_positions(logits, labels)
    return (ad.logsumexp(logits, axis=1) - true).mean()


def _cosine_distance_mean(prev: np.ndarray, cur: Tensor) -> Tensor:
    prev = _normalize_rows_np(_as_constant(prev))
    if prev.shape != cur.shape:
        raise ValueError(f"teacher/student shapes differ: {prev.shape} vs {cur.shape}")
    cur = _normalize_rows(cur)
    return (1.0 - (cur * prev).sum(axis=1)).mean()


def feature_distill_loss(features_prev, features_cur: Tensor) -> Tensor:
    """Mean cosine distance between teacher and student sentence features."""
    return _cosine_distance_mean(features_prev, features_cur)


def representation_distill_loss(hidden_prev, hidden_cur: Tensor) -> Tensor:
    """Mean cosine distance between teacher and student hidden vectors."""
    return _cosine_distance_mean(hidden_prev, hidden_cur)


# -- triplet mining ------------------------------------------------------


def mine_triplet(anchor: np.ndarray, relation: str,
                 pool: list[tuple[np.ndarray, str]]) -> TripletTargets:
    """Mine targets for one anchor (its teacher hidden vector).

    z_plus is the pool vector of the same relation FARTHEST from the anchor;
    z_minus the different-relation vector NEAREST to it.  Euclidean
    distances; ties break to the lowest pool index.  Raises MiningError when
    either side is empty.
    """
    anchor = _as_constant(anchor)
    best_plus = best_minus = None
    d_plus, d_minus = -np.inf, np.inf
    for vec, rel in pool:
        d = float(np.sqrt(((_as_constant(vec) - anchor) ** 2).sum()))
        if rel == relation:
            if d > d_plus:
                d_plus, best_plus = d, vec
        elif d < d_minus:
            d_minus, best_minus = d, vec
    if best_plus is None:
        raise MiningError(f"no same-relation pool entry for {relation!r}")
    if best_minus is None:
        raise MiningError(f"no different-relation pool entry for {relation!r}")
    return TripletTargets(z_plus=_as_constant(best_plus), z_minus=_as_constant(best_minus))


def mine_triplets_batch(anchors: np.ndarray, relations: list[str],
                        pool_vectors: np.ndarray, pool_relations: list[str]
                        ) -> list[TripletTargets | None]:
    """Vectorized mine_triplet over a batch; None where a side is missing."""
    anchors = _as_constant(anchors)
    pool_vectors = _as_constant(pool_vectors)
    if pool_vectors.shape[0] == 0:
        return [None] * anchors.shape[0]
    pool_rel = np.asarray(pool_relations)
    d = np.sqrt(((anchors[:, None, :] - pool_vectors[None, :, :]) ** 2).sum(axis=2))
    out: list[TripletTargets | None] = []
    for i, rel in enumerate(relations):
        same = pool_rel == rel
        if not same.any() or same.all():
            out.append(None)
            continue
        row = d[i]
        plus = int(np.argmax(np.where(same, row, -np.inf)))
        minus = int(np.argmin(np.where(same, np.inf, row)))
        out.append(TripletTargets(z_plus=pool_vectors[plus], z_minus=pool_vectors[minus]))
    return out


def distillation_triplet_loss(hidden_cur: Tensor,
                              targets: list[TripletTargets | None]) -> Tensor:
    """Mean over the whole batch of max(0, ||h - z+|| - ||h - z-||); samples
    without targets contribute zero (but still count in the mean)."""
    n = hidden_cur.shape[0]
    if len(targets) != n:
        raise ValueError("one TripletTargets (or None) required per row")
    live = [i for i, t in enumerate(targets) if t is not None]
    if not live:
        return Tensor(0.0)
    h = ad.take_rows(hidden_cur, np.array(live))
    z_plus = np.stack([targets[i].z_plus for i in live])
    z_minus = np.stack([targets[i].z_minus for i in live])
    # same trick as the norm floor: the 1e-24 inside the sqrt keeps the
    # gradient finite when a distance is exactly zero and is invisible
    # otherwise
    dp = ad.sqrt(((h - z_plus) * (h - z_plus)).sum(axis=1) + NORM_FLOOR ** 2)
    dm = ad.sqrt(((h - z_minus) * (h - z_minus)).sum(axis=1) + NORM_FLOOR ** 2)
    return ad.relu(dp - dm).sum() * (1.0 / n)


def hidden_contrastive_loss(rd: Tensor, dtr: Tensor, weights: LossWeights | None = None) -> Tensor:
    """Hidden-space distillation term: scaled sum of rd and dtr."""
    w = weights or LossWeights()
    return rd * w.rd_scale + dtr * w.dtr_scale


def prediction_distill_loss(logits_prev, logits_cur: Tensor, temperature: float) -> Tensor:
    """Softened cross-entropy between teacher and student distributions over
    the teacher's relations (the first |R_prev| student logits)."""
    if temperature <= 0.0:
        raise ConfigError("temperature must be positive")
    prev = _as_constant(logits_prev)
    if prev.ndim != 2 or logits_cur.ndim != 2:
        raise ValueError("logit matrices must be 2-D")
    p = prev.shape[1]
    if logits_cur.shape[1] < p or prev.shape[0] != logits_cur.shape[0]:
        raise ValueError("student logits must cover the teacher's relations")
    if p == 0:
        raise ValueError("teacher logits are empty")
    scaled_prev = prev / temperature
    scaled_prev -= scaled_prev.max(axis=1, keepdims=True)
    e = np.exp(scaled_prev)
    c_prev = e / e.sum(axis=1, keepdims=True)
    cur = logits_cur[:, :p] * (1.0 / temperature)
    log_c_cur = cur - ad.logsumexp(cur, axis=1, keepdims=True)
    return -((log_c_cur * c_prev).sum(axis=1)).mean()


def total_distillation_loss(fd: Tensor, hcd: Tensor, pd: Tensor,
                            weights: LossWeights) -> Tensor:
    return fd * weights.alpha + hcd * weights.beta + pd * weights.gamma


def final_loss(csf: Tensor, dst: Tensor, weights: LossWeights) -> Tensor:
    return csf * weights.lambda1 + dst * weights.lambda2
