"""Exemplar memory: k-means selection, prototypes, deviations, pseudo samples.

Exemplar selection clusters a relation's hidden vectors with k-means and
keeps, per cluster, the sample closest to the centroid.  The prototype of a
relation is the mean hidden vector of its stored exemplars (recomputed with
the current encoder every task); the per-dimension deviation is the
population standard deviation over ALL of the relation's training hiddens,
computed once when the relation first appears and floored elementwise.
Pseudo samples are prototype + noise * deviation draws used as mining
targets for the triplet loss.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Sample

DEVIATION_FLOOR = 1e-4
KMEANS_MAX_ITERS = 100


# -- k-means ------------------------------------------------------------


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding.  Draw pattern (relied on by tests): the first
    center is x[rng.integers(n)]; each later center consumes one
    rng.random() and lands on the first point whose cumulative squared
    distance mass exceeds r * total (or rng.integers(n) if total is 0)."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[int(rng.integers(n))]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = min(int(np.searchsorted(np.cumsum(d2), r, side="right")), n - 1)
        centers[c] = x[idx]
        d2 = np.minimum(d2, ((x - centers[c]) ** 2).sum(axis=1))
    return centers


def kmeans(x: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding.

    Returns (centroids (k, d), assignment (n,)).  Iterates to
    assignment-stability or 100 rounds.  Ties in assignment go to the
    lowest cluster index.  An empty cluster steals the point farthest from
    its centroid inside the largest cluster (lowest index on ties).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    centers = _kmeans_pp_init(x, k, rng)
    assign = np.full(n, -1)
    for _ in range(KMEANS_MAX_ITERS):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        counts = np.bincount(new_assign, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            donor = int(np.argmax(counts))
            members = np.flatnonzero(new_assign == donor)
            far = members[int(np.argmax(d2[members, donor]))]
            new_assign[far] = empty
            counts = np.bincount(new_assign, minlength=k)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            centers[c] = x[assign == c].mean(axis=0)
    return centers, assign


def select_typical(samples: list[Sample], hiddens: np.ndarray, memory_size: int,
                   rng: np.random.Generator) -> list[int]:
    """Pick min(memory_size, |samples|) exemplar ids: k-means clusters of the
    hidden vectors, then the sample closest to each centroid (ties by lowest
    sample id).  Returned ids are sorted ascending."""
    if len(samples) != hiddens.shape[0]:
        raise ValueError("samples and hiddens disagree in length")
    if not samples:
        raise ValueError("cannot select exemplars from an empty relation")
    k = min(memory_size, len(samples))
    if k < 1:
        raise ValueError("memory_size must be >= 1")
    centers, assign = kmeans(hiddens, k, rng)
    ids = np.array([s.id for s in samples])
    chosen: list[int] = []
    for c in range(k):
        members = np.flatnonzero(assign == c)
        d2 = ((hiddens[members] - centers[c]) ** 2).sum(axis=1)
        order = sorted(zip(d2, ids[members]))
        chosen.append(int(order[0][1]))
    return sorted(chosen)


# -- prototypes, deviations, pseudo samples ------------------------------


def compute_prototype(hiddens: np.ndarray) -> np.ndarray:
    """Mean hidden vector over a relation's exemplars."""
    hiddens = np.asarray(hiddens, dtype=np.float64)
    if hiddens.ndim != 2 or hiddens.shape[0] == 0:
        raise ValueError("prototype needs a non-empty (n, d) matrix")
    return hiddens.mean(axis=0)


def compute_deviation(hiddens: np.ndarray, floor: float = DEVIATION_FLOOR) -> np.ndarray:
    """Per-dimension population standard deviation, floored at `floor`."""
    hiddens = np.asarray(hiddens, dtype=np.float64)
    if hiddens.ndim != 2 or hiddens.shape[0] == 0:
        raise ValueError("deviation needs a non-empty (n, d) matrix")
    return np.maximum(hiddens.std(axis=0), floor)


@dataclass(frozen=True, eq=False)
class PseudoSample:
    relation: str
    vector: np.ndarray


def generate_pseudo(prototype: np.ndarray, deviation: np.ndarray, relation: str,
                    count: int, rng: np.random.Generator) -> list[PseudoSample]:
    """count draws of prototype + eta * deviation with eta ~ N(0, I)."""
    if count < 0:
        raise ValueError("count must be >= 0")
    out = []
    for _ in range(count):
        eta = rng.standard_normal(prototype.shape)
        out.append(PseudoSample(relation=relation, vector=prototype + eta * deviation))
    return out


# -- memory store ---------------------------------------------------------


@dataclass
class RelationStats:
    relation: str
    first_task: int
    exemplar_ids: tuple[int, ...]
    deviation: np.ndarray
    prototype: np.ndarray | None = None


@dataclass
class MemoryStore:
    """Exemplars and per-relation statistics accumulated across tasks."""

    stats: dict[str, RelationStats] = field(default_factory=dict)
    _samples: dict[int, Sample] = field(default_factory=dict)

    def add_relation(self, relation: str, first_task: int, exemplars: list[Sample],
                     deviation: np.ndarray) -> None:
        if relation in self.stats:
            raise ValueError(f"relation {relation!r} already stored")
        if not exemplars:
            raise ValueError(f"relation {relation!r} needs at least one exemplar")
        self.stats[relation] = RelationStats(
            relation=relation, first_task=first_task,
            exemplar_ids=tuple(s.id for s in exemplars),
            deviation=np.asarray(deviation, dtype=np.float64))
        for s in exemplars:
            self._samples[s.id] = s

    def set_prototype(self, relation: str, prototype: np.ndarray) -> None:
        self.stats[relation].prototype = np.asarray(prototype, dtype=np.float64)

    def relations(self) -> list[str]:
        """Stored relations in order of first appearance (then name)."""
        return [s.relation for s in sorted(self.stats.values(),
                                           key=lambda st: (st.first_task, st.relation))]

    def exemplar_samples(self, relation: str) -> list[Sample]:
        return [self._samples[i] for i in self.stats[relation].exemplar_ids]

    def all_samples(self) -> list[Sample]:
        out: list[Sample] = []
        for r in self.relations():
            out.extend(self.exemplar_samples(r))
        return out

    def total_exemplars(self) -> int:
        return sum(len(st.exemplar_ids) for st in self.stats.values())

    def dump_csv(self, path: str | Path) -> None:
        """Diagnostic dump: one row per relation with exemplar ids,
        prototype and deviation vectors."""
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["relation", "first_task", "exemplar_ids", "prototype", "deviation"])
            for r in self.relations():
                st = self.stats[r]
                proto = "" if st.prototype is None else " ".join(f"{v:.17g}" for v in st.prototype)
                dev = " ".join(f"{v:.17g}" for v in st.deviation)
                writer.writerow([r, st.first_task, " ".join(map(str, st.exemplar_ids)), proto, dev])
