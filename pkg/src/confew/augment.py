"""Bidirectional data augmentation by swapping similar entity surfaces.

Every head/tail occurrence in the current training data and the memory is
embedded with the eval-mode encoder (the contextual representation at its
marker token).  For each unordered pair of occurrences whose surface token
sequences differ and whose cosine similarity strictly exceeds tau, both
directions produce a candidate: the host sentence with its entity span
replaced by the partner's surface.  Each original sample keeps at most
`cap` variants, chosen by highest similarity; variants inherit the host's
relation label and get fresh sample ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Sample
from .encoder import Model
from .errors import ConfigError

DEFAULT_CAP = 2


@dataclass(frozen=True, eq=False)
class EntityOccurrence:
    sample_id: int
    kind: str                      # "head" | "tail"
    surface: tuple[int, ...]       # tokens inside the span, no marker
    representation: np.ndarray     # (h,) marker representation, eval mode


def collect_entities(model: Model, samples: list[Sample]) -> list[EntityOccurrence]:
    """Two occurrences per sample (head then tail), batch eval forward."""
    if not samples:
        return []
    head, tail = model.entity_representations(samples)
    out: list[EntityOccurrence] = []
    for i, s in enumerate(samples):
        out.append(EntityOccurrence(s.id, "head", s.tokens[s.head_span[0]:s.head_span[1]],
                                    head.data[i]))
        out.append(EntityOccurrence(s.id, "tail", s.tokens[s.tail_span[0]:s.tail_span[1]],
                                    tail.data[i]))
    return out


def replace_entity(sample: Sample, kind: str, surface: tuple[int, ...], new_id: int) -> Sample:
    """Rebuild a sample with one entity span swapped for a new surface,
    re-indexing every position that sits behind the edit."""
    if kind not in ("head", "tail"):
        raise ValueError(f"unknown entity kind {kind!r}")
    span = sample.head_span if kind == "head" else sample.tail_span
    delta = len(surface) - (span[1] - span[0])
    tokens = sample.tokens[:span[0]] + tuple(surface) + sample.tokens[span[1]:]

    def shift(pos: int) -> int:
        return pos + delta if pos >= span[1] else pos

    def shift_span(sp: tuple[int, int]) -> tuple[int, int]:
        return (shift(sp[0]), shift(sp[1]))

    new = Sample(
        id=new_id,
        tokens=tokens,
        head_marker_pos=shift(sample.head_marker_pos),
        tail_marker_pos=shift(sample.tail_marker_pos),
        head_span=(span[0], span[0] + len(surface)) if kind == "head" else shift_span(sample.head_span),
        tail_span=(span[0], span[0] + len(surface)) if kind == "tail" else shift_span(sample.tail_span),
        relation=sample.relation,
    )
    new.validate()
    return new


def augment(dataset: list[Sample], memory: list[Sample], model: Model, tau: float,
            cap: int = DEFAULT_CAP, pair_log: list | None = None
            ) -> tuple[list[Sample], list[Sample]]:
    """Return (augmented dataset, augmented memory): originals in their
    given order followed by their variants.

    The occurrence pool spans dataset and memory jointly (samples present in
    both contribute once).  tau must lie in (0, 1]; acceptance is strictly
    greater-than, so tau = 1.0 disables augmentation.  `pair_log`, when
    given, collects (host_id, host_kind, donor_id, donor_kind, cosine) rows
    for the applied replacements.
    """
    if not 0.0 < tau <= 1.0:
        raise ConfigError(f"tau must lie in (0, 1], got {tau}")
    by_id: dict[int, Sample] = {}
    for s in list(dataset) + list(memory):
        existing = by_id.get(s.id)
        if existing is not None and existing != s:
            raise ValueError(f"conflicting samples share id {s.id}")
        by_id[s.id] = s
    pool = [by_id[i] for i in sorted(by_id)]
    occs = collect_entities(model, pool)
    if len(occs) < 2:
        return list(dataset), list(memory)

    reps = np.stack([o.representation for o in occs])
    norms = np.sqrt((reps * reps).sum(axis=1, keepdims=True) + 1e-24)
    unit = reps / norms
    # True cosines lie in [-1, 1]; the dot of two normalized rows can creep a
    # few ulps past 1, which would defeat the strict > tau test at tau = 1.
    sim = np.clip(unit @ unit.T, -1.0, 1.0)

    # candidates[host_id] -> list of (similarity, order, kind, surface)
    candidates: dict[int, list] = {}
    order = 0
    n = len(occs)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = occs[i], occs[j]
            if a.surface == b.surface or sim[i, j] <= tau:
                continue
            s = float(sim[i, j])
            candidates.setdefault(a.sample_id, []).append((s, order, a.kind, b.surface, b.sample_id, b.kind))
            order += 1
            candidates.setdefault(b.sample_id, []).append((s, order, b.kind, a.surface, a.sample_id, a.kind))
            order += 1

    next_id = max(by_id) + 1
    variants: dict[int, list[Sample]] = {}
    for host_id in sorted(candidates):
        seen: set[tuple[str, tuple[int, ...]]] = set()
        picked = []
        for cand in sorted(candidates[host_id], key=lambda c: (-c[0], c[1])):
            s, _, kind, surface, donor, donor_kind = cand
            key = (kind, surface)
            if key in seen:
                continue  # same rewrite twice adds nothing
            seen.add(key)
            picked.append((s, kind, surface, donor, donor_kind))
            if len(picked) >= cap:
                break
        made = []
        for s, kind, surface, donor, donor_kind in picked:
            made.append(replace_entity(by_id[host_id], kind, surface, next_id))
            next_id += 1
            if pair_log is not None:
                pair_log.append((host_id, kind, donor, donor_kind, s))
        variants[host_id] = made

    def extend(originals: list[Sample]) -> list[Sample]:
        out = list(originals)
        for s in originals:
            out.extend(variants.get(s.id, []))
        return out

    return extend(dataset), extend(memory)
