"""Exemplar selection against a brute-force oracle, prototype/deviation
statistics, pseudo-sample generation, and the memory store."""

import numpy as np
import pytest

from confew.data import Sample
from confew.memory import (
    DEVIATION_FLOOR, MemoryStore, compute_deviation, compute_prototype,
    generate_pseudo, kmeans, select_typical,
)


def _samples(n, relation="r", start_id=0):
    """Minimal valid samples; hidden vectors are supplied separately."""
    out = []
    for i in range(n):
        out.append(Sample(id=start_id + i, tokens=(0, 2, 1, 3),
                          head_marker_pos=0, tail_marker_pos=2,
                          head_span=(1, 2), tail_span=(3, 4), relation=relation))
    return out


# -- brute-force oracle mirroring the documented draw pattern ------------


def oracle_kmeans(x, k, rng):
    n = len(x)
    centers = [x[int(rng.integers(n))].copy()]
    d2 = np.array([((p - centers[0]) ** 2).sum() for p in x])
    while len(centers) < k:
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            acc = 0.0
            idx = n - 1
            for i, v in enumerate(d2):
                acc += v
                if acc > r:
                    idx = i
                    break
        centers.append(x[idx].copy())
        d2 = np.minimum(d2, np.array([((p - centers[-1]) ** 2).sum() for p in x]))
    centers = np.array(centers)
    assign = np.full(n, -1)
    for _ in range(100):
        d2m = np.array([[((p - c) ** 2).sum() for c in centers] for p in x])
        new = np.array([int(np.argmin(row)) for row in d2m])
        counts = np.bincount(new, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            donor = int(np.argmax(counts))
            members = np.flatnonzero(new == donor)
            far = members[int(np.argmax([d2m[m, donor] for m in members]))]
            new[far] = empty
            counts = np.bincount(new, minlength=k)
        if np.array_equal(new, assign):
            break
        assign = new
        for c in range(k):
            centers[c] = x[assign == c].mean(axis=0)
    return centers, assign


def oracle_select(x, ids, k, seed):
    centers, assign = oracle_kmeans(x, k, np.random.default_rng(seed))
    chosen = []
    for c in range(k):
        members = np.flatnonzero(assign == c)
        dists = [((x[m] - centers[c]) ** 2).sum() for m in members]
        best = sorted(zip(dists, [ids[m] for m in members]))[0][1]
        chosen.append(int(best))
    return sorted(chosen)


def test_six_point_instance_selects_one_and_twentyone():
    values = np.array([[0.0], [1.0], [5.0], [20.0], [21.0], [25.0]])
    samples = _samples(6)
    for seed in range(10):
        ids = select_typical(samples, values, 2, np.random.default_rng(seed))
        assert [values[i][0] for i in ids] == [1.0, 21.0]


def test_select_matches_oracle_on_random_instances():
    rng = np.random.default_rng(99)
    for trial in range(20):
        n = int(rng.integers(2, 9))
        k = int(rng.integers(1, 3))
        k = min(k, n)
        x = rng.standard_normal((n, 3))
        samples = _samples(n)
        seed = int(rng.integers(10_000))
        got = select_typical(samples, x, k, np.random.default_rng(seed))
        assert got == oracle_select(x, [s.id for s in samples], k, seed)


def test_memory_size_saturates_at_sample_count():
    x = np.random.default_rng(0).standard_normal((3, 4))
    samples = _samples(3)
    ids = select_typical(samples, x, 10, np.random.default_rng(1))
    assert ids == [0, 1, 2]


def test_identical_hiddens_tie_break_lowest_ids():
    x = np.ones((5, 2))
    samples = _samples(5, start_id=100)
    ids = select_typical(samples, x, 2, np.random.default_rng(3))
    assert ids == [100, 101]


def test_kmeans_rejects_bad_k():
    x = np.zeros((3, 2))
    with pytest.raises(ValueError):
        kmeans(x, 0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        kmeans(x, 4, np.random.default_rng(0))


def test_kmeans_deterministic_given_seed():
    x = np.random.default_rng(5).standard_normal((8, 3))
    a = kmeans(x, 3, np.random.default_rng(7))
    b = kmeans(x, 3, np.random.default_rng(7))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


# -- prototypes and deviations -------------------------------------------


def test_prototype_two_point_average():
    h = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert np.array_equal(compute_prototype(h), [1.0, 1.0])


def test_prototype_single_exemplar_is_identity():
    h = np.array([[3.0, -1.0, 2.0]])
    assert np.array_equal(compute_prototype(h), h[0])


def test_prototype_matches_summation_oracle():
    rng = np.random.default_rng(11)
    h = rng.standard_normal((5, 7))
    acc = np.zeros(7)
    for row in h:
        acc += row
    assert np.allclose(compute_prototype(h), acc / 5.0, atol=1e-14)


def test_deviation_single_sample_hits_floor():
    h = np.array([[1.0, 2.0, 3.0]])
    assert np.array_equal(compute_deviation(h), np.full(3, DEVIATION_FLOOR))


def test_deviation_hand_forced_values():
    h = np.array([[0.0, 5.0], [2.0, 5.0]])  # per-dim std: (1, 0) -> (1, floor)
    assert np.array_equal(compute_deviation(h), [1.0, DEVIATION_FLOOR])


def test_deviation_matches_two_pass_oracle():
    rng = np.random.default_rng(12)
    h = rng.standard_normal((10, 6)) * 3.0
    mean = h.sum(axis=0) / 10.0
    var = ((h - mean) ** 2).sum(axis=0) / 10.0  # population variance
    assert np.allclose(compute_deviation(h), np.sqrt(var), atol=1e-12)


# -- pseudo samples --------------------------------------------------------


class _FixedNormal:
    """rng stub returning a queued eta per standard_normal call."""

    def __init__(self, etas):
        self.etas = list(etas)

    def standard_normal(self, shape):
        eta = np.asarray(self.etas.pop(0), dtype=np.float64)
        assert eta.shape == tuple(shape) if isinstance(shape, tuple) else True
        return eta


def test_pseudo_forced_arithmetic():
    proto = np.array([1.0, 1.0])
    dev = np.array([2.0, 0.5])
    out = generate_pseudo(proto, dev, "r", 1, _FixedNormal([np.array([0.5, 0.0])]))
    assert np.array_equal(out[0].vector, [2.0, 1.0])
    assert out[0].relation == "r"


def test_pseudo_floor_deviation_stays_near_prototype():
    proto = np.array([4.0, -2.0])
    dev = np.full(2, DEVIATION_FLOOR)
    out = generate_pseudo(proto, dev, "r", 50, np.random.default_rng(1))
    for p in out:
        assert np.all(np.abs(p.vector - proto) < 1e-3)


def test_pseudo_monte_carlo_mean_and_std():
    rng = np.random.default_rng(2)
    proto = np.array([1.0, -1.0, 0.5])
    dev = np.array([0.5, 2.0, 1.0])
    draws = np.stack([p.vector for p in generate_pseudo(proto, dev, "r", 100_000, rng)])
    se = dev / np.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - proto) < 4.0 * se)
    assert np.allclose(draws.std(axis=0), dev, rtol=0.02)


def test_pseudo_deterministic_given_seed():
    proto, dev = np.zeros(4), np.ones(4)
    a = generate_pseudo(proto, dev, "r", 5, np.random.default_rng(9))
    b = generate_pseudo(proto, dev, "r", 5, np.random.default_rng(9))
    assert all(np.array_equal(x.vector, y.vector) for x, y in zip(a, b))


# -- memory store -----------------------------------------------------------


def test_store_accounting_and_ordering():
    store = MemoryStore()
    dev = np.ones(2)
    store.add_relation("b", 1, _samples(2, "b", start_id=0), dev)
    store.add_relation("a", 1, _samples(2, "a", start_id=10), dev)
    store.add_relation("c", 2, _samples(2, "c", start_id=20), dev)
    assert store.relations() == ["a", "b", "c"]  # task order, then name
    assert store.total_exemplars() == 6
    assert [s.id for s in store.all_samples()] == [10, 11, 0, 1, 20, 21]


def test_store_rejects_duplicates_and_empty():
    store = MemoryStore()
    store.add_relation("a", 1, _samples(1, "a"), np.ones(2))
    with pytest.raises(ValueError):
        store.add_relation("a", 2, _samples(1, "a", start_id=5), np.ones(2))
    with pytest.raises(ValueError):
        store.add_relation("b", 1, [], np.ones(2))


def test_store_dump_csv(tmp_path):
    store = MemoryStore()
    store.add_relation("a", 1, _samples(2, "a"), np.array([0.5, 1.5]))
    store.set_prototype("a", np.array([1.0, 2.0]))
    path = tmp_path / "memory.csv"
    store.dump_csv(path)
    text = path.read_text()
    assert "relation" in text and "a,1,0 1,1 2,0.5 1.5" in text
