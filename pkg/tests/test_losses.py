"""Loss oracles: frozen expected values computed independently of the
implementation, plus finite-difference gradient checks."""

import numpy as np
import pytest

from confew.autodiff import Tensor
from confew.errors import ConfigError, MiningError
from confew.losses import (
    LossWeights, TripletTargets, classification_loss, distillation_triplet_loss,
    feature_distill_loss, final_loss, hidden_contrastive_loss, mine_triplet,
    mine_triplets_batch, prediction_distill_loss, representation_distill_loss,
    total_distillation_loss,
)

from helpers import central_diff


# -- independent oracles (plain numpy, no shared code) -----------------


def oracle_cross_entropy(logits, labels):
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    return float(np.mean([-np.log(probs[i, y]) for i, y in enumerate(labels)]))


def oracle_cosine_loss(prev, cur):
    total = 0.0
    for a, b in zip(prev, cur):
        ca = a / np.linalg.norm(a)
        cb = b / np.linalg.norm(b)
        total += 1.0 - float(ca @ cb)
    return total / len(prev)


def oracle_prediction_distill(prev, cur, T):
    def soft(m):
        e = np.exp(m / T - (m / T).max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    p = soft(prev)
    q = soft(cur[:, : prev.shape[1]])
    return float(np.mean(-(p * np.log(q)).sum(axis=1)))


# -- classification ----------------------------------------------------


def test_csf_near_zero_for_confident_correct_logits():
    logits = Tensor(np.array([[30.0, 0.0, 0.0], [0.0, 30.0, 0.0]]))
    loss = classification_loss(logits, np.array([0, 1]))
    assert loss.item() == pytest.approx(0.0, abs=1e-9)


def test_csf_uniform_is_log_n():
    logits = Tensor(np.zeros((4, 10)))
    loss = classification_loss(logits, np.array([0, 3, 7, 9]))
    assert loss.item() == pytest.approx(np.log(10.0), abs=1e-12)


def test_csf_matches_oracle_on_random_batch():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((4, 6)) * 3.0
    labels = rng.integers(0, 6, size=4)
    loss = classification_loss(Tensor(logits), labels)
    assert loss.item() == pytest.approx(oracle_cross_entropy(logits, labels), abs=1e-12)


def test_csf_rejects_bad_labels():
    with pytest.raises(ValueError):
        classification_loss(Tensor(np.zeros((2, 3))), np.array([0, 3]))
    with pytest.raises(ValueError):
        classification_loss(Tensor(np.zeros((2, 3))), np.array([0]))


def test_csf_gradient_check():
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((3, 5))
    labels = np.array([1, 0, 4])
    t = Tensor(logits, requires_grad=True)
    classification_loss(t, labels).backward()
    for idx in [(0, 1), (1, 3), (2, 4), (2, 0)]:
        fd = central_diff(lambda: classification_loss(Tensor(logits), labels).item(), logits, idx)
        assert abs(t.grad[idx] - fd) / max(1.0, abs(t.grad[idx])) <= 1e-6


# -- cosine distillation (fd and rd) -----------------------------------


@pytest.mark.parametrize("loss_fn", [feature_distill_loss, representation_distill_loss])
def test_cosine_loss_exact_cardinal_values(loss_fn):
    e0 = np.eye(4)[0]
    e1 = np.eye(4)[1]
    assert loss_fn(np.stack([e0]), Tensor(np.stack([e0]))).item() == 0.0
    assert loss_fn(np.stack([e0]), Tensor(np.stack([e1]))).item() == 1.0
    assert loss_fn(np.stack([e0]), Tensor(np.stack([-e0]))).item() == 2.0


def test_cosine_loss_scale_invariant_and_identical_rows_zero():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((5, 8))
    assert feature_distill_loss(a, Tensor(a * 7.5)).item() == pytest.approx(0.0, abs=1e-12)


def test_cosine_loss_matches_oracle():
    rng = np.random.default_rng(3)
    prev = rng.standard_normal((6, 12))
    cur = rng.standard_normal((6, 12))
    got = representation_distill_loss(prev, Tensor(cur)).item()
    assert got == pytest.approx(oracle_cosine_loss(prev, cur), abs=1e-12)
    assert 0.0 <= got <= 2.0


def test_cosine_loss_bounds_random():
    rng = np.random.default_rng(4)
    for _ in range(20):
        prev = rng.standard_normal((3, 5)) * rng.uniform(0.1, 10)
        cur = rng.standard_normal((3, 5)) * rng.uniform(0.1, 10)
        v = feature_distill_loss(prev, Tensor(cur)).item()
        assert 0.0 <= v <= 2.0


def test_cosine_loss_zero_row_is_finite():
    prev = np.zeros((1, 4))
    cur = Tensor(np.ones((1, 4)), requires_grad=True)
    loss = feature_distill_loss(prev, cur)
    assert np.isfinite(loss.item())
    loss.backward()
    assert np.all(np.isfinite(cur.grad))


def test_cosine_loss_gradient_check():
    rng = np.random.default_rng(5)
    prev = rng.standard_normal((4, 6))
    cur = rng.standard_normal((4, 6))
    t = Tensor(cur, requires_grad=True)
    representation_distill_loss(prev, t).backward()
    for idx in [(0, 0), (1, 5), (3, 2)]:
        fd = central_diff(lambda: representation_distill_loss(prev, Tensor(cur)).item(), cur, idx)
        assert abs(t.grad[idx] - fd) / max(1.0, abs(t.grad[idx])) <= 1e-6


def test_cosine_loss_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        feature_distill_loss(np.zeros((2, 4)), Tensor(np.zeros((2, 5))))


# -- triplet mining -----------------------------------------------------


def test_mine_triplet_hand_computed():
    pool = [
        (np.array([3.0, 0.0]), "a"),   # same relation, distance 3
        (np.array([1.0, 0.0]), "a"),   # same relation, distance 1
        (np.array([0.0, 2.0]), "b"),   # other relation, distance 2
        (np.array([0.0, 5.0]), "b"),   # other relation, distance 5
    ]
    t = mine_triplet(np.zeros(2), "a", pool)
    assert np.array_equal(t.z_plus, [3.0, 0.0])
    assert np.array_equal(t.z_minus, [0.0, 2.0])


def test_mine_triplet_singleton_pools():
    pool = [(np.array([1.0]), "a"), (np.array([2.0]), "b")]
    t = mine_triplet(np.array([0.0]), "a", pool)
    assert t.z_plus[0] == 1.0 and t.z_minus[0] == 2.0


def test_mine_triplet_tie_breaks_to_lowest_index():
    pool = [
        (np.array([1.0, 0.0]), "a"),
        (np.array([-1.0, 0.0]), "a"),   # same distance as index 0
        (np.array([0.0, 1.0]), "b"),
        (np.array([0.0, -1.0]), "b"),   # same distance as index 2
    ]
    t = mine_triplet(np.zeros(2), "a", pool)
    assert np.array_equal(t.z_plus, [1.0, 0.0])
    assert np.array_equal(t.z_minus, [0.0, 1.0])


def test_mine_triplet_missing_sides_raise():
    with pytest.raises(MiningError):
        mine_triplet(np.zeros(2), "a", [(np.ones(2), "b")])
    with pytest.raises(MiningError):
        mine_triplet(np.zeros(2), "a", [(np.ones(2), "a")])


def test_mine_triplets_batch_matches_single():
    rng = np.random.default_rng(6)
    pool_vecs = rng.standard_normal((7, 3))
    pool_rels = ["a", "b", "a", "c", "b", "a", "c"]
    anchors = rng.standard_normal((4, 3))
    rels = ["a", "b", "c", "a"]
    batch = mine_triplets_batch(anchors, rels, pool_vecs, pool_rels)
    for anchor, rel, got in zip(anchors, rels, batch):
        single = mine_triplet(anchor, rel, list(zip(pool_vecs, pool_rels)))
        assert np.array_equal(got.z_plus, single.z_plus)
        assert np.array_equal(got.z_minus, single.z_minus)
    assert mine_triplets_batch(anchors, ["zzz"] * 4, pool_vecs, pool_rels) == [None] * 4


# -- distillation triplet loss ------------------------------------------


def test_dtr_zero_when_margin_satisfied():
    h = Tensor(np.zeros((1, 2)))
    targets = [TripletTargets(z_plus=np.array([1.0, 0.0]), z_minus=np.array([5.0, 0.0]))]
    assert distillation_triplet_loss(h, targets).item() == 0.0


def test_dtr_hand_computed_value():
    # d+ = 3, d- = 1 -> hinge = 2
    h = Tensor(np.zeros((1, 2)))
    targets = [TripletTargets(z_plus=np.array([3.0, 0.0]), z_minus=np.array([0.0, 1.0]))]
    assert distillation_triplet_loss(h, targets).item() == pytest.approx(2.0, abs=1e-12)


def test_dtr_equidistant_is_exactly_zero():
    h = Tensor(np.zeros((1, 2)))
    targets = [TripletTargets(z_plus=np.array([0.0, 2.0]), z_minus=np.array([2.0, 0.0]))]
    assert distillation_triplet_loss(h, targets).item() == 0.0


def test_dtr_missing_targets_contribute_zero_but_divide():
    h = Tensor(np.zeros((2, 2)))
    t = TripletTargets(z_plus=np.array([3.0, 0.0]), z_minus=np.array([0.0, 1.0]))
    one = distillation_triplet_loss(h, [t, None]).item()
    assert one == pytest.approx(1.0, abs=1e-12)  # hinge 2 averaged over 2 rows
    assert distillation_triplet_loss(h, [None, None]).item() == 0.0


def test_dtr_gradient_check_and_zero_distance_safety():
    rng = np.random.default_rng(7)
    hdata = rng.standard_normal((3, 4))
    targets = [
        TripletTargets(z_plus=rng.standard_normal(4), z_minus=rng.standard_normal(4)),
        None,
        TripletTargets(z_plus=hdata[2].copy(), z_minus=rng.standard_normal(4)),  # zero distance
    ]
    t = Tensor(hdata, requires_grad=True)
    loss = distillation_triplet_loss(t, targets)
    loss.backward()
    assert np.all(np.isfinite(t.grad))
    assert np.all(t.grad[1] == 0.0)
    for idx in [(0, 0), (0, 3)]:
        fd = central_diff(
            lambda: distillation_triplet_loss(Tensor(hdata), targets).item(), hdata, idx)
        assert abs(t.grad[idx] - fd) / max(1.0, abs(t.grad[idx])) <= 1e-6


# -- prediction distillation ---------------------------------------------


def test_pd_identical_uniform_logits_give_ln2():
    prev = np.zeros((3, 2))
    cur = Tensor(np.zeros((3, 2)))
    assert prediction_distill_loss(prev, cur, 1.0).item() == pytest.approx(np.log(2.0), abs=1e-12)


def test_pd_asymmetric_two_logit_case():
    prev = np.array([[1.0, 0.0]])
    cur = Tensor(np.array([[0.0, 1.0]]))
    got = prediction_distill_loss(prev, cur, 1.0).item()
    # independent derivation: log(1+e) - 1/(1+e)
    expect = np.log1p(np.e) - 1.0 / (1.0 + np.e)
    assert got == pytest.approx(expect, abs=1e-10)
    assert got == pytest.approx(1.0445, abs=2e-3)  # headline value


def test_pd_matches_oracle_random():
    rng = np.random.default_rng(8)
    prev = rng.standard_normal((5, 4)) * 2.0
    cur = rng.standard_normal((5, 7))
    for T in (0.08, 1.0, 3.0):
        got = prediction_distill_loss(prev, Tensor(cur), T).item()
        assert got == pytest.approx(oracle_prediction_distill(prev, cur, T), abs=1e-10)


def test_pd_high_temperature_approaches_log_width():
    rng = np.random.default_rng(9)
    prev = rng.standard_normal((4, 5))
    cur = rng.standard_normal((4, 5))
    got = prediction_distill_loss(prev, Tensor(cur), 1e6).item()
    assert got == pytest.approx(np.log(5.0), abs=1e-3)


def test_pd_truncates_student_to_teacher_width():
    prev = np.array([[0.0, 0.0]])
    cur_wide = Tensor(np.array([[0.0, 0.0, 99.0]]))
    got = prediction_distill_loss(prev, cur_wide, 1.0).item()
    assert got == pytest.approx(np.log(2.0), abs=1e-12)  # third logit ignored


def test_pd_softened_distributions_sum_to_one():
    rng = np.random.default_rng(10)
    prev = rng.standard_normal((3, 6)) * 4.0
    e = np.exp(prev / 0.08 - (prev / 0.08).max(axis=1, keepdims=True))
    assert np.allclose((e / e.sum(axis=1, keepdims=True)).sum(axis=1), 1.0, atol=1e-9)


def test_pd_rejects_bad_temperature_and_widths():
    with pytest.raises(ConfigError):
        prediction_distill_loss(np.zeros((1, 2)), Tensor(np.zeros((1, 2))), 0.0)
    with pytest.raises(ValueError):
        prediction_distill_loss(np.zeros((1, 3)), Tensor(np.zeros((1, 2))), 1.0)
    with pytest.raises(ValueError):
        prediction_distill_loss(np.zeros((1, 0)), Tensor(np.zeros((1, 2))), 1.0)


def test_pd_gradient_check_sharp_temperature():
    rng = np.random.default_rng(11)
    prev = rng.standard_normal((2, 3))
    cur = rng.standard_normal((2, 5))
    t = Tensor(cur, requires_grad=True)
    prediction_distill_loss(prev, t, 0.08).backward()
    assert np.all(t.grad[:, 3:] == 0.0)  # truncated logits get no gradient
    for idx in [(0, 0), (1, 2)]:
        fd = central_diff(
            lambda: prediction_distill_loss(prev, Tensor(cur), 0.08).item(), cur, idx)
        assert abs(t.grad[idx] - fd) / max(1.0, abs(t.grad[idx])) <= 1e-4


# -- combinations ---------------------------------------------------------


def test_weight_validation():
    with pytest.raises(ConfigError):
        LossWeights(temperature=0.0)


def test_hidden_contrastive_is_scaled_sum():
    w = LossWeights()
    got = hidden_contrastive_loss(Tensor(0.25), Tensor(1.5), w)
    assert got.item() == pytest.approx(1.75, abs=1e-15)
    half = hidden_contrastive_loss(Tensor(0.25), Tensor(1.5), LossWeights(dtr_scale=0.0))
    assert half.item() == pytest.approx(0.25, abs=1e-15)


def test_total_distillation_table_defaults():
    w = LossWeights()  # alpha .5, beta 1, gamma .5
    got = total_distillation_loss(Tensor(2.0), Tensor(1.0), Tensor(2.0), w)
    assert got.item() == pytest.approx(3.0, abs=1e-15)


def test_final_loss_defaults_are_plain_sum():
    w = LossWeights()
    assert final_loss(Tensor(1.25), Tensor(0.5), w).item() == pytest.approx(1.75, abs=1e-15)
    wz = LossWeights(lambda2=0.0)
    assert final_loss(Tensor(1.25), Tensor(123.0), wz).item() == pytest.approx(1.25, abs=1e-15)
