import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from oracles import brute_force_assignment
from rsdk import tensor as T
from rsdk.errors import ContractError, InputError
from rsdk.gradcheck import check
from rsdk.matcher import (assignment_cost, box_loss, cost_matrix, hungarian, hungarian_loss,
                          match, match_cost)
from rsdk.rbox import ciou_loss
from rsdk.tensor import Tensor


def random_instance(rng, n=4, n_obj=2):
    gt = np.column_stack([rng.uniform(0.2, 0.8, n_obj), rng.uniform(0.2, 0.8, n_obj),
                          rng.uniform(0.05, 0.3, n_obj), rng.uniform(0.05, 0.3, n_obj),
                          rng.uniform(0, 0.5, n_obj)])
    logits = Tensor(rng.normal(size=(n, 2)), requires_grad=True)
    raw = Tensor(rng.normal(size=(n, 5)), requires_grad=True)
    return gt, logits, raw


# ---------------------------------------------------------------- hungarian

def test_identity_assignment():
    eta = hungarian([[0.0, 1.0], [1.0, 0.0]])
    assert eta.tolist() == [0, 1]
    assert assignment_cost([[0.0, 1.0], [1.0, 0.0]], eta) == 0.0


def test_three_by_three_example():
    c = [[4, 1, 3], [2, 0, 5], [3, 2, 2]]
    assert assignment_cost(c, hungarian(c)) == 5.0 == brute_force_assignment(c)[0]


@pytest.mark.parametrize("n", range(2, 9))
def test_matches_brute_force(n):
    rng = np.random.default_rng(n)
    for _ in range(10):
        c = rng.normal(size=(n, n))
        eta = hungarian(c)
        assert sorted(eta.tolist()) == list(range(n))
        assert assignment_cost(c, eta) == brute_force_assignment(c)[0]


def test_integer_ties_still_optimal():
    rng = np.random.default_rng(3)
    for _ in range(30):
        c = rng.integers(0, 3, size=(6, 6)).astype(float)
        assert assignment_cost(c, hungarian(c)) == brute_force_assignment(c)[0]


def test_agrees_with_scipy_on_larger_matrices():
    rng = np.random.default_rng(8)
    for n in (10, 25):
        c = rng.uniform(size=(n, n))
        r, col = linear_sum_assignment(c)
        assert assignment_cost(c, hungarian(c)) == pytest.approx(c[r, col].sum(), abs=1e-12)


def test_ties_prefer_lowest_column():
    assert hungarian(np.zeros((3, 3))).tolist() == [0, 1, 2]


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 5), st.floats(-10, 10), st.integers(0, 2**31))
def test_row_shift_invariance(n, row, shift, seed):
    c = np.random.default_rng(seed).normal(size=(n, n))
    row %= n
    shifted = c.copy()
    shifted[row] += shift
    assert hungarian(c).tolist() == hungarian(shifted).tolist()


def test_rectangular_rows_fewer_than_columns():
    c = np.array([[5.0, 1.0, 3.0], [1.0, 4.0, 0.5]])
    assert hungarian(c).tolist() == [1, 2]


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_non_finite_cost_rejected(bad):
    with pytest.raises(InputError):
        hungarian([[0.0, bad], [1.0, 0.0]])


# ---------------------------------------------------------------- costs

def test_perfect_prediction_costs_minus_one():
    b = [0.4, 0.5, 0.2, 0.1, 0.1]
    assert match_cost(b, 1.0, b) == -1.0


def test_padding_rows_are_zero():
    rng = np.random.default_rng(0)
    c = cost_matrix(rng.uniform(0.2, 0.4, (1, 5)), rng.uniform(size=4), rng.uniform(0.1, 0.9, (4, 5)))
    assert c.shape == (4, 4)
    np.testing.assert_array_equal(c[1:], 0.0)


def test_three_object_match_against_enumeration():
    rng = np.random.default_rng(21)
    gt = rng.uniform(0.2, 0.6, (3, 5))
    probs, boxes = rng.uniform(size=3), rng.uniform(0.2, 0.6, (3, 5))
    c = cost_matrix(gt, probs, boxes)
    total, perm = brute_force_assignment(c)
    eta = hungarian(c)
    assert tuple(eta.tolist()) == perm and assignment_cost(c, eta) == total


# ---------------------------------------------------------------- box loss

def test_box_loss_identity():
    b = np.array([[0.5, 0.5, 0.2, 0.1, 0.3]])
    total, *_ = box_loss(Tensor(b), b)
    assert total.data[0] == 0.0


def test_box_loss_angle_only_l1():
    p = np.array([[0.5, 0.5, 0.2, 0.1, 0.3]])
    g = np.array([[0.5, 0.5, 0.2, 0.1, 0.2]])
    total, ciou, l1, _ = box_loss(Tensor(p), g)
    assert 4 * l1.data[0] == pytest.approx(0.4, abs=1e-12)
    assert total.data[0] == pytest.approx(2 * ciou.data[0] + 0.4, abs=1e-12)


def test_box_loss_composition():
    rng = np.random.default_rng(2)
    p, g = rng.uniform(0.2, 0.6, (1, 5)), rng.uniform(0.2, 0.6, (1, 5))
    g[0, 4] = p[0, 4]          # equal angles: the training CIoU equals the exact one
    total, *_ = box_loss(Tensor(p), g)
    ref = 2 * ciou_loss(tuple(p[0, :4]) + (p[0, 4] * 360,), tuple(g[0, :4]) + (g[0, 4] * 360,))
    ref += 4 * np.abs(p - g).sum()
    assert total.data[0] == pytest.approx(ref, abs=1e-12)


# ---------------------------------------------------------------- set loss

def test_perfect_predictions_zero_loss():
    gt = np.array([[0.3, 0.4, 0.2, 0.1, 0.0], [0.7, 0.6, 0.1, 0.1, 0.1]])
    logp = Tensor(np.log(np.array([[1.0, 1e-300], [1e-300, 1.0], [1.0, 1e-300]])))
    boxes = Tensor(np.vstack([gt[1], np.full(5, 0.5), gt[0]]))
    eta, _ = match(gt, logp, boxes)
    loss, _ = hungarian_loss(gt, logp, boxes, eta)
    assert eta.tolist()[:2] == [2, 0]
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_empty_ground_truth_all_no_object():
    logp = Tensor(np.log(np.array([[1e-300, 1.0]] * 3)))
    eta, _ = match(np.zeros((0, 5)), logp, Tensor(np.full((3, 5), 0.5)))
    loss, parts = hungarian_loss(np.zeros((0, 5)), logp, Tensor(np.full((3, 5), 0.5)), eta)
    assert loss.item() == 0.0 and parts["ciou"] == 0.0


def test_two_query_scripted_composition():
    gt = np.array([[0.4, 0.5, 0.2, 0.2, 0.1]])
    p = np.array([[0.8, 0.2], [0.3, 0.7]])
    boxes = np.array([[0.5, 0.5, 0.2, 0.3, 0.1], [0.2, 0.2, 0.1, 0.1, 0.4]])
    loss, parts = hungarian_loss(gt, Tensor(np.log(p)), Tensor(boxes), np.array([0, 1]))
    deg = lambda b: (b[0], b[1], b[2], b[3], b[4] * 360)
    ref = -math.log(0.8) - 0.1 * math.log(0.7)
    ref += 2 * ciou_loss(deg(boxes[0]), deg(gt[0])) + 4 * np.abs(boxes[0] - gt[0]).sum()
    assert abs(loss.item() - ref) < 1e-10
    assert parts["nll"] == pytest.approx(-math.log(0.8) - 0.1 * math.log(0.7))


def test_non_bijective_assignment_rejected():
    with pytest.raises(ContractError):
        hungarian_loss(np.zeros((1, 5)) + 0.5, Tensor(np.log(np.full((2, 2), 0.5))),
                       Tensor(np.full((2, 5), 0.5)), np.array([0, 0]))


def _forward(logits, raw):
    return T.log_softmax(logits, axis=-1), T.sigmoid(raw)


@pytest.mark.parametrize("seed", range(10))
def test_ground_truth_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    gt, logits, raw = random_instance(rng, n=5, n_obj=3)
    logp, boxes = _forward(logits, raw)
    eta, cost = match(gt, logp, boxes)
    loss, _ = hungarian_loss(gt, logp, boxes, eta)
    perm = rng.permutation(3)
    eta2, cost2 = match(gt[perm], logp, boxes)
    loss2, _ = hungarian_loss(gt[perm], logp, boxes, eta2)
    assert abs(assignment_cost(cost, eta) - assignment_cost(cost2, eta2)) < 1e-12
    assert abs(loss.item() - loss2.item()) < 1e-12


def test_loss_nonnegative():
    rng = np.random.default_rng(6)
    for _ in range(20):
        gt, logits, raw = random_instance(rng)
        logp, boxes = _forward(logits, raw)
        eta, _ = match(gt, logp, boxes)
        assert hungarian_loss(gt, logp, boxes, eta)[0].item() >= 0.0


def test_gradient_with_frozen_assignment():
    rng = np.random.default_rng(12)
    gt, logits, raw = random_instance(rng, n=3, n_obj=2)
    logp, boxes = _forward(logits, raw)
    eta, _ = match(gt, logp, boxes)
    _, parts = hungarian_loss(gt, logp, boxes, eta)

    def f():
        lp, bx = _forward(logits, raw)
        return hungarian_loss(gt, lp, bx, eta, alpha=parts["alpha"])[0]

    assert check(f, [logits, raw]) < 1e-4
