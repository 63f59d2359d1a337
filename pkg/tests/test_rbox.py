import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import mc_rbox_iou
from rsdk import tensor as T
from rsdk.errors import ParameterError
from rsdk.rbox import (RBox, aspect_term, canonical_angle, ciou_gradient_surrogate, ciou_loss,
                       ciou_loss_tensor, ciou_terms, polygon_area, rbox_corners, rbox_iou)
from rsdk.tensor import Tensor


def as_set(corners, nd=9):
    return {tuple(np.round(c, nd)) for c in corners}


def random_pair(rng):
    a = (rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 3), rng.uniform(0.5, 3), rng.uniform(0, 360))
    b = (a[0] + rng.uniform(-1.5, 1.5), a[1] + rng.uniform(-1.5, 1.5), rng.uniform(0.5, 3),
         rng.uniform(0.5, 3), rng.uniform(0, 360))
    return a, b


box_strategy = st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.2, 4), st.floats(0.2, 4),
                         st.floats(0, 360))


# ---------------------------------------------------------------- corners

def test_axis_aligned_corners():
    assert as_set(rbox_corners((0, 0, 2, 2, 0))) == {(-1, -1), (1, -1), (1, 1), (-1, 1)}


def test_square_quarter_turn_symmetry():
    assert as_set(rbox_corners((0, 0, 2, 2, 90))) == as_set(rbox_corners((0, 0, 2, 2, 0)))


def test_corners_match_rotation_matrix():
    t = math.radians(30)
    # on-screen CCW with y down: x' = x cos + y sin, y' = -x sin + y cos
    R = np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]])
    local = np.array([[-1, -0.5], [1, -0.5], [1, 0.5], [-1, 0.5]])
    np.testing.assert_allclose(rbox_corners((0, 0, 2, 1, 30)), local @ R.T, atol=1e-9)


def test_positive_angle_turns_width_axis_upward_on_screen():
    c = rbox_corners((0, 0, 2, 0.1, 90))
    assert c[:, 1].min() == pytest.approx(-1.0)      # width axis now along -y (up on screen)


@settings(max_examples=100, deadline=None)
@given(box_strategy)
def test_corner_polygon_ccw_with_box_area(b):
    assert polygon_area(rbox_corners(b)) == pytest.approx(b[2] * b[3], rel=1e-9)


def test_invalid_box():
    with pytest.raises(ParameterError):
        RBox(0, 0, 0, 1, 0)


def test_canonical_angle():
    assert canonical_angle(190.0) == 10.0 and canonical_angle(-30.0) == 150.0


# ---------------------------------------------------------------- IoU

def test_iou_identity_and_disjoint():
    assert rbox_iou((3, 4, 2, 1, 17), (3, 4, 2, 1, 17)) == 1.0
    assert rbox_iou((3, 4, 2, 1, 17), (3, 4, 2, 1, 197)) == 1.0
    assert rbox_iou((0, 0, 1, 1, 0), (100, 0, 1, 1, 0)) == 0.0


def test_unit_square_vs_45_degrees_monte_carlo():
    a, b = (0, 0, 1, 1, 0), (0, 0, 1, 1, 45)
    inter = 2 * (math.sqrt(2) - 1)       # regular octagon
    assert rbox_iou(a, b) == pytest.approx(inter / (2 - inter), abs=1e-12)
    assert abs(rbox_iou(a, b) - mc_rbox_iou(a, b)) < 0.01


def test_axis_aligned_half_overlap():
    assert rbox_iou((0, 0, 2, 2, 0), (1, 0, 2, 2, 0)) == pytest.approx(2 / 6)


def test_random_pairs_vs_monte_carlo():
    rng = np.random.default_rng(5)
    for i in range(12):
        a, b = random_pair(rng)
        assert abs(rbox_iou(a, b) - mc_rbox_iou(a, b, n=200_000, seed=i)) < 0.01


@settings(max_examples=200, deadline=None)
@given(box_strategy, box_strategy)
def test_iou_symmetric_exactly(a, b):
    v = rbox_iou(a, b)
    assert v == rbox_iou(b, a)
    assert 0.0 <= v <= 1.0


def _rotate_about(b, pivot, deg):
    t = math.radians(deg)
    R = np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]])
    c = R @ (np.array(b[:2]) - pivot) + pivot
    return (c[0], c[1], b[2], b[3], b[4] + deg)


@settings(max_examples=100, deadline=None)
@given(box_strategy, box_strategy, st.floats(0, 360))
def test_joint_rotation_invariance(a, b, deg):
    pivot = np.array([0.3, -0.7])
    ra, rb = _rotate_about(a, pivot, deg), _rotate_about(b, pivot, deg)
    assert abs(rbox_iou(a, b) - rbox_iou(ra, rb)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(box_strategy, box_strategy, st.floats(-10, 10), st.floats(-10, 10))
def test_translation_invariance(a, b, tx, ty):
    sh = lambda x: (x[0] + tx, x[1] + ty) + tuple(x[2:])
    assert abs(rbox_iou(a, b) - rbox_iou(sh(a), sh(b))) < 1e-9
    ta, tb = ciou_terms(a, b), ciou_terms(sh(a), sh(b))
    assert ta["nu"] == tb["nu"]
    assert ta["rho2"] / ta["c2"] == pytest.approx(tb["rho2"] / tb["c2"], rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------- CIoU

def test_ciou_identity_is_exactly_zero():
    assert ciou_loss((1, 2, 3, 4, 25), (1, 2, 3, 4, 25)) == 0.0
    loss, _ = ciou_loss_tensor(Tensor([[0.4, 0.5, 0.2, 0.1, 0.1]]), [[0.4, 0.5, 0.2, 0.1, 0.1]])
    assert loss.data[0] == 0.0


def test_equal_aspect_has_zero_nu():
    assert aspect_term(2, 1, 4, 2) == 0.0
    assert ciou_terms((0, 0, 2, 1, 0), (5, 5, 6, 3, 0))["nu"] == 0.0


def test_nu_two_to_one_vs_square():
    oracle = 4 / math.pi ** 2 * (math.atan(1.0) - math.atan(2.0)) ** 2
    assert abs(aspect_term(2, 1, 1, 1) - 0.0420) < 1e-3
    assert aspect_term(2, 1, 1, 1) == pytest.approx(oracle, abs=1e-15)


def test_alpha_definition():
    t = ciou_terms((0, 0, 2, 1, 0), (0.3, 0, 1, 1, 0))
    assert t["alpha"] == pytest.approx(t["nu"] / ((1 - t["iou"]) + t["nu"]))


def test_degenerate_height_rejected():
    with pytest.raises(ParameterError):
        ciou_loss((0, 0, 1, 0, 0), (0, 0, 1, 1, 0))
    with pytest.raises(ParameterError):
        ciou_loss_tensor(Tensor([[0, 0, 1, 0, 0]]), [[0, 0, 1, 1, 0]])


@settings(max_examples=100, deadline=None)
@given(box_strategy, box_strategy)
def test_ciou_nonnegative(a, b):
    assert ciou_loss(a, b) >= 0.0


def test_tensor_ciou_matches_exact_on_equal_angles():
    rng = np.random.default_rng(9)
    for _ in range(20):
        ang = rng.uniform(0, 0.5)
        p = [rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3), ang]
        g = [rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3), ang]
        loss, _ = ciou_loss_tensor(Tensor([p]), [g])
        ref = ciou_loss(p[:4] + [ang * 360], g[:4] + [ang * 360])
        assert loss.data[0] == pytest.approx(ref, abs=1e-9)


def test_surrogate_gradient_finite_differences():
    pred, gt = np.array([0.4, 0.5, 0.2, 0.2, 0.0]), np.array([0.5, 0.5, 0.2, 0.2, 0.0])
    g = ciou_gradient_surrogate(pred, gt)
    h = 1e-5
    num = np.zeros(5)
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        fp = ciou_loss_tensor(Tensor([pred + e]), [gt])[0].data[0]
        fm = ciou_loss_tensor(Tensor([pred - e]), [gt])[0].data[0]
        num[i] = (fp - fm) / (2 * h)
    assert np.abs(g - num).max() / np.abs(num).max() < 1e-3


def test_surrogate_zero_center_gradient_at_minimum():
    b = np.array([0.5, 0.4, 0.2, 0.1, 0.15])
    g = ciou_gradient_surrogate(b, b)
    np.testing.assert_array_equal(g[:2], 0.0)


def test_surrogate_pulls_disjoint_boxes_together():
    pred, gt = np.array([0.2, 0.5, 0.1, 0.1, 0.05]), np.array([0.7, 0.5, 0.1, 0.1, 0.0])
    g = ciou_gradient_surrogate(pred, gt)
    h = 1e-4
    lp = ciou_loss_tensor(Tensor([pred + [h, 0, 0, 0, 0]]), [gt])[0].data[0]
    lm = ciou_loss_tensor(Tensor([pred - [h, 0, 0, 0, 0]]), [gt])[0].data[0]
    assert lp < lm and g[0] < 0          # moving right (toward gt) lowers the loss


def test_tensor_ciou_gradient_random_pairs():
    from rsdk.gradcheck import check
    rng = np.random.default_rng(4)
    pred = Tensor(np.column_stack([rng.uniform(0.3, 0.7, 6), rng.uniform(0.3, 0.7, 6),
                                   rng.uniform(0.1, 0.3, 6), rng.uniform(0.1, 0.3, 6),
                                   rng.uniform(0, 1, 6)]), requires_grad=True)
    gt = np.column_stack([rng.uniform(0.3, 0.7, 6), rng.uniform(0.3, 0.7, 6),
                          rng.uniform(0.1, 0.3, 6), rng.uniform(0.1, 0.3, 6), rng.uniform(0, 0.5, 6)])
    _, alpha = ciou_loss_tensor(pred, gt)
    assert check(lambda: ciou_loss_tensor(pred, gt, alpha=alpha)[0].sum(), [pred]) < 1e-4


def test_surrogate_separates_mirrored_angle():
    gt = [0.5, 0.5, 0.2, 0.08, 41 / 360]
    true = ciou_loss_tensor(Tensor([gt]), [gt])[0].data[0]
    mirror = ciou_loss_tensor(Tensor([gt[:4] + [139 / 360]]), [gt])[0].data[0]
    half_turn = ciou_loss_tensor(Tensor([gt[:4] + [221 / 360]]), [gt])[0].data[0]
    assert true == 0.0 and mirror > 0.5
    assert half_turn == pytest.approx(0.0, abs=1e-12)


def test_surrogate_continuous_at_equal_angles():
    p = [0.45, 0.52, 0.2, 0.1, 0.1]
    g = [0.5, 0.5, 0.18, 0.12, 0.1]
    at = ciou_loss_tensor(Tensor([p]), [g])[0].data[0]
    near = ciou_loss_tensor(Tensor([p[:4] + [0.1 + 1e-9]]), [g])[0].data[0]
    assert abs(at - near) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 0.5), st.floats(1e-3, 0.25))
def test_surrogate_grows_with_relative_angle(ga, d):
    gt = [0.5, 0.5, 0.2, 0.1, ga]
    small = ciou_loss_tensor(Tensor([gt[:4] + [ga + d / 2]]), [gt])[0].data[0]
    large = ciou_loss_tensor(Tensor([gt[:4] + [ga + d]]), [gt])[0].data[0]
    assert small <= large + 1e-12
