import math

import numpy as np
import pytest

from memespace import errors
from memespace.losses import (
    ContrastiveBatchItem,
    cross_entropy,
    joint_loss,
    joint_weights,
    nll_from_sims,
    rgcll,
    triplet,
)

from conftest import central_diff, max_rel_err

METRICS = ["cosine", "inner_product", "neg_l2"]


class TestRgcll:
    @pytest.mark.parametrize("m", [1, 2, 4, 63])
    def test_uniform_sims_closed_form(self, m):
        # all vectors equal: every similarity ties, loss is exactly ln(m+1)
        v = np.array([0.3, -0.7, 0.2])
        item = ContrastiveBatchItem(v, v.copy(), [v.copy() for _ in range(m)])
        out = rgcll(item, "cosine")
        assert abs(out.value - math.log(m + 1)) < 1e-9

    def test_monotone_decreasing_in_positive_sim(self):
        negs = np.array([0.2, -0.1, 0.4])
        losses = [nll_from_sims(s, negs)[0] for s in np.linspace(-1, 5, 30)]
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_monotone_increasing_in_negative_sim(self):
        losses = [nll_from_sims(0.5, np.array([s, 0.0]))[0] for s in np.linspace(-2, 2, 20)]
        assert all(a < b for a, b in zip(losses, losses[1:]))

    def test_scaled_positive_drives_loss_to_zero(self):
        # inner-product metric: growing the positive's similarity monotonically
        # shrinks the loss toward zero
        a = np.array([1.0, 0.5])
        neg = np.array([0.2, -0.3])
        prev = None
        for c in (1.0, 4.0, 16.0, 64.0):
            out = rgcll(ContrastiveBatchItem(a, c * a, [neg]), "inner_product")
            if prev is not None:
                assert out.value < prev
            prev = out.value
        assert prev < 1e-10

    def test_nonnegative(self, rng):
        for _ in range(50):
            item = ContrastiveBatchItem(rng.standard_normal(4), rng.standard_normal(4),
                                        [rng.standard_normal(4) for _ in range(3)])
            assert rgcll(item, "cosine").value >= 0.0

    @pytest.mark.parametrize("metric", METRICS)
    def test_gradients_finite_difference(self, rng, metric):
        for _ in range(20):
            n = int(rng.integers(2, 6))
            m = int(rng.integers(1, 5))
            a = rng.standard_normal(n)
            p = rng.standard_normal(n)
            negs = [rng.standard_normal(n) for _ in range(m)]
            out = rgcll(ContrastiveBatchItem(a, p, negs), metric)

            def loss_a(v):
                return rgcll(ContrastiveBatchItem(v, p, negs), metric).value

            def loss_p(v):
                return rgcll(ContrastiveBatchItem(a, v, negs), metric).value

            assert max_rel_err(out.d_anchor, central_diff(loss_a, a, h=1e-4)) < 1e-4
            assert max_rel_err(out.d_pos, central_diff(loss_p, p, h=1e-4)) < 1e-4
            for j in range(m):
                def loss_n(v, j=j):
                    negs2 = [v if i == j else negs[i] for i in range(m)]
                    return rgcll(ContrastiveBatchItem(a, p, negs2), metric).value
                assert max_rel_err(out.d_negs[j], central_diff(loss_n, negs[j], h=1e-4)) < 1e-4

    def test_empty_negatives_rejected(self):
        with pytest.raises(errors.InvariantViolation):
            ContrastiveBatchItem(np.ones(2), np.ones(2), [])

    def test_zero_norm_cosine(self):
        with pytest.raises(errors.ZeroNormVector):
            rgcll(ContrastiveBatchItem(np.zeros(2), np.ones(2), [np.ones(2)]), "cosine")


class TestTriplet:
    def test_inactive_region(self):
        a = np.array([1.0, 0.0])
        p = np.array([1.0, 0.0])     # sim(a, p) = 1
        n = np.array([-1.0, 0.0])    # sim(a, n) = -1
        out = triplet(a, p, n, margin=0.2, metric="cosine")
        assert out.value == 0.0
        assert not out.d_anchor.any() and not out.d_pos.any() and not out.d_negs[0].any()

    def test_pos_equals_neg_gives_margin(self, rng):
        a = rng.standard_normal(3)
        p = rng.standard_normal(3)
        out = triplet(a, p, p.copy(), margin=0.2, metric="cosine")
        assert out.value == pytest.approx(0.2)

    @pytest.mark.parametrize("metric", METRICS)
    def test_active_region_finite_difference(self, rng, metric):
        checked = 0
        while checked < 20:
            a = rng.standard_normal(4)
            p = rng.standard_normal(4)
            n = rng.standard_normal(4)
            out = triplet(a, p, n, 0.5, metric)
            if out.value <= 1e-3:  # stay away from the hinge kink
                continue
            checked += 1
            assert max_rel_err(out.d_anchor,
                               central_diff(lambda v: triplet(v, p, n, 0.5, metric).value, a, h=1e-4)) < 1e-4
            assert max_rel_err(out.d_pos,
                               central_diff(lambda v: triplet(a, v, n, 0.5, metric).value, p, h=1e-4)) < 1e-4
            assert max_rel_err(out.d_negs[0],
                               central_diff(lambda v: triplet(a, p, v, 0.5, metric).value, n, h=1e-4)) < 1e-4


class TestCrossEntropy:
    def test_ln2_at_zero_logit(self):
        assert abs(cross_entropy(0.0, 1).value - math.log(2)) < 1e-12

    def test_confident_correct_is_tiny(self):
        assert cross_entropy(20.0, 1).value < 1e-8

    def test_gradient_is_p_minus_y(self):
        for logit in (-3.0, -0.5, 0.0, 1.5, 4.0):
            for y in (0, 1):
                out = cross_entropy(logit, y)
                p = 1 / (1 + math.exp(-logit))
                assert out.d_logit == pytest.approx(p - y, abs=1e-12)
                fd = central_diff(lambda v: cross_entropy(v[0], y).value, np.array([logit]), h=1e-6)
                assert abs(out.d_logit - fd[0]) < 1e-6

    def test_extreme_logits_stable(self):
        assert np.isfinite(cross_entropy(1000.0, 0).value)
        assert np.isfinite(cross_entropy(-1000.0, 1).value)


class TestJointLoss:
    def test_lambda_zero_is_pure_ce(self):
        assert joint_loss(5.0, 0.3, 0.0) == 0.3

    def test_default_mix(self):
        assert joint_loss(math.log(2), math.log(2), 1.0) == pytest.approx(2 * math.log(2))

    def test_linear_in_lambda(self):
        r, c = 0.7, 0.4
        for lam in (0.5, 2.0, 4.0):
            assert joint_loss(r, c, lam) == pytest.approx(lam * r + c)

    def test_infinite_lambda_drops_ce(self):
        assert joint_loss(0.7, 123.0, float("inf")) == 0.7
        assert joint_weights(float("inf")) == (1.0, 0.0)

    def test_negative_lambda_rejected(self):
        with pytest.raises(errors.DimensionMismatch):
            joint_loss(1.0, 1.0, -0.1)
