"""Losses, optimizer, schedule, metrics and the training loop."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casinet import ops
from casinet.autograd import Param, Var
from casinet.config import ConfigError, LossConfig, OptimConfig, RunConfig
from casinet.data import make_split
from casinet.losses import balanced_class_weights, ce_loss, ohem_mean, resolve_class_weights, total_loss
from casinet.metrics import ConfusionMatrix, miou
from casinet.optim import SGD, poly_lr, sgd_step
from casinet.train import evaluate, history_csv, train
from oracles import confusion_loop


class TestCrossEntropyLoss:
    def test_uniform_two_class(self):
        loss = ce_loss(Var(np.zeros((2, 2, 3, 3))), np.zeros((2, 3, 3), dtype=int), LossConfig())
        assert float(loss.data) == pytest.approx(math.log(2), abs=1e-15)

    def test_ohem_keep_one_is_bitwise_plain(self):
        g = np.random.default_rng(0)
        logits = g.normal(size=(2, 4, 5, 5))
        labels = g.integers(0, 4, size=(2, 5, 5))
        w = g.random(4) + 0.1
        plain = ops.cross_entropy(logits, labels, w, 255)
        ohem = ce_loss(Var(logits), labels, LossConfig(ohem_keep_fraction=1.0), w)
        assert float(plain.data) == float(ohem.data)

    def test_ohem_half_of_four(self):
        assert ohem_mean([1.0, 2.0, 3.0, 4.0], 0.5) == 3.5

    def test_all_ignored(self):
        with pytest.raises(ValueError, match="all pixels ignored"):
            ce_loss(Var(np.zeros((1, 2, 2, 2))), np.full((1, 2, 2), 255), LossConfig())

    @pytest.mark.parametrize("bad", [0.0, 1.5])
    def test_keep_fraction_range(self, bad):
        with pytest.raises(ConfigError):
            LossConfig(ohem_keep_fraction=bad)


class TestClassWeights:
    def test_inverse_frequency_clipped(self):
        w = balanced_class_weights([0.7, 0.2, 0.1, 0.0])
        np.testing.assert_allclose(w, [1 / 2.8, 1 / 0.8, 1 / 0.4, 10.0])
        assert balanced_class_weights([0.999, 0.001]).tolist() == [pytest.approx(1 / 1.998), 10.0]

    def test_uniform_is_one(self):
        np.testing.assert_allclose(balanced_class_weights([0.25] * 4), 1.0)

    def test_modes(self):
        assert resolve_class_weights(LossConfig(class_weights="none"), 3).tolist() == [1.0, 1.0, 1.0]
        assert resolve_class_weights(LossConfig(class_weights=(1.0, 2.0)), 2).tolist() == [1.0, 2.0]
        with pytest.raises(ValueError):
            resolve_class_weights(LossConfig(), 3)


class TestTotalLoss:
    def test_default_aux_weight(self):
        assert total_loss(1.0, 0.5, 0.4) == pytest.approx(1.2, abs=1e-15)

    def test_zero_weight_and_zero_losses(self):
        assert total_loss(0.7, 5.0, 0.0) == 0.7
        assert total_loss(0.0, 0.0, 0.4) == 0.0

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            total_loss(1.0, 1.0, -0.1)

    def test_on_graph(self):
        out = total_loss(Var(np.array(1.0)), Var(np.array(0.5)), 0.4)
        assert float(out.data) == pytest.approx(1.2)


class TestPolyLr:
    def test_endpoints(self):
        cfg = OptimConfig(total_iters=2000)
        assert poly_lr(0, cfg) == 0.01
        assert poly_lr(2000, cfg) == 0.0

    def test_half(self):
        assert poly_lr(1000, OptimConfig(total_iters=2000)) == pytest.approx(0.01 * 0.5 ** 0.9, rel=1e-15)
        assert poly_lr(1000, OptimConfig(total_iters=2000)) == pytest.approx(0.0053589, abs=1e-7)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            poly_lr(2001, OptimConfig(total_iters=2000))

    def test_strictly_decreasing(self):
        cfg = OptimConfig(total_iters=300)
        lrs = [poly_lr(i, cfg) for i in range(301)]
        assert all(a > b for a, b in zip(lrs, lrs[1:]))


class TestSgd:
    def test_lr_zero(self):
        p, _ = sgd_step([np.array([1.5])], [np.array([3.0])], 0.0, 0.9, 0.1)
        assert p[0].tolist() == [1.5]

    def test_plain_step(self):
        p, _ = sgd_step([np.array([1.0])], [np.array([0.5])], 0.1, 0.0, 0.0)
        assert p[0][0] == pytest.approx(0.95, abs=1e-15)

    def test_momentum_and_decay(self):
        p, v = sgd_step([np.array([2.0])], [np.array([1.0])], 0.1, 0.9, 0.5, velocity=[np.array([1.0])])
        # v = 0.9*1 + 1 + 0.5*2 = 2.9 ; p = 2 - 0.29
        assert v[0][0] == pytest.approx(2.9) and p[0][0] == pytest.approx(1.71)

    def test_quadratic_bowl(self):
        """f(p) = p^2: gradient 2p, plain descent shrinks |p| monotonically."""
        p = [np.array([1.0])]
        trace = [1.0]
        for _ in range(100):
            p, _ = sgd_step(p, [2 * p[0]], 0.05, 0.0, 0.0)
            trace.append(abs(p[0][0]))
        assert all(a > b for a, b in zip(trace, trace[1:]))
        assert trace[-1] < 1e-3

    def test_non_finite(self):
        with pytest.raises(FloatingPointError):
            sgd_step([np.array([1.0])], [np.array([np.nan])], 0.1, 0.9, 0.0)

    def test_class_matches_functional_and_skips_bn_decay(self):
        w, b = Param(np.array([1.0, -2.0])), Param(np.array([0.5]), decay=False)
        w.grad, b.grad = np.array([0.1, 0.2]), np.array([0.3])
        opt = SGD([w, b], momentum=0.9, weight_decay=0.01)
        opt.step(0.1)
        ref_w, _ = sgd_step([np.array([1.0, -2.0])], [np.array([0.1, 0.2])], 0.1, 0.9, 0.01)
        ref_b, _ = sgd_step([np.array([0.5])], [np.array([0.3])], 0.1, 0.9, 0.0)
        np.testing.assert_array_equal(w.data, ref_w[0])
        np.testing.assert_array_equal(b.data, ref_b[0])


class TestMiou:
    def test_hand_example(self):
        per, mean = miou(ConfusionMatrix.from_counts([[3, 1], [2, 4]]))
        assert per[0] == pytest.approx(0.5) and per[1] == pytest.approx(4 / 7)
        assert mean == pytest.approx(0.5357, abs=1e-4)

    def test_perfect(self):
        cm = ConfusionMatrix(3)
        lab = np.array([[0, 1, 2], [2, 1, 0]])
        cm.update(lab, lab)
        per, mean = miou(cm)
        assert per == [1.0, 1.0, 1.0] and mean == 1.0

    def test_all_ignored(self):
        cm = ConfusionMatrix(2)
        cm.update(np.zeros((2, 2), int), np.full((2, 2), 255))
        with pytest.raises(ValueError, match="all pixels ignored"):
            miou(cm)

    def test_absent_class_excluded(self):
        per, mean = miou(ConfusionMatrix.from_counts([[2, 0, 0], [1, 3, 0], [0, 0, 0]]))
        assert per[2] is None and mean == pytest.approx((2 / 3 + 3 / 4) / 2)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31))
    def test_matches_loop_and_is_label_permutation_invariant(self, seed):
        g = np.random.default_rng(seed)
        labels = g.integers(0, 4, size=(3, 5, 5))
        labels[0, 0] = 255
        pred = g.integers(0, 4, size=(3, 5, 5))
        cm = ConfusionMatrix(4)
        cm.update(pred, labels)
        np.testing.assert_array_equal(cm.counts, confusion_loop(pred, labels, 4, 255))
        perm = g.permutation(4)
        relabel = np.append(perm, 0)
        lab_p = np.where(labels == 255, 255, relabel[np.minimum(labels, 4)])
        cm2 = ConfusionMatrix(4)
        cm2.update(perm[pred], lab_p)
        assert miou(cm2)[1] == pytest.approx(miou(cm)[1], abs=1e-15)

    def test_merge_is_additive(self):
        a, b = ConfusionMatrix(2), ConfusionMatrix(2)
        a.update(np.array([0, 1]), np.array([0, 0]))
        b.update(np.array([1, 1]), np.array([1, 0]))
        a.merge(b)
        assert a.counts.tolist() == [[1, 2], [0, 1]] and a.total == 4


SMALL_RUN = {
    "image_size": "32", "train_count": "16", "val_count": "4", "batch_size": "4",
    "total_iters": "30", "backbone_channels": "8", "branch_channels": "8",
}


class TestTrainLoop:
    def test_deterministic_and_logged(self):
        run = RunConfig().with_overrides({**SMALL_RUN, "eval_interval": "10"})
        ds = make_split(run.scene, run.train_count, run.val_count)
        a, b = train(run, ds), train(run, ds)
        assert a.losses == b.losses
        assert evaluate(a.model, ds.val) == evaluate(b.model, ds.val)
        csv = history_csv(a).splitlines()
        assert csv[0] == "iter,lr,train_loss,val_miou" and len(csv) == 4

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_loss_decreases(self, seed):
        run = RunConfig().with_overrides({**SMALL_RUN, "total_iters": "80", "seed": str(seed)})
        ds = make_split(run.scene, run.train_count, run.val_count)
        losses = train(run, ds).losses
        n = len(losses) // 10
        assert np.mean(losses[-n:]) < np.mean(losses[:n])

    def test_metrics_keys(self):
        run = RunConfig().with_overrides(SMALL_RUN)
        ds = make_split(run.scene, run.train_count, run.val_count)
        m = evaluate(train(run, ds).model, ds.val)
        assert set(m) == {"per_class_iou", "miou", "pixel_acc"}
        assert 0.0 <= m["miou"] <= 1.0 and 0.0 <= m["pixel_acc"] <= 1.0
