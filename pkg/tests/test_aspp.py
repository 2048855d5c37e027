"""Dilated-convolution pyramid."""

import numpy as np
import pytest

from casinet import ops
from casinet.aspp import AsppParams, ScaleStack, aspp_forward
from casinet.autograd import Var
from casinet.config import ModelConfig
from casinet.tensor import Rng


def make(cin=6, cout=4, dil=(1, 6, 12, 24, 36), seed=0):
    return AsppParams(cin, cout, dil, Rng(seed))


class TestAspp:
    def test_default_stack(self):
        cfg = ModelConfig()
        p = make(dil=cfg.dilations)
        stack = aspp_forward(np.random.default_rng(0).normal(size=(2, 6, 16, 16)), p, cfg)
        assert stack.K == 5 and stack.dilations == (1, 6, 12, 24, 36)
        assert len(stack.scales) == 5
        assert all(s.shape == (2, 4, 16, 16) for s in stack.scales)

    def test_zero_input_zero_output(self):
        out = aspp_forward(np.zeros((2, 6, 8, 8)), make()).array()
        assert (out == 0).all()

    def test_branch_is_conv_bn_relu(self):
        """Each scale equals conv2d -> batchnorm -> relu composed from primitives."""
        p = make()
        x = np.random.default_rng(1).normal(size=(2, 6, 9, 7))
        stack = aspp_forward(x, p).array()
        for k, br in enumerate(p.branches):
            y = ops.conv2d(x, br.conv.weight.data, None, br.conv.dilation)
            y = ops.relu(ops.batchnorm(y, br.bn.gamma.data, br.bn.beta.data, "train"))
            np.testing.assert_allclose(stack[:, k], y.data, atol=1e-12)

    def test_branch_independence(self):
        p = make()
        x = np.random.default_rng(2).normal(size=(2, 6, 8, 8))
        before = aspp_forward(x, p).array()
        p.branches[2].conv.weight.data = p.branches[2].conv.weight.data * 1.5 + 0.1
        after = aspp_forward(x, p).array()
        changed = [not np.array_equal(before[:, k], after[:, k]) for k in range(5)]
        assert changed == [False, False, True, False, False]

    def test_no_shared_params(self):
        p = make()
        ids = {id(b.conv.weight) for b in p.branches}
        assert len(ids) == 5

    def test_channel_mismatch(self):
        with pytest.raises(ops.ShapeError):
            aspp_forward(np.zeros((1, 5, 8, 8)), make())


class TestScaleStack:
    def test_from_list(self):
        a = [np.full((1, 2, 3, 3), float(k)) for k in range(3)]
        s = ScaleStack.from_list(a, (1, 2, 3))
        assert s.shape == (1, 2, 3, 3) and s.K == 3
        assert s.scales[2].data[0, 0, 0, 0] == 2.0

    def test_mismatched_shapes(self):
        with pytest.raises(ops.ShapeError):
            ScaleStack.from_list([np.zeros((1, 2, 3, 3)), np.zeros((1, 2, 4, 3))])

    def test_dilation_count(self):
        with pytest.raises(ops.ShapeError):
            ScaleStack(Var(np.zeros((1, 2, 1, 2, 2))), (1, 2, 3))
