import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srkocl.eca import (EcaBlock, channel_descriptor, eca_apply, eca_forward, eca_gate,
                        kernel_size_rule, make_eca_block)
from srkocl.tensor import ShapeError, conv1d, grad_check, mul, sigmoid, sum_all, tensor
from srkocl.verify import brute_force_kernel_size


# ---------------------------------------------------------------------------
# kernel size rule


@pytest.mark.parametrize("channels,expected", [
    (64, 3),    # |log2(64)/2 + 0.5| = 3.5 -> nearest odd 3 (tie down)
    (512, 5),   # 4.5 + 0.5 = 5 -> 5
    (2, 1),     # 0.5 + 0.5 = 1 -> 1
    (1, 1),
    (160, 5),   # 4.16 -> closer to 5 than 3
    (20, 3),
])
def test_kernel_size_rule_values(channels, expected):
    assert kernel_size_rule(channels) == expected


def test_kernel_size_rule_rejects_bad_args():
    with pytest.raises(ValueError):
        kernel_size_rule(0)
    with pytest.raises(ValueError):
        kernel_size_rule(8, lam=0.0)


def test_kernel_size_rule_monotone_and_odd():
    ks = [kernel_size_rule(c) for c in range(1, 1025)]
    assert all(k % 2 == 1 for k in ks)
    assert all(b >= a for a, b in zip(ks, ks[1:]))


@settings(max_examples=80, deadline=None)
@given(channels=st.integers(1, 4096))
def test_kernel_size_rule_matches_brute_force(channels):
    assert kernel_size_rule(channels) == brute_force_kernel_size(channels)


# ---------------------------------------------------------------------------
# descriptor, gate, apply


def test_channel_descriptor_constant_map():
    d = channel_descriptor(tensor(np.full((2, 3, 4), 1.5)))
    npt.assert_array_equal(d.data, np.full(4, 1.5))


def test_channel_descriptor_per_channel_means():
    z = np.zeros((2, 2, 2))
    z[:, :, 1] = 2.0
    npt.assert_array_equal(channel_descriptor(tensor(z)).data, [0.0, 2.0])


def test_eca_gate_zero_descriptor_is_half():
    block = EcaBlock(channels=4, kernel_size=3, weights=tensor([0.2, -0.4, 0.1]))
    s = eca_gate(tensor(np.zeros(4)), block)
    npt.assert_array_equal(s.data, np.full(4, 0.5))


def test_eca_gate_zero_weight_is_half():
    block = EcaBlock(channels=3, kernel_size=1, weights=tensor([0.0]))
    s = eca_gate(tensor([5.0, -7.0, 2.0]), block)
    npt.assert_array_equal(s.data, np.full(3, 0.5))


def test_eca_gate_identity_kernel_closed_form():
    block = EcaBlock(channels=2, kernel_size=3, weights=tensor([0.0, 1.0, 0.0]))
    s = eca_gate(tensor([math.log(3), 0.0]), block)
    npt.assert_allclose(s.data, [0.75, 0.5], rtol=1e-15)


def test_eca_gate_length_mismatch():
    block = EcaBlock(channels=4, kernel_size=1, weights=tensor([1.0]))
    with pytest.raises(ShapeError):
        eca_gate(tensor(np.zeros(3)), block)


def test_eca_apply_identity_and_zero_gates():
    z = tensor(np.random.default_rng(0).normal(size=(2, 3, 4)))
    npt.assert_array_equal(eca_apply(z, tensor(np.ones(4))).data, z.data)
    npt.assert_array_equal(eca_apply(z, tensor(np.zeros(4))).data, np.zeros((2, 3, 4)))


def test_eca_apply_scales_channels():
    z = np.zeros((2, 2, 2))
    z[:, :, 0] = 2.0
    z[:, :, 1] = 4.0
    out = eca_apply(tensor(z), tensor([0.5, 0.25]))
    npt.assert_array_equal(out.data[:, :, 0], np.full((2, 2), 1.0))
    npt.assert_array_equal(out.data[:, :, 1], np.full((2, 2), 1.0))


# ---------------------------------------------------------------------------
# full block


def test_eca_forward_zero_input_stays_zero():
    block = make_eca_block(3, np.random.default_rng(1))
    out = eca_forward(tensor(np.zeros((4, 4, 3))), block)
    npt.assert_array_equal(out.data, np.zeros((4, 4, 3)))


def test_eca_forward_zero_weights_halves_input():
    z = tensor(np.random.default_rng(2).normal(size=(3, 3, 5)))
    block = EcaBlock(channels=5, kernel_size=3, weights=tensor(np.zeros(3)))
    npt.assert_allclose(eca_forward(z, block).data, 0.5 * z.data, rtol=1e-15)


def test_eca_forward_equals_hand_composition():
    rng = np.random.default_rng(3)
    z = tensor(rng.normal(size=(3, 5, 6)))
    block = make_eca_block(6, rng)
    composed = eca_apply(z, eca_gate(channel_descriptor(z), block))
    npt.assert_array_equal(eca_forward(z, block).data, composed.data)


def test_eca_forward_batched_matches_per_example():
    rng = np.random.default_rng(4)
    zs = rng.normal(size=(3, 2, 4, 6))
    block = make_eca_block(6, rng)
    batched = eca_forward(tensor(zs), block).data
    for i in range(3):
        npt.assert_array_equal(batched[i], eca_forward(tensor(zs[i]), block).data)


def test_gates_strictly_bounded_and_contractive():
    rng = np.random.default_rng(5)
    z = tensor(rng.normal(size=(4, 4, 8)) * 10)
    block = make_eca_block(8, rng, init_scale=2.0)
    s = eca_gate(channel_descriptor(z), block)
    assert np.all(s.data > 0.0) and np.all(s.data < 1.0)
    out = eca_forward(z, block)
    assert np.all(np.abs(out.data) <= np.abs(z.data))


def test_gate_locality():
    """Perturbing descriptor entry j moves gates only within (k-1)/2 channels."""
    rng = np.random.default_rng(6)
    c, k = 9, 3
    block = EcaBlock(channels=c, kernel_size=k, weights=tensor(rng.normal(size=k)))
    d = rng.normal(size=c)
    base = eca_gate(tensor(d), block).data
    for j in range(c):
        bumped = d.copy()
        bumped[j] += 1.0
        moved = np.nonzero(eca_gate(tensor(bumped), block).data != base)[0]
        assert all(abs(i - j) <= (k - 1) // 2 for i in moved)


def test_parameter_count_is_k_regardless_of_channels():
    rng = np.random.default_rng(7)
    for c in (2, 64, 500):
        block = make_eca_block(c, rng)
        assert block.weights.data.size == block.kernel_size == kernel_size_rule(c)


def test_eca_forward_grad_check():
    rng = np.random.default_rng(8)
    for _ in range(20):
        c = int(rng.integers(1, 9))
        block = make_eca_block(c, rng)
        z = tensor(rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(1, 4)), c)),
                   requires_grad=True)
        proj = tensor(rng.normal(size=z.data.shape))
        err = grad_check(lambda t: sum_all(mul(eca_forward(t, block), proj)), z)
        assert err < 1e-4
        w = tensor(block.weights.data, requires_grad=True)
        err_w = grad_check(
            lambda t: sum_all(mul(eca_forward(z, EcaBlock(c, block.kernel_size, t)), proj)), w)
        assert err_w < 1e-4


def test_gate_is_sigmoid_of_shared_conv():
    rng = np.random.default_rng(9)
    d = tensor(rng.normal(size=7))
    block = make_eca_block(7, rng)
    direct = sigmoid(conv1d(d, block.weights))
    npt.assert_array_equal(eca_gate(d, block).data, direct.data)
