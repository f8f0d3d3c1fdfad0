import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctvseg.diffcore import Parameter, Tensor, backward, precision
from ctvseg.diffcore.nn import Linear, Module
from ctvseg.diffcore.tensor import ContractError
from ctvseg.objective import (
    AdamW, ConfigError, LossWeights, PartitionError, bce_loss, dice_loss, partition_params, total_loss,
)


def test_bce_examples():
    y = (np.random.default_rng(0).random((2, 1, 4, 4, 2)) < 0.5).astype(float)
    assert float(bce_loss(np.zeros_like(y), y).data) == pytest.approx(np.log(2), abs=1e-7)
    assert float(bce_loss(np.where(y > 0, 20.0, -20.0), y).data) < 1e-8
    assert float(bce_loss(np.array([1.0]), np.array([1.0])).data) == pytest.approx(0.313262, abs=1e-6)


def test_dice_examples():
    v = (1, 1, 8, 8, 4)
    assert float(dice_loss(np.full(v, 40.0), np.ones(v)).data) <= 1e-5
    assert float(dice_loss(np.full(v, -40.0), np.ones(v)).data) == pytest.approx(1.0, abs=1e-6)
    assert float(dice_loss(np.zeros(v), np.ones(v)).data) == pytest.approx(1 / 3, abs=1e-6)


def test_dice_is_per_sample():
    y = np.zeros((2, 1, 4, 4, 2))
    y[0] = 1
    z = np.where(y > 0, 40.0, -40.0)
    # sample 1 has an empty target and an empty prediction, so both score ~1
    assert float(dice_loss(z, y).data) < 1e-5


def test_shape_mismatch():
    with pytest.raises(ContractError):
        bce_loss(np.zeros((1, 1, 2, 2, 2)), np.zeros((1, 1, 2, 2, 1)))
    with pytest.raises(ContractError):
        dice_loss(np.zeros(3), np.zeros(4))


def test_total_loss_weights():
    rng = np.random.default_rng(1)
    z, y = rng.standard_normal((2, 1, 4, 4, 2)), (rng.random((2, 1, 4, 4, 2)) < 0.4).astype(float)
    assert total_loss(z, y, LossWeights(1, 0)).data == bce_loss(z, y).data
    assert total_loss(z, y, LossWeights(0, 1)).data == dice_loss(z, y).data
    ones = np.ones((1, 1, 4, 4, 2))
    expected = np.log(2) + float(dice_loss(np.zeros_like(ones), ones).data)
    assert float(total_loss(np.zeros_like(ones), ones).data) == pytest.approx(expected, abs=1e-7)


def test_loss_weight_validation():
    with pytest.raises(ConfigError):
        LossWeights(-1.0, 1.0)
    with pytest.raises(ConfigError):
        LossWeights(0.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_total_loss_non_negative(seed):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, 1, 3, 3, 2)) * 5
    y = (rng.random(z.shape) < 0.5).astype(float)
    assert float(total_loss(z, y).data) >= 0


def test_total_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    y = (rng.random((2, 1, 3, 3, 2)) < 0.5).astype(float)
    z0 = rng.standard_normal(y.shape)
    with precision(np.float64):
        z = Tensor(z0, requires_grad=True)
        backward(total_loss(z, y))
        num = np.zeros_like(z0)
        for i in np.ndindex(z0.shape):
            zp, zm = z0.copy(), z0.copy()
            zp[i] += 1e-5
            zm[i] -= 1e-5
            num[i] = (float(total_loss(zp, y).data) - float(total_loss(zm, y).data)) / 2e-5
    rel = np.abs(z.grad - num).max() / np.abs(num).max()
    assert rel < 1e-5


def test_adamw_step_descends():
    rng = np.random.default_rng(3)
    layer = Linear(6, 1, rng)
    x = rng.standard_normal((8, 6))
    y = (rng.random((8, 1)) < 0.5).astype(float)
    opt = AdamW(layer.parameters())
    before = float(total_loss(layer(Tensor(x)), y).data)
    backward(total_loss(layer(Tensor(x)), y))
    opt.step()
    assert float(total_loss(layer(Tensor(x)), y).data) < before


def test_adamw_skips_frozen_and_round_trips_state():
    a, b = Parameter(np.ones(3)), Parameter(np.ones(3), frozen=True)
    opt = AdamW([a, b], lr=0.1)
    a.grad = np.ones(3)
    b.grad = np.ones(3)
    opt.step()
    assert (a.data < 1).all() and (b.data == 1).all()
    other = AdamW([a, b])
    other.load_state(opt.state())
    assert other.t == 1 and other.m[0].tobytes() == opt.m[0].tobytes()


class _Net(Module):
    def __init__(self, frozen_lm: bool):
        rng = np.random.default_rng(0)
        self.body = Linear(2, 2, rng)
        self.lm = Linear(2, 2, rng)
        self.lm.set_frozen(frozen_lm)

    def frozen_parameters(self):
        return self.lm.parameters()


def test_partition_disjoint_and_exhaustive():
    net = _Net(True)
    trainable, frozen = partition_params(net)
    assert set(trainable) == {"body.weight", "body.bias"} and set(frozen) == {"lm.weight", "lm.bias"}


def test_partition_rejects_stray_frozen():
    net = _Net(True)
    net.body.weight.frozen = True
    with pytest.raises(PartitionError):
        partition_params(net)
