import numpy as np
import pytest

from ctvseg.align import AlignmentModule, Aligner, CapacityError, sinusoidal_3d
from ctvseg.diffcore import Tensor, backward, ops, precision


def make(channels=8, dim=6, seed=0, **kw):
    with precision(np.float32):
        return AlignmentModule(channels, dim, np.random.default_rng(seed), heads=2, **kw)


def rand(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape).astype(np.float32))


def test_project_context_examples():
    mod = make(channels=32, dim=64)
    g = rand((4, 64))
    assert mod.project_context(g).shape == (4, 32)
    mod.project.weight.data[...] = 0
    mod.project.bias.data[...] = 0
    assert not mod.project_context(g).data.any()


def test_levels_have_separate_projections():
    with precision(np.float32):
        al = Aligner((4, 8), 6, np.random.default_rng(0), heads=2)
    g = rand((1, 3, 6))
    before = al.modules[1].project_context(g).data.copy()
    al.modules[0].project.weight.data += 1.0
    np.testing.assert_array_equal(before, al.modules[1].project_context(g).data)


def test_interact_shape_and_determinism():
    mod = make(channels=16)
    f, g = rand((1, 16, 4, 4, 2)), rand((1, 4, 6), 1)
    out = mod(f, g)
    assert out.shape == f.shape and np.isfinite(out.data).all()
    assert mod(f, g).data.tobytes() == out.data.tobytes()


def test_zeroed_outputs_pass_image_through():
    mod = make()
    f, g = rand((2, 8, 4, 2, 2)), rand((2, 3, 6), 1)
    mod.zero_outputs()
    np.testing.assert_array_equal(mod(f, g).data, f.data)


def test_attention_rows_stochastic():
    mod = make()
    mod(rand((1, 8, 2, 2, 2)), rand((1, 3, 6), 1))
    for a in mod.attentions():
        w = a.last_weights
        assert w is not None
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)


def test_token_cap():
    mod = make(token_cap=15)
    with pytest.raises(CapacityError, match="smaller patch"):
        mod(rand((1, 8, 4, 2, 2)), rand((1, 3, 6)))


def test_align_all_levels_and_deepest():
    with precision(np.float32):
        al = Aligner((4, 8), 6, np.random.default_rng(0), heads=2)
        deep = Aligner((4, 8), 6, np.random.default_rng(0), heads=2, deepest=1)
    feats = [rand((1, 4, 4, 4, 2)), rand((1, 8, 2, 2, 1), 1)]
    g = rand((1, 3, 6), 2)
    out = al.align_all(feats, g)
    assert [o.shape for o in out] == [f.shape for f in feats]
    out = deep.align_all(feats, g)
    assert out[0] is feats[0] and out[1].shape == feats[1].shape


def test_context_change_changes_output():
    mod = make()
    f = rand((1, 8, 2, 2, 2))
    assert not np.array_equal(mod(f, rand((1, 3, 6), 1)).data, mod(f, rand((1, 3, 6), 2)).data)


def test_gradient_to_context_only_through_projection():
    mod = make()
    f = rand((1, 8, 2, 2, 2))
    g = Tensor(np.random.default_rng(1).standard_normal((1, 3, 6)), requires_grad=True)
    backward(ops.mean(mod(f, g)))
    assert np.any(g.grad)
    mod.project.weight.data[...] = 0
    g.grad = None
    backward(ops.mean(mod(f, g)))
    assert not np.any(g.grad)


def test_sinusoidal_layout():
    pe = sinusoidal_3d((3, 2, 2), 14)
    assert pe.shape == (12, 14)
    assert not pe[:, 12:].any()  # 2*(14//6)=4 channels per axis, 2 padded
    np.testing.assert_allclose(pe[:, 0:2] ** 2 + pe[:, 2:4] ** 2, 1.0)
