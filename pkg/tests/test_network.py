"""Replication layer, stage shapes, initialization and stacking."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stackrecon.geometry.grids import SilhouetteImage
from stackrecon.network import (
    NetworkSpec,
    extents_trace,
    init_params,
    replicate,
    stacked_forward,
    stage_forward,
)
from stackrecon.tensor import Tensor, no_grad


def tiny_spec(R=16, w=1 / 16):
    return NetworkSpec(resolution=R, width_mult=w)


class TestReplicate:
    def test_full_mask(self):
        s = SilhouetteImage(np.ones((4, 4), dtype=int))
        # R=4 is below the network minimum but replicate itself does not care
        assert replicate(s, 4).values.all()

    def test_single_pixel_column(self):
        px = np.zeros((16, 16), dtype=int)
        px[3, 11] = 1
        v = replicate(SilhouetteImage(px), 16).values
        assert v.sum() == 16
        assert v[:, 3, 11].all()

    @settings(max_examples=50)
    @given(arrays(np.uint8, (16, 16), elements=st.integers(0, 1)))
    def test_max_projection_is_identity(self, px):
        v = replicate(SilhouetteImage(px), 16).values
        assert (v.max(axis=0) == px).all()

    def test_resizes_nearest(self):
        s = SilhouetteImage(np.eye(8, dtype=int))
        assert replicate(s, 16).values.shape == (16, 16, 16)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError, match="square"):
            replicate(SilhouetteImage(np.zeros((4, 5), dtype=int)), 16)


class TestSpec:
    def test_extents_r32(self):
        assert extents_trace(NetworkSpec(resolution=32)) == [32, 16, 8, 4, 2, 4, 8, 16, 32]

    @pytest.mark.parametrize("R", [16, 48, 64])
    def test_shape_preserving(self, R):
        trace = extents_trace(NetworkSpec(resolution=R))
        assert trace[0] == trace[-1] == R and trace[4] == R // 16

    def test_r48_accepted_r50_rejected(self):
        NetworkSpec(resolution=48)
        with pytest.raises(ValueError, match="multiple of 16"):
            NetworkSpec(resolution=50)

    def test_width_multiplier_channels(self):
        layers = NetworkSpec(width_mult=0.125).layers()
        assert layers[0]["c_out"] == 8
        assert [l["c_out"] for l in NetworkSpec().layers()] == [64, 256, 512, 1024, 1024, 512, 256, 64, 1]

    def test_bad_width(self):
        with pytest.raises(ValueError):
            NetworkSpec(width_mult=0.0)

    def test_round_trip(self):
        spec = NetworkSpec(resolution=48, width_mult=0.5, activation="relu")
        assert NetworkSpec.from_dict(spec.to_dict()) == spec


class TestInit:
    def test_deterministic(self):
        a = init_params(tiny_spec(), seed=3)
        b = init_params(tiny_spec(), seed=3)
        for (_, x), (_, y) in zip(a.named_parameters(), b.named_parameters()):
            assert np.array_equal(x.data, y.data)

    def test_biases_zero_and_stages_independent(self):
        p = init_params(tiny_spec(), n_stages=2)
        for name, t in p.named_parameters():
            if name.endswith(".bias"):
                assert not t.data.any()
        w1 = p.stages[0].weights["conv1.weight"].data
        w2 = p.stages[1].weights["conv1.weight"].data
        assert not np.array_equal(w1, w2)

    def test_weight_scale(self):
        spec = NetworkSpec(resolution=16, width_mult=0.25)
        for layer in spec.layers():
            k, ci = layer["kernel"], layer["c_in"]
            w = init_params(spec, 1).stages[0].weights[layer["name"] + ".weight"].data
            fan_in = ci * k ** 3 if layer["kind"] == "conv" else ci * max(1, k // 2) ** 3
            if w.size >= 10_000:
                # zero mean within 5 standard errors, std within 5%
                assert abs(w.mean()) <= 5 * w.std() / np.sqrt(w.size)
                assert abs(w.std() / np.sqrt(2 / fan_in) - 1) < 0.05

    def test_sharing_counts(self):
        spec = tiny_spec()
        one = init_params(spec, 1).count()
        assert init_params(spec, 3, share_weights=True).count() == one
        assert init_params(spec, 3).count() == 3 * one


class TestForward:
    def test_output_range_and_shape(self):
        p = init_params(tiny_spec(), 2)
        x = Tensor(np.random.default_rng(0).random((2, 1, 16, 16, 16)))
        with no_grad():
            ys = stacked_forward(p, x)
            extreme = stacked_forward(p, Tensor(x.data * 1e3))
        assert len(ys) == 2
        for y in ys:
            assert y.shape == (2, 1, 16, 16, 16)
            assert (y.data > 0).all() and (y.data < 1).all()
        # far-out logits round to the closed interval in floating point
        for y in extreme:
            assert np.isfinite(y.data).all() and (y.data >= 0).all() and (y.data <= 1).all()

    def test_single_stage_is_stage_forward(self):
        p = init_params(tiny_spec(), 1, seed=2)
        x = Tensor(np.random.default_rng(1).random((1, 1, 16, 16, 16)))
        assert np.array_equal(stacked_forward(p, x)[0].data, stage_forward(p.stages[0], x, p.spec).data)

    def test_shared_second_stage_applies_same_function(self):
        p = init_params(tiny_spec(), 2, seed=2, share_weights=True)
        x = Tensor(np.random.default_rng(1).random((1, 1, 16, 16, 16)))
        y1, y2 = stacked_forward(p, x)
        assert np.array_equal(y2.data, stage_forward(p.stages[0], y1, p.spec).data)

    def test_wrong_resolution(self):
        p = init_params(tiny_spec(), 1)
        with pytest.raises(ValueError, match="resolution"):
            stacked_forward(p, Tensor(np.zeros((1, 1, 32, 32, 32))))
