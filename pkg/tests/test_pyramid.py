import numpy as np
import pytest

from nrvqa import autograd as ag
from nrvqa.autograd import Tensor
from nrvqa.pyramid import (
    PyramidParams,
    aggregate_pyramid,
    frame_weights,
    fuse_scores,
    q_vid,
    slot_count,
    slot_plan,
    weight_frames,
)

from helpers import check_grads


def small_params(seed=0, hidden=4, kernel=3, levels=3):
    return PyramidParams.init(
        np.random.default_rng(seed), hidden=hidden, kernel=kernel, levels=levels
    )


class TestFrameWeights:
    def test_zero_params_give_zero_weights(self):
        p = small_params()
        for _, t in p.named():
            t.data[...] = 0.0
        w = frame_weights(Tensor(np.random.default_rng(0).standard_normal((6, 4))), p)
        np.testing.assert_array_equal(w.data, np.zeros(6))

    def test_bounds(self):
        rng = np.random.default_rng(1)
        p = small_params(2)
        for _ in range(20):
            t = int(rng.integers(1, 30))
            w = frame_weights(Tensor(rng.standard_normal((t, 4)) * 3), p).data
            assert w.shape == (t,)
            assert np.all((w > -1) & (w < 1))

    def test_gradcheck_through_both_convs(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, 4))
        p = small_params(4)

        def build(xt, k1, b1, k2, b2):
            q = PyramidParams(k1, b1, k2, b2, p.fc4_w, p.fc4_b, p.fc5_w, p.fc5_b,
                              levels=p.levels)
            return ag.reduce_sum(ag.square(frame_weights(xt, q)))

        check_grads(build, [x, p.conv1_k.data, p.conv1_b.data,
                            p.conv2_k.data, p.conv2_b.data])


class TestWeightFrames:
    def test_unit_weights_identity(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 3))
        out = weight_frames(Tensor(x), Tensor(np.ones(4)))
        np.testing.assert_array_equal(out.data, x)

    def test_zero_weight_zeroes_row(self):
        x = np.ones((3, 2))
        out = weight_frames(Tensor(x), Tensor([1.0, 0.0, 1.0]))
        np.testing.assert_array_equal(out.data[1], np.zeros(2))

    def test_negative_one_flips_row(self):
        x = np.arange(6.0).reshape(2, 3)
        out = weight_frames(Tensor(x), Tensor([1.0, -1.0]))
        np.testing.assert_array_equal(out.data[1], -x[1])

    def test_length_mismatch(self):
        with pytest.raises(ag.ShapeError):
            weight_frames(Tensor(np.ones((3, 2))), Tensor(np.ones(4)))


class TestAggregatePyramid:
    def test_constant_input_fills_every_slot(self):
        v = np.array([1.25, -3.5, 0.75])
        out = aggregate_pyramid(Tensor(np.tile(v, (11, 1))), levels=7)
        assert out.shape == (3, 127)
        np.testing.assert_array_equal(out.data, np.tile(v[:, None], (1, 127)))

    def test_dyadic_partition_t4_level2(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((4, 2))
        out = aggregate_pyramid(Tensor(x), levels=2).data
        # level 1 = global mean (slot 0); level 2 = halves (slots 1, 2)
        np.testing.assert_allclose(out[:, 1], x[:2].mean(axis=0), rtol=1e-15)
        np.testing.assert_allclose(out[:, 2], x[2:].mean(axis=0), rtol=1e-15)

    def test_single_frame_copies_everywhere(self):
        v = np.array([2.0, 3.0])
        out = aggregate_pyramid(Tensor(v[None, :]), levels=7).data
        np.testing.assert_array_equal(out, np.tile(v[:, None], (1, 127)))

    def test_column_count_fuzzed(self):
        rng = np.random.default_rng(7)
        ts = [1, 2, 3, 63, 64, 65, 127, 128, 10000]
        ts += [int(t) for t in rng.integers(1, 10001, size=40)]
        for t in ts:
            out = aggregate_pyramid(Tensor(rng.standard_normal((t, 2))), levels=7)
            assert out.shape == (2, 127)

    def test_level1_slot_is_global_mean(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((13, 3))
        out = aggregate_pyramid(Tensor(x), levels=7).data
        np.testing.assert_allclose(out[:, 0], x.mean(axis=0), rtol=1e-12)

    def test_each_level_partitions_frames(self):
        for t in (5, 8, 37, 130):
            plan = slot_plan(t, levels=7)
            k = 0
            for m in range(1, 8):
                s = 2 ** (m - 1)
                covered = []
                for entry in plan[k:k + s]:
                    if entry[0] == "mean":
                        covered.extend(range(entry[1], entry[2]))
                k += s
                if t >= s:
                    assert covered == list(range(t))

    def test_reversal_changes_deeper_levels(self):
        x = np.zeros((6, 1))
        x[:, 0] = [0, 1, 2, 3, 4, 5]
        fwd = aggregate_pyramid(Tensor(x), levels=3).data
        rev = aggregate_pyramid(Tensor(x[::-1].copy()), levels=3).data
        np.testing.assert_allclose(fwd[:, 0], rev[:, 0], rtol=1e-15)
        assert not np.array_equal(fwd[:, 1:], rev[:, 1:])

    def test_gradcheck(self):
        rng = np.random.default_rng(9)
        for t in (1, 3, 6):
            x = rng.standard_normal((t, 2))
            check_grads(
                lambda a: ag.reduce_sum(ag.square(aggregate_pyramid(a, levels=3))), [x]
            )


class TestQVid:
    def test_zero_weights_nonzero_biases(self):
        p = small_params(10, hidden=4, levels=3)
        p.fc4_w.data[...] = 0.0
        p.fc5_w.data[...] = 0.0
        p.fc4_b.data[...] = 2.5
        p.fc5_b.data[...] = -1.25
        f_vid = Tensor(np.random.default_rng(11).standard_normal((4, slot_count(3))))
        assert q_vid(f_vid, p).item() == -1.25

    def test_shape_guard(self):
        p = small_params(12, hidden=4, levels=3)
        with pytest.raises(ag.ShapeError):
            q_vid(Tensor(np.zeros((4, 5))), p)

    def test_end_to_end_gradcheck_to_conv_kernels(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((5, 4))
        p = small_params(14)
        names = [n.split(".", 1)[1] for n, _ in p.named()]

        def build(xt, *arrays):
            q = PyramidParams(**dict(zip(names, arrays)), levels=p.levels)
            f_wt = weight_frames(xt, frame_weights(xt, q))
            return q_vid(aggregate_pyramid(f_wt, q.levels), q)

        check_grads(build, [x] + [t.data for _, t in p.named()])

    def test_constant_input_frame_count_invariance(self):
        p = small_params(15, hidden=4, levels=7)
        v = np.array([0.3, -1.7, 2.2, 0.9])
        q8 = q_vid(aggregate_pyramid(Tensor(np.tile(v, (8, 1))), 7), p).item()
        q64 = q_vid(aggregate_pyramid(Tensor(np.tile(v, (64, 1))), 7), p).item()
        assert q8 == q64


class TestFuseScores:
    def test_lambda_zero_is_q_vid(self):
        assert fuse_scores(0.73, 0.21, 0.0) == 0.73

    def test_lambda_large_approaches_q_reg(self):
        assert abs(fuse_scores(0.73, 0.21, 1e9) - 0.21) < 1e-6

    def test_lambda_one_is_mean(self):
        np.testing.assert_allclose(fuse_scores(0.7, 0.3, 1.0), 0.5, rtol=1e-15)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            fuse_scores(0.5, 0.5, -0.1)
