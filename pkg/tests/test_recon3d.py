import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vxc.autodiff.tensor import Tensor, no_grad
from vxc.exceptions import ConfigurationError, DimensionError
from vxc.gradchecks import COMPOSITE_TOL, _tiny_recon, check_recon3d
from vxc.recon3d import IOU_THRESHOLD, Recon3DConfig, Recon3DModel, batch_iou, iou, recon_loss, significance_bins


def tiny(seed=0) -> Recon3DModel:
    return Recon3DModel(_tiny_recon(), np.random.default_rng(seed))


def brute_force_iou(p, t, tau):
    inter = union = 0
    for idx in itertools.product(*(range(s) for s in p.shape)):
        a, b = bool(p[idx] > tau), bool(t[idx])
        inter += a and b
        union += a or b
    return 1.0 if union == 0 else inter / union


def bce_oracle(p, t, eps=1e-7):
    total = 0.0
    for pv, tv in zip(p.reshape(-1), t.reshape(-1)):
        q = min(max(pv, eps), 1 - eps)
        total += -(tv * np.log(q) + (1 - tv) * np.log(1 - q))
    return total / p.size


class TestConfig:
    def test_desk_profile(self):
        cfg = Recon3DConfig.desk()
        assert (cfg.K, cfg.n_hidden, cfg.d_out, cfg.height, cfg.n_pools) == (64, 32, 32, 32, 4)

    def test_full_scale_defaults(self):
        cfg = Recon3DConfig()
        assert (cfg.K, cfg.n_hidden, cfg.d_out, cfg.n_pools) == (1024, 128, 32, 6)
        assert len(cfg.dec_widths) == 3

    @pytest.mark.parametrize("kw", [{"height": 96}, {"K": 0}, {"d_out": 12}, {"d_out": 2}])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ConfigurationError):
            Recon3DConfig(**kw)

    def test_dict_round_trip(self):
        cfg = Recon3DConfig.desk(K=128)
        assert Recon3DConfig.from_dict(cfg.to_dict()) == cfg


class TestEncoder:
    def test_embedding_length(self, rng):
        model = tiny()
        with no_grad():
            e = model.encode_view(Tensor(rng.standard_normal((2, 3, 16, 16))))
        assert e.shape == (2, 6)

    def test_zero_parameters_give_zero_embedding(self, rng):
        model = tiny()
        model.encoder.zero_()
        with no_grad():
            e = model.encode_view(Tensor(rng.standard_normal((1, 3, 16, 16))))
        assert np.all(e.data == 0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            tiny().encode_view(Tensor(np.zeros((1, 3, 32, 32))))


class TestFusion:
    def test_single_view_is_one_grid_step(self, rng):
        model = tiny()
        e = Tensor(rng.standard_normal((2, 6)))
        with no_grad():
            fused = model.fuse_views([e]).h
            step = model.grid.step(e, model.grid.initial_state(2)).h
        np.testing.assert_array_equal(fused.data, step.data)

    def test_two_views_compose_step_by_step(self, rng):
        model = tiny()
        e1, e2 = Tensor(rng.standard_normal((1, 6))), Tensor(rng.standard_normal((1, 6)))
        with no_grad():
            fused = model.fuse_views([e1, e2]).h
            s = model.grid.step(e1, model.grid.initial_state(1))
            s = model.grid.step(e2, s)
        np.testing.assert_array_equal(fused.data, s.h.data)

    def test_identical_views_commute(self, rng):
        model = tiny()
        e = rng.standard_normal((1, 6))
        with no_grad():
            a = model.fuse_views([Tensor(e), Tensor(e.copy())]).h
            b = model.fuse_views([Tensor(e.copy()), Tensor(e)]).h
        np.testing.assert_array_equal(a.data, b.data)

    def test_zero_inputs_follow_zero_input_recurrence(self):
        model = tiny()
        zero = Tensor(np.zeros((1, 6)))
        with no_grad():
            fused = model.fuse_views([zero] * 3).h
            s = model.grid.initial_state(1)
            for _ in range(3):
                s = model.grid.step(Tensor(np.zeros((1, 6))), s)
        np.testing.assert_array_equal(fused.data, s.h.data)

    def test_empty_sequence(self):
        with pytest.raises(ValueError):
            tiny().fuse_views([])


class TestDecoder:
    def test_output_shape_and_range(self, rng):
        model = tiny()
        with no_grad():
            p = model.decode_occupancy(Tensor(rng.standard_normal((2, 3, 4, 4, 4))))
        assert p.shape == (2, 8, 8, 8)
        assert np.all((p.data > 0) & (p.data < 1))

    def test_zero_parameters_give_half(self, rng):
        model = tiny()
        model.decoder.zero_()
        with no_grad():
            p = model.decode_occupancy(Tensor(rng.standard_normal((1, 3, 4, 4, 4))))
        assert np.all(p.data == 0.5)

    def test_desk_resolution(self, rng):
        model = Recon3DModel(Recon3DConfig.desk(K=8, n_hidden=2, dec_widths=(2, 2, 2)), rng)
        with no_grad():
            p = model([Tensor(rng.random((1, 3, 32, 32)))])
        assert p.shape == (1, 32, 32, 32)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            tiny().decode_occupancy(Tensor(np.zeros((1, 3, 2, 2, 2))))

    def test_pipeline_gradient(self):
        assert check_recon3d(seed=2).max_rel_err <= COMPOSITE_TOL


class TestReconLoss:
    def test_half_probability_is_log_two(self, rng):
        t = rng.integers(0, 2, (2, 4, 4, 4)).astype(float)
        assert recon_loss(Tensor(np.full(t.shape, 0.5)), t).item() == pytest.approx(np.log(2), abs=1e-15)

    def test_matches_oracle(self, rng):
        for _ in range(5):
            p = rng.uniform(0, 1, (4, 4, 4))
            p[0, 0, 0], p[0, 0, 1] = 0.0, 1.0
            t = rng.integers(0, 2, (4, 4, 4)).astype(float)
            assert abs(recon_loss(Tensor(p), t).item() - bce_oracle(p, t)) < 1e-12

    def test_perfect_prediction_is_clamped_zero(self, rng):
        t = rng.integers(0, 2, (4, 4, 4)).astype(float)
        assert recon_loss(Tensor(t), t).item() == pytest.approx(-np.log(1 - 1e-7), rel=1e-9)

    @given(st.integers(0, 2 ** 16))
    def test_non_negative(self, seed):
        r = np.random.default_rng(seed)
        p = r.uniform(0, 1, (3, 3, 3))
        assert recon_loss(Tensor(p), r.integers(0, 2, (3, 3, 3))).item() >= 0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            recon_loss(Tensor(np.zeros((2, 2, 2))), np.zeros((2, 2, 3)))


class TestIoU:
    def test_brute_force_agreement(self):
        r = np.random.default_rng(99)
        for _ in range(1000):
            p = r.random((8, 8, 8))
            t = r.random((8, 8, 8)) < r.random()
            assert iou(p, t) == brute_force_iou(p, t, IOU_THRESHOLD)

    def test_identical_grids(self, rng):
        t = rng.random((8, 8, 8)) < 0.3
        assert iou(t.astype(float), t) == 1.0

    def test_disjoint(self):
        p = np.zeros((4, 4, 4))
        p[0] = 1
        t = np.zeros((4, 4, 4), bool)
        t[1] = True
        assert iou(p, t) == 0.0

    def test_empty_union(self):
        assert iou(np.zeros((4, 4, 4)), np.zeros((4, 4, 4), bool)) == 1.0

    def test_threshold_is_strict_and_default(self):
        t = np.ones((2, 2, 2), bool)
        assert iou(np.full((2, 2, 2), 0.4), t) == 0.0
        assert iou(np.full((2, 2, 2), 0.41), t) == 1.0
        assert iou(np.full((2, 2, 2), 0.41), t, tau=0.5) == 0.0

    @given(st.integers(0, 2 ** 16))
    def test_monotone_transform_invariance(self, seed):
        r = np.random.default_rng(seed)
        p, t = r.random((4, 4, 4)), r.random((4, 4, 4)) < 0.5
        q = np.where(p > IOU_THRESHOLD, 0.4 + (p - 0.4) ** 2 + 1e-9, p ** 3)
        assert iou(q, t) == iou(p, t)

    @given(st.integers(0, 2 ** 16))
    def test_symmetric_for_binary_grids(self, seed):
        r = np.random.default_rng(seed)
        a, b = r.random((4, 4, 4)) < 0.5, r.random((4, 4, 4)) < 0.5
        assert iou(a.astype(float), b) == iou(b.astype(float), a)

    def test_batch(self, rng):
        p, t = rng.random((3, 4, 4, 4)), rng.random((3, 4, 4, 4)) < 0.5
        np.testing.assert_array_equal(batch_iou(p, t), [iou(p[i], t[i]) for i in range(3)])


class TestSignificanceBins:
    def test_two_clusters(self):
        bins = significance_bins([0.1] * 5 + [0.9] * 5, 0.04)
        assert [b.count for b in bins] == [5, 5]
        assert [b.mean for b in bins] == pytest.approx([0.1, 0.9])

    def test_identical_values(self):
        bins = significance_bins([0.5] * 7)
        assert len(bins) == 1 and bins[0].std == 0.0 and bins[0].count == 7

    def test_greedy_rule(self):
        # 0.0 and 0.05 share a bin (std 0.025); adding 0.2 would push std past 0.04
        bins = significance_bins([0.2, 0.0, 0.05, 0.22], 0.04)
        assert [(b.lo, b.hi) for b in bins] == [(0.0, 0.05), (0.2, 0.22)]

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=60))
    def test_bins_partition_sorted_values(self, values):
        bins = significance_bins(values)
        assert sum(b.count for b in bins) == len(values)
        assert all(b.std <= 0.04 + 1e-12 for b in bins)
        assert all(a.hi <= b.lo for a, b in zip(bins, bins[1:]))

    def test_needs_two_examples(self):
        with pytest.raises(ValueError):
            significance_bins([0.5])
