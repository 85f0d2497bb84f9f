import numpy as np
import pytest
from hypothesis import given, strategies as st

from vxc.checkpoint import checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint
from vxc.codec import CodecModel
from vxc.exceptions import ConfigurationError, DimensionError, FormatError, NonFiniteLossError
from vxc.gradchecks import _tiny_codec, _tiny_recon
from vxc.joint import JointConfig
from vxc.optim import Adam, AdamState, adam_step, clip_by_global_norm, global_norm
from vxc.autodiff.tensor import Tensor, no_grad
from vxc.trainer import (METRIC_COLUMNS, TrainConfig, Trainer, checkpoint_path, draw_batches, fit_codec,
                         latest_checkpoint, model_from_checkpoint, read_metrics, train_loop)


def tiny_train_cfg(kind="sequential", **kw) -> TrainConfig:
    codec = None if kind == "implicit" else _tiny_codec()
    joint = JointConfig(kind=kind, recon=_tiny_recon(), codec=codec, v_max=2)
    base = dict(joint=joint, batch_size=2, epochs=2, seed=5)
    base.update(kw)
    return TrainConfig(**base)


class TestAdam:
    def test_zero_gradient(self):
        p = np.array([1.0, -2.0])
        state = AdamState([np.zeros(2)], [np.array([0.25, 0.25])], t=3)
        adam_step([p], [np.zeros(2)], state, lr=0.1)
        np.testing.assert_array_equal(p, [1.0, -2.0])
        np.testing.assert_array_equal(state.m[0], 0.0)
        np.testing.assert_allclose(state.v[0], 0.25 * 0.999, rtol=1e-15)

    @given(st.floats(1e-3, 1e3), st.sampled_from([-1.0, 1.0]))
    def test_first_step_magnitude_is_lr(self, mag, sign):
        p = np.zeros(1)
        g = np.array([sign * mag])
        adam_step([p], [g], AdamState.zeros_like([p]), lr=0.01, eps=0.0)
        assert p[0] == pytest.approx(-sign * 0.01, rel=1e-12)

    def test_closed_form_two_steps(self):
        p = np.zeros(1)
        state = AdamState.zeros_like([p])
        adam_step([p], [np.array([2.0])], state, lr=0.1, eps=0.0)
        adam_step([p], [np.array([-1.0])], state, lr=0.1, eps=0.0)
        m = 0.9 * 0.1 * 2.0 + 0.1 * -1.0
        v = 0.999 * 0.001 * 4.0 + 0.001 * 1.0
        expected = -0.1 - 0.1 * (m / (1 - 0.81)) / np.sqrt(v / (1 - 0.999 ** 2))
        assert p[0] == pytest.approx(expected, rel=1e-12)

    def test_opposite_streams_are_symmetric(self, rng):
        a, b = np.zeros(4), np.zeros(4)
        sa, sb = AdamState.zeros_like([a]), AdamState.zeros_like([b])
        for _ in range(20):
            g = rng.standard_normal(4)
            adam_step([a], [g], sa)
            adam_step([b], [-g], sb)
        np.testing.assert_array_equal(a, -b)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            adam_step([np.zeros(2)], [np.zeros(3)], AdamState.zeros_like([np.zeros(2)]))

    def test_clipping(self):
        grads, norm = clip_by_global_norm([np.array([3.0]), np.array([4.0])], 1.0)
        assert norm == 5.0
        assert global_norm(grads) == pytest.approx(1.0)
        same, _ = clip_by_global_norm([np.array([0.3])], 1.0)
        assert same[0][0] == 0.3

    def test_optimizer_wrapper_reads_grads(self):
        p = Tensor(np.ones(3), requires_grad=True)
        p.grad = np.array([1.0, 0.0, -1.0])
        opt = Adam([p], lr=0.5, clip_norm=None)
        opt.step()
        np.testing.assert_allclose(p.data, [0.5, 1.0, 1.5], rtol=1e-7)
        opt.zero_grad()
        assert p.grad is None


class TestConfig:
    @pytest.mark.parametrize("kw", [{"batch_size": 0}, {"epochs": 0}, {"repeats": 0}, {"lr": 0.0},
                                    {"dtype": "float16"}])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kw)

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.batch_size, cfg.epochs, cfg.lr, cfg.clip_norm) == (6, 20, 1e-3, 5.0)

    def test_dict_round_trip(self):
        cfg = tiny_train_cfg("direct")
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


class TestBatches:
    def test_views_and_iterations_in_range(self):
        cfg = tiny_train_cfg(repeats=20)
        seen_v, seen_n = set(), set()
        for s in draw_batches(3, cfg, 2, np.random.default_rng(0)):
            seen_v.add(s.view_idx.shape[1])
            seen_n.add(s.n_iter)
            assert len(set(s.view_idx[0])) == s.view_idx.shape[1]
        assert seen_v == {1, 2} and seen_n == {1, 2}

    def test_each_example_visited_per_repeat(self):
        cfg = tiny_train_cfg(repeats=3)
        idx = np.concatenate([s.indices for s in draw_batches(5, cfg, 2, np.random.default_rng(1))])
        assert np.bincount(idx).tolist() == [3] * 5

    def test_implicit_has_no_iteration_count(self):
        cfg = tiny_train_cfg("implicit")
        assert all(s.n_iter is None for s in draw_batches(3, cfg, 2, np.random.default_rng(0)))


class TestCheckpoint:
    def test_round_trip_preserves_bits(self, tiny_data16, tmp_path):
        trainer = Trainer(tiny_train_cfg(), tmp_path)
        trainer.fit(tiny_data16, epochs=1)
        model, _ = model_from_checkpoint(checkpoint_path(tmp_path, 1))
        for (na, a), (nb, b) in zip(trainer.model.named_parameters(), model.named_parameters()):
            assert na == nb and a.data.tobytes() == b.data.tobytes()

    def test_reload_reproduces_forward(self, tiny_data16, tmp_path):
        trainer = Trainer(tiny_train_cfg("direct"), tmp_path)
        trainer.fit(tiny_data16, epochs=1)
        model, _ = model_from_checkpoint(checkpoint_path(tmp_path, 1))
        x = Tensor(np.random.default_rng(0).uniform(-1, 1, (2, 2, 3, 16, 16)).astype(np.float32))
        with no_grad():
            a = trainer.model(x, n_iter=2).p.data
            b = model(x, n_iter=2).p.data
        assert a.tobytes() == b.tobytes()

    def test_bytes_round_trip(self, tiny_data16):
        trainer = Trainer(tiny_train_cfg("implicit", dtype="float64"))
        trainer.fit(tiny_data16, epochs=1)
        raw = checkpoint_to_bytes(trainer.model, {"a": 1}, trainer.optimizer, trainer.rng, 1)
        ck = checkpoint_from_bytes(raw)
        assert ck.epoch == 1 and ck.config == {"a": 1} and ck.opt_t == trainer.optimizer.state.t
        assert checkpoint_to_bytes(trainer.model, {"a": 1}, trainer.optimizer, trainer.rng, 1) == raw
        assert all(v.dtype == np.float64 for v in ck.params.values())

    @pytest.mark.parametrize("where", ["magic", "version", "truncate", "trailing"])
    def test_tampering_rejected(self, where):
        model = CodecModel(_tiny_codec(), np.random.default_rng(0))
        raw = bytearray(checkpoint_to_bytes(model, {}))
        if where == "magic":
            raw[0] = ord("X")
        elif where == "version":
            raw[4] = 9
        elif where == "truncate":
            raw = raw[:-10]
        else:
            raw += b"\x00"
        with pytest.raises(FormatError):
            checkpoint_from_bytes(bytes(raw))

    def test_restore_into_wrong_model(self):
        a = CodecModel(_tiny_codec(), np.random.default_rng(0))
        ck = checkpoint_from_bytes(checkpoint_to_bytes(a, {}))
        trainer = Trainer(tiny_train_cfg("implicit"))
        with pytest.raises(FormatError):
            ck.restore(trainer.model)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "none.vxck")


class TestTrainLoop:
    @pytest.mark.parametrize("kind", ["sequential", "direct", "implicit"])
    def test_seed_determinism(self, tiny_data16, kind):
        a = Trainer(tiny_train_cfg(kind)).fit(tiny_data16, epochs=1).history[0]
        b = Trainer(tiny_train_cfg(kind)).fit(tiny_data16, epochs=1).history[0]
        assert abs(a.L_total - b.L_total) <= 1e-6
        assert a.L_total == b.L_total

    def test_resume_matches_uninterrupted(self, tiny_data16, tmp_path):
        full = train_loop(tiny_train_cfg(), tiny_data16, tmp_path / "full", epochs=3)
        train_loop(tiny_train_cfg(), tiny_data16, tmp_path / "part", epochs=1)
        resumed = train_loop(tiny_train_cfg(), tiny_data16, tmp_path / "part", resume=True, epochs=3)
        # epoch 1 comes back from the metrics CSV, later epochs are recomputed
        assert resumed.history[0].L_total == pytest.approx(full.history[0].L_total, rel=1e-8)
        assert [m.L_total for m in full.history[1:]] == [m.L_total for m in resumed.history[1:]]
        for (_, a), (_, b) in zip(full.model.named_parameters(), resumed.model.named_parameters()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_metrics_and_checkpoints_written(self, tiny_data16, tmp_path):
        train_loop(tiny_train_cfg(), tiny_data16, tmp_path, epochs=2)
        assert (tmp_path / "metrics.csv").read_text().splitlines()[0] == ",".join(METRIC_COLUMNS)
        assert [m.epoch for m in read_metrics(tmp_path / "metrics.csv")] == [1, 2]
        assert latest_checkpoint(tmp_path) == checkpoint_path(tmp_path, 2)

    def test_resume_without_checkpoint(self, tmp_path):
        assert not Trainer(tiny_train_cfg(), tmp_path).resume()

    def test_resume_other_kind_refused(self, tiny_data16, tmp_path):
        train_loop(tiny_train_cfg("direct"), tiny_data16, tmp_path, epochs=1)
        with pytest.raises(ConfigurationError):
            Trainer(tiny_train_cfg("sequential"), tmp_path).resume()

    def test_extent_mismatch(self, tiny_data16):
        cfg = tiny_train_cfg("implicit", joint=JointConfig(kind="implicit"))
        with pytest.raises(ConfigurationError):
            Trainer(cfg).fit(tiny_data16)

    def test_non_finite_loss_aborts_with_dump(self, tiny_data16, tmp_path):
        trainer = Trainer(tiny_train_cfg(), tmp_path)
        trainer.model.codec.decoder.out.bias.data[...] = np.nan
        with pytest.raises(NonFiniteLossError):
            trainer.fit(tiny_data16, epochs=1)
        dump = np.load(tmp_path / "nonfinite_batch.npz")
        assert {"indices", "view_idx", "views", "L_comp"} <= set(dump.files)

    def test_losses_decrease(self, tiny_data16):
        hist = Trainer(tiny_train_cfg("implicit", repeats=4, epochs=4)).fit(tiny_data16).history
        assert hist[-1].L_3D < hist[0].L_3D


class TestFitCodec:
    def test_loss_decreases(self, tiny_data16):
        from vxc.codec import to_internal
        model = CodecModel(_tiny_codec(), np.random.default_rng(0))
        imgs = to_internal(tiny_data16.views.reshape(-1, 16, 16, 3))
        history = fit_codec(model, imgs, epochs=6, batch_size=3)
        assert history[-1] < history[0]


@pytest.mark.slow
class TestDeskTraining:
    @pytest.mark.parametrize("kind", ["sequential", "direct", "implicit"])
    def test_last_epoch_below_first(self, desk_run, kind):
        history = desk_run(kind).history
        assert len(history) == 20
        assert history[-1].L_total < history[0].L_total
