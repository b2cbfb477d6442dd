from types import SimpleNamespace

import numpy as np
import pytest

from nrvqa import trainer as tr
from nrvqa.autograd import Tensor
from nrvqa.features import FEATURE_DIM, FeatureSequence, ManifestRecord, write_feature_file
from nrvqa.model import ModelParams, forward
from nrvqa.regularizer import GaussianPrior
from nrvqa.trainer import (
    Adam,
    CheckpointError,
    NumericsError,
    TrainConfig,
    composite_loss,
    discriminator_phase,
    generator_phase,
    load_checkpoint,
    save_checkpoint,
    train,
    train_step,
)


def fake_outputs(q_vids, q_regs):
    return [SimpleNamespace(q_vid=Tensor(np.asarray(v)), q_reg=Tensor(np.asarray(r)))
            for v, r in zip(q_vids, q_regs)]


def halves(n):
    return [Tensor(np.asarray(0.5)) for _ in range(n)]


def random_sequence(rng, t=4, video_id="v"):
    return FeatureSequence(
        video_id,
        rng.standard_normal((t, FEATURE_DIM)).astype(np.float32),
        np.abs(rng.standard_normal((t, FEATURE_DIM))).astype(np.float32),
    )


def tiny_dataset(tmp_path, rng, count=6, t=4):
    records = []
    for i in range(count):
        path = tmp_path / f"v{i}.gstf"
        write_feature_file(path, random_sequence(rng, t=t, video_id=f"v{i}"))
        records.append(ManifestRecord(f"v{i}", path, float(rng.uniform(0, 100))))
    return records


class TestCompositeLoss:
    def test_hand_value_at_balanced_critic(self):
        targets = [0.3, 0.7]
        outputs = fake_outputs(targets, targets)  # perfect predictions
        config = TrainConfig(lambda1=0.5, lambda2=0.05)
        gen, disc, comp = composite_loss(outputs, targets, halves(2), halves(2), config)
        expected = 0.05 * (np.log(0.5) + np.log(0.5))
        np.testing.assert_allclose(gen.item(), expected, rtol=1e-12)
        np.testing.assert_allclose(disc.item(), -(np.log(0.5) + np.log(0.5)), rtol=1e-12)
        assert comp["l_vid"] == 0.0
        assert comp["l_reg"] == 0.0

    def test_zero_weights_reduce_to_l1(self):
        outputs = fake_outputs([0.2, 0.9], [0.5, 0.5])
        targets = [0.4, 0.5]
        config = TrainConfig(lambda1=0.0, lambda2=0.0)
        gen, _, _ = composite_loss(outputs, targets, halves(2), halves(2), config)
        np.testing.assert_allclose(gen.item(), np.mean([0.2, 0.4]), rtol=1e-12)

    def test_doubling_lambda1_doubles_reg_term(self):
        outputs = fake_outputs([0.2, 0.9], [0.1, 0.8])
        targets = [0.4, 0.5]
        lo, _, comp = composite_loss(outputs, targets, halves(2), halves(2),
                                     TrainConfig(lambda1=0.5, lambda2=0.0))
        hi, _, _ = composite_loss(outputs, targets, halves(2), halves(2),
                                  TrainConfig(lambda1=1.0, lambda2=0.0))
        np.testing.assert_allclose(hi.item() - lo.item(), 0.5 * comp["l_reg"], rtol=1e-12)

    def test_nan_component_aborts_with_diagnostic(self):
        outputs = fake_outputs([np.nan], [0.5])
        with pytest.raises(NumericsError, match="l_vid"):
            composite_loss(outputs, [0.5], halves(1), halves(1), TrainConfig())

    def test_no_distribution_drops_everything_but_l1(self):
        outputs = fake_outputs([0.2], [0.9])
        config = TrainConfig(no_distribution=True)
        gen, disc, comp = composite_loss(outputs, [0.4], [], [], config)
        np.testing.assert_allclose(gen.item(), 0.2, rtol=1e-12)
        assert disc is None
        assert comp["r_gan"] == 0.0


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam([("p", p)], lr=0.1)
        before = p.data.copy()
        opt.step()  # grad is None -> treated as zero
        np.testing.assert_array_equal(p.data, before)

    def test_moments_shaped_like_params(self):
        p = Tensor(np.ones((3, 4)), requires_grad=True)
        opt = Adam([("p", p)], lr=0.1)
        assert opt.m["p"].shape == (3, 4)
        assert opt.v["p"].shape == (3, 4)

    def test_bias_corrected_first_step_size(self):
        # with constant gradient g, the first Adam step is -lr * g/|g| elementwise
        p = Tensor(np.array([0.0, 0.0]), requires_grad=True)
        opt = Adam([("p", p)], lr=0.01)
        p.grad = np.array([3.0, -7.0])
        opt.step()
        np.testing.assert_allclose(p.data, [-0.01, 0.01], rtol=1e-6)


class TestPhaseFreezing:
    def setup_batch(self, tmp_path, config):
        rng = np.random.default_rng(0)
        params = ModelParams.init(seed=1, config=config.model_config())
        batch = [random_sequence(rng, t=3, video_id=f"v{i}") for i in range(2)]
        targets = [0.3, 0.8]
        outputs = [forward(params, seq) for seq in batch]
        z = np.random.default_rng(2).standard_normal((2, 32))
        return params, outputs, targets, z

    def test_discriminator_phase_freezes_generator(self, tmp_path):
        config = TrainConfig()
        params, outputs, targets, z = self.setup_batch(tmp_path, config)
        adam_d = Adam(params.named_discriminator(), lr=1e-3)
        gen_before = [t.data.copy() for _, t in params.named_generator()]
        disc_before = [t.data.copy() for _, t in params.named_discriminator()]
        discriminator_phase(outputs, targets, z, params, adam_d, config)
        for before, (_, t) in zip(gen_before, params.named_generator()):
            np.testing.assert_array_equal(before, t.data)
        changed = any(
            not np.array_equal(before, t.data)
            for before, (_, t) in zip(disc_before, params.named_discriminator())
        )
        assert changed

    def test_generator_phase_freezes_discriminator(self, tmp_path):
        config = TrainConfig()
        params, outputs, targets, z = self.setup_batch(tmp_path, config)
        adam_g = Adam(params.named_generator(), lr=1e-3)
        disc_before = [t.data.copy() for _, t in params.named_discriminator()]
        gen_before = [t.data.copy() for _, t in params.named_generator()]
        generator_phase(outputs, targets, z, params, adam_g, config)
        for before, (_, t) in zip(disc_before, params.named_discriminator()):
            np.testing.assert_array_equal(before, t.data)
        changed = any(
            not np.array_equal(before, t.data)
            for before, (_, t) in zip(gen_before, params.named_generator())
        )
        assert changed


def test_descent_on_frozen_toy_batch():
    rng = np.random.default_rng(3)
    config = TrainConfig(learning_rate=1e-3, batch_size=4)
    params = ModelParams.init(seed=4)
    batch = [random_sequence(rng, t=3, video_id=f"v{i}") for i in range(4)]
    targets = [0.1, 0.4, 0.6, 0.9]
    adam_g = Adam(params.named_generator(), config.learning_rate)
    adam_d = Adam(params.named_discriminator(), config.learning_rate)
    prior = GaussianPrior.standard(seed=5)

    def gen_loss_value():
        outputs = [forward(params, seq) for seq in batch]
        z = np.random.default_rng(6).standard_normal((4, 32))
        d_real = [tr.discriminate(Tensor(z[i]), params.disc) for i in range(4)]
        d_fake = [tr.discriminate(out.f_avg, params.disc) for out in outputs]
        loss, _, _ = composite_loss(outputs, targets, d_real, d_fake, config)
        return loss.item()

    before = gen_loss_value()
    for _ in range(100):
        train_step(batch, targets, params, adam_g, adam_d, prior, config)
    assert gen_loss_value() < before


class TestTrainLoop:
    def test_refresh_schedule(self, tmp_path):
        records = tiny_dataset(tmp_path, np.random.default_rng(7))
        config = TrainConfig(epochs=4, batch_size=3, refresh_period=2, seed=8)
        result = train(records, config)
        assert result.checkpoint.prior.refresh_count == 2
        assert result.checkpoint.epoch == 4
        assert len(result.history) == 4

    def test_same_seed_identical_checkpoints(self, tmp_path):
        records = tiny_dataset(tmp_path, np.random.default_rng(9))
        config = TrainConfig(epochs=2, batch_size=3, seed=10)
        a = tmp_path / "a.gstc"
        b = tmp_path / "b.gstc"
        save_checkpoint(a, train(records, config).checkpoint)
        save_checkpoint(b, train(records, config).checkpoint)
        assert a.read_bytes() == b.read_bytes()

    def test_no_distribution_never_calls_critic(self, tmp_path, monkeypatch):
        calls = []
        real = tr.discriminate
        monkeypatch.setattr(tr, "discriminate",
                            lambda *a, **k: calls.append(1) or real(*a, **k))
        records = tiny_dataset(tmp_path, np.random.default_rng(11))
        config = TrainConfig(epochs=2, batch_size=3, seed=12, no_distribution=True)
        result = train(records, config)
        assert calls == []
        assert result.checkpoint.prior.refresh_count == 0

    def test_empty_manifest_rejected(self):
        with pytest.raises(ValueError):
            train([], TrainConfig(epochs=1))

    def test_log_csv_format(self, tmp_path):
        records = tiny_dataset(tmp_path, np.random.default_rng(13))
        log = tmp_path / "log.csv"
        train(records, TrainConfig(epochs=2, batch_size=3, seed=14), log_path=log)
        lines = log.read_text().splitlines()
        assert lines[0] == "epoch,l_vid,l_reg,r_gan,d_loss"
        assert len(lines) == 3
        assert lines[1].startswith("1,")


class TestCheckpoint:
    def run_tiny(self, tmp_path, **overrides):
        records = tiny_dataset(tmp_path, np.random.default_rng(15))
        config = TrainConfig(epochs=1, batch_size=3, seed=16, **overrides)
        return train(records, config).checkpoint

    def test_round_trip_fixed_point(self, tmp_path):
        ckpt = self.run_tiny(tmp_path)
        p1 = tmp_path / "one.gstc"
        p2 = tmp_path / "two.gstc"
        save_checkpoint(p1, ckpt)
        save_checkpoint(p2, load_checkpoint(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_reload_reproduces_forward_bit_exactly(self, tmp_path):
        ckpt = self.run_tiny(tmp_path)
        path = tmp_path / "ck.gstc"
        save_checkpoint(path, ckpt)
        seq = random_sequence(np.random.default_rng(17), t=5)
        a = forward(load_checkpoint(path).params, seq)
        b = forward(load_checkpoint(path).params, seq)
        assert a.q_vid.item() == b.q_vid.item()
        assert a.q_reg.item() == b.q_reg.item()
        np.testing.assert_array_equal(a.f_vid.data, b.f_vid.data)

    def test_config_echo_round_trips(self, tmp_path):
        ckpt = self.run_tiny(tmp_path, no_pyramid=True)
        path = tmp_path / "ck.gstc"
        save_checkpoint(path, ckpt)
        loaded = load_checkpoint(path)
        assert loaded.config.no_pyramid is True
        assert loaded.params.pyramid.fc5_w.shape == (1,)

    def test_sampler_state_round_trips(self, tmp_path):
        from nrvqa.regularizer import sample_prior

        ckpt = self.run_tiny(tmp_path)
        path = tmp_path / "ck.gstc"
        save_checkpoint(path, ckpt)
        a = load_checkpoint(path)
        b = load_checkpoint(path)
        np.testing.assert_array_equal(sample_prior(a.prior, 8), sample_prior(b.prior, 8))

    def test_corrupt_magic_rejected(self, tmp_path):
        ckpt = self.run_tiny(tmp_path)
        path = tmp_path / "ck.gstc"
        save_checkpoint(path, ckpt)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        ckpt = self.run_tiny(tmp_path)
        path = tmp_path / "ck.gstc"
        save_checkpoint(path, ckpt)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
