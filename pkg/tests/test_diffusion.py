import numpy as np
import pytest
import torch

from brdfdiff.diffusion import (
    NULL, CondBatch, DenoiserConfig, EmbeddingVector, TrainConfig, TypeId, build_denoiser, dumps_checkpoint,
    forward_marginal, forward_step, load_checkpoint, loads_checkpoint, make_schedule, read_embedding,
    sample_cfg, sample_uncond, save_checkpoint, timestep_embedding, train, write_embedding,
)
from brdfdiff.diffusion.schedule import NoiseSchedule
from brdfdiff.diffusion.training import DenoiserParams, lr_at
from brdfdiff.errors import DataError, DimensionMismatch, GuidanceOutOfRange, NonFinite
from brdfdiff.field import NeuralFieldWeights

SMALL = DenoiserConfig(width=32, depth=1, heads=2, ff_width=64, text_dim=5)


def _randomized(cfg=SMALL, seed=0):
    model = build_denoiser(cfg, seed)
    g = torch.Generator().manual_seed(seed + 100)
    with torch.no_grad():
        model.token_out.weight.copy_(torch.randn(model.token_out.weight.shape, generator=g) * 0.05)
        model.null_embed.copy_(torch.randn(cfg.width, generator=g))
    return model


def _params(model, mean=None, std=None, T=100):
    d = model.cfg.dim
    return DenoiserParams(model, make_schedule(T), np.zeros(d) if mean is None else mean,
                          np.ones(d) if std is None else std)


class TestSchedule:
    def test_single_step(self):
        s = make_schedule(1, betas=[0.02])
        assert s.alpha_bar == pytest.approx([0.98])

    def test_default_terminal(self):
        s = make_schedule()
        assert s.T == 100
        assert np.prod(1.0 - s.betas) < 0.01
        assert s.alpha_bar[-1] == pytest.approx(np.prod(1.0 - s.betas), rel=1e-12)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all(s.betas > 0) and np.all(np.diff(s.betas) >= 0)

    def test_linear_endpoints(self):
        s = make_schedule(1000)
        assert s.betas[0] == pytest.approx(1e-4) and s.betas[-1] == pytest.approx(0.02)
        s = make_schedule(100)
        assert s.betas[0] == pytest.approx(1e-3) and s.betas[-1] == pytest.approx(0.2)

    @pytest.mark.parametrize("betas", [[0.0, 0.1], [0.1, 1.0], [-0.1], [0.2, 0.1]])
    def test_invalid(self, betas):
        with pytest.raises(ValueError):
            NoiseSchedule(betas)

    def test_alpha_bar_zero(self):
        s = make_schedule(10)
        assert s.alpha_bar_at(0) == 1.0
        assert s.alpha_bar_at(10) == s.alpha_bar[-1]


class TestForward:
    def test_t0_identity(self):
        x0 = np.arange(5.0)
        np.testing.assert_array_equal(forward_marginal(make_schedule(), x0, 0, np.ones(5)), x0)

    def test_zero_data(self):
        s = make_schedule()
        eps = np.random.default_rng(0).standard_normal(7)
        np.testing.assert_allclose(forward_marginal(s, np.zeros(7), 30, eps), np.sqrt(1 - s.alpha_bar[29]) * eps)

    @pytest.mark.parametrize("t", [1, 50, 100])
    def test_stepwise_matches_closed_form(self, t):
        s = make_schedule()
        rng = np.random.default_rng(t)
        n = 10_000
        x0 = np.array([-2.0, 0.0, 0.5, 3.0])
        x = np.broadcast_to(x0, (n, 4)).copy()
        for step in range(1, t + 1):
            x = forward_step(s, x, step, rng.standard_normal(x.shape))
        y = forward_marginal(s, np.broadcast_to(x0, (n, 4)), t, rng.standard_normal((n, 4)))
        m1, m2 = x.mean(0), y.mean(0)
        v1, v2 = x.var(0, ddof=1), y.var(0, ddof=1)
        assert np.all(np.abs(m1 - m2) < 3 * np.sqrt(v1 / n + v2 / n))
        assert np.all(np.abs(v1 - v2) < 3 * np.sqrt(2 * (v1 ** 2 + v2 ** 2) / (n - 1)))


class TestDenoiser:
    def test_zero_output_projection(self):
        model = build_denoiser(SMALL)
        x = torch.randn(4, 675)
        with torch.no_grad():
            out = model(x, torch.tensor([1, 5, 50, 100]))
        assert out.shape == (4, 675)
        assert torch.all(out == 0)

    def test_batch_permutation(self):
        model = _randomized()
        g = torch.Generator().manual_seed(1)
        x = torch.randn(6, 675, generator=g)
        t = torch.tensor([1, 7, 20, 33, 80, 100])
        cond = CondBatch.from_conditions([TypeId(3), NULL, TypeId(0), NULL, TypeId(47), NULL], SMALL)
        perm = torch.tensor([5, 2, 0, 4, 1, 3])
        with torch.no_grad():
            a = model(x, t, cond)
            b = model(x[perm], t[perm], cond.index(perm))
        assert torch.equal(a[perm], b)

    def test_deterministic(self):
        x = torch.randn(3, 675)
        t = torch.tensor([4, 9, 60])
        with torch.no_grad():
            a, b = _randomized()(x, t), _randomized()(x, t)
        assert torch.equal(a, b)

    def test_condition_changes_output(self):
        model = _randomized()
        x, t = torch.randn(2, 675), torch.tensor([10, 10])
        with torch.no_grad():
            a = model(x, t, CondBatch.from_conditions([NULL, NULL], SMALL))
            b = model(x, t, CondBatch.from_conditions([TypeId(2), EmbeddingVector(np.ones(5))], SMALL))
        assert not torch.equal(a[0], b[0]) and not torch.equal(a[1], b[1])

    def test_padding(self):
        cfg = DenoiserConfig(width=16, depth=1, heads=2, ff_width=16, token_size=32)
        assert cfg.n_tokens == 22 and cfg.padded_dim == 704
        with torch.no_grad():
            out = build_denoiser(cfg)(torch.randn(2, 675), torch.tensor([1, 2]))
        assert out.shape == (2, 675)

    def test_token_layout(self):
        assert DenoiserConfig().n_tokens == 25 and DenoiserConfig().token_size == 27

    def test_sinusoidal_embedding(self):
        e = timestep_embedding(torch.tensor([0, 3]), 8)
        assert e.shape == (2, 8)
        np.testing.assert_allclose(e[0].numpy(), [1, 1, 1, 1, 0, 0, 0, 0])
        np.testing.assert_allclose(e[1, 0].item(), np.cos(3.0), rtol=1e-6)

    def test_condition_validation(self):
        with pytest.raises(ValueError):
            TypeId(48)
        with pytest.raises(DimensionMismatch):
            CondBatch.from_conditions([EmbeddingVector(np.ones(4))], SMALL)
        with pytest.raises(DimensionMismatch):
            CondBatch.from_conditions([EmbeddingVector(np.ones(4), "image")], SMALL)


class TestEmbeddingFile:
    def test_round_trip(self, tmp_path):
        e = EmbeddingVector(np.linspace(-1, 1, 6), "image")
        p = write_embedding(tmp_path / "e.emb", e)
        raw = p.read_bytes()
        assert raw.startswith(b"6 image\n") and len(raw) == 8 + 24
        back = read_embedding(p)
        assert back.source == "image"
        np.testing.assert_array_equal(back.vector, e.vector)

    def test_bad(self, tmp_path):
        (tmp_path / "bad.emb").write_bytes(b"6 text\n" + bytes(8))
        with pytest.raises(DataError):
            read_embedding(tmp_path / "bad.emb")


class TestTraining:
    CFG = DenoiserConfig(width=32, depth=1, heads=2, ff_width=64)

    def test_lr_schedule(self):
        cfg = TrainConfig()
        assert lr_at(cfg, 0, 100) == pytest.approx(5e-4)
        assert lr_at(cfg, 99, 100) == pytest.approx(5e-6)
        lrs = [lr_at(cfg, s, 100) for s in range(100)]
        assert np.all(np.diff(lrs) <= 0)

    def test_zero_dataset_loss_falls(self):
        data = np.zeros((64, 675))
        p = train(data, TrainConfig(epochs=30, cond_epochs=0, batch_size=32, lr_start=1e-3), self.CFG)
        assert len(p.history) == 30
        assert p.history[-1] < p.history[0]
        np.testing.assert_array_equal(p.std, 1.0)

    def test_same_seed_same_params(self):
        data = np.random.default_rng(0).normal(size=(40, 675))
        cfg = TrainConfig(epochs=3, cond_epochs=0, batch_size=16)
        a, b = train(data, cfg, self.CFG), train(data, cfg, self.CFG)
        for (ka, va), (kb, vb) in zip(a.model.state_dict().items(), b.model.state_dict().items()):
            assert ka == kb and torch.equal(va, vb)
        assert a.history == b.history

    def test_conditional_phase(self):
        data = np.random.default_rng(1).normal(size=(40, 675))
        conds = [TypeId(i % 3) for i in range(40)]
        p = train(data, TrainConfig(epochs=2, cond_epochs=3, batch_size=20), self.CFG, conditions=conds)
        assert len(p.history) == 5
        assert p.model.type_embed.weight.grad is not None

    def test_standardization(self):
        data = np.random.default_rng(2).normal(3.0, 2.0, size=(50, 675))
        p = train(data, TrainConfig(epochs=1, cond_epochs=0, batch_size=50), self.CFG)
        np.testing.assert_allclose(p.mean, data.mean(0))
        np.testing.assert_allclose(p.std, data.std(0))
        np.testing.assert_allclose(p.normalize(data).mean(0), 0, atol=1e-12)

    def test_nan_raises(self):
        data = np.full((8, 675), np.nan)
        with pytest.raises(NonFinite):
            train(data, TrainConfig(epochs=1, cond_epochs=0, batch_size=8), self.CFG)


class TestSampling:
    def test_omega_minus_one_is_unconditional(self):
        p = _params(_randomized(), T=20)
        for seed in range(3):
            a = sample_cfg(p, TypeId(5), -1.0, seed)
            b = sample_cfg(p, NULL, 0.0, seed)
            assert np.array_equal(a.flat, b.flat)

    def test_guidance_range(self):
        p = _params(_randomized(), T=5)
        with pytest.raises(GuidanceOutOfRange):
            sample_cfg(p, TypeId(1), -1.5)
        with pytest.raises(GuidanceOutOfRange):
            sample_cfg(p, TypeId(1), float("nan"))

    def _oracle(self, p, cond, omega, seed):
        # plain restatement of the guided deterministic update
        s = p.schedule
        x = torch.randn(1, 675, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
        cb = CondBatch.from_conditions([cond], p.model.cfg)
        for t in range(s.T, 0, -1):
            tt = torch.tensor([t])
            with torch.no_grad():
                ec = p.model(x.float(), tt, cb).double()
                eu = p.model(x.float(), tt, CondBatch.null(1)).double()
            eps = (1 + omega) * ec - omega * eu
            ab = s.alpha_bar[t - 1]
            ab_prev = s.alpha_bar[t - 2] if t > 1 else 1.0
            x0 = (x - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
            x = np.sqrt(ab_prev) * x0 + np.sqrt(1 - ab_prev) * eps
        return p.denormalize(x.numpy()[0])

    @pytest.mark.parametrize("omega", [0.0, 2.0])
    def test_matches_oracle(self, omega):
        p = _params(_randomized(), T=10)
        got = sample_cfg(p, TypeId(4), omega, seed=3).flat
        np.testing.assert_allclose(got, self._oracle(p, TypeId(4), omega, 3), rtol=1e-10, atol=1e-10)

    def test_zero_denoiser_closed_form(self):
        rng = np.random.default_rng(4)
        mean, std = rng.normal(size=675), rng.uniform(0.5, 2, size=675)
        p = _params(build_denoiser(SMALL), mean, std, T=100)
        got = sample_uncond(p, seed=11).flat
        xT = torch.randn(1, 675, generator=torch.Generator().manual_seed(11), dtype=torch.float64).numpy()[0]
        # x_{t-1} = sqrt(ab_{t-1} / ab_t) x_t telescopes to x_T / sqrt(ab_T)
        expected = xT / np.sqrt(p.schedule.alpha_bar[-1]) * std + mean
        np.testing.assert_allclose(got, expected, rtol=1e-9)

    def test_batch_and_types(self):
        p = _params(_randomized(), T=5)
        out = sample_cfg(p, TypeId(1), 1.0, seed=0, n=3)
        assert out.shape == (3, 675)
        assert isinstance(sample_uncond(p, seed=0), NeuralFieldWeights)
        np.testing.assert_array_equal(sample_uncond(p, seed=7).flat, sample_uncond(p, seed=7).flat)

    def test_toy_recovery_invariant(self, toy_diffusion):
        S = toy_diffusion["samples"]
        from conftest import TOY_SIGMA
        rms = np.stack([np.sqrt(((S - 1) ** 2).mean(1)), np.sqrt(((S + 1) ** 2).mean(1))])
        nearest = rms.argmin(0)
        # per-coordinate RMS distance to the closer center, in units of the cluster sigma
        assert np.mean(rms.min(0) < 3 * TOY_SIGMA) >= 0.9
        assert min(np.mean(nearest == 0), np.mean(nearest == 1)) >= 0.2


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = _params(_randomized(), mean=np.linspace(0, 1, 675), std=np.full(675, 2.0), T=8)
        p.history = [1.0, 0.5]
        path = save_checkpoint(p, tmp_path / "m.nmdf")
        assert path.read_bytes()[:4] == b"NMDF"
        q = load_checkpoint(path)
        assert q.config == p.config
        np.testing.assert_array_equal(q.schedule.betas, p.schedule.betas)
        np.testing.assert_array_equal(q.mean, p.mean)
        assert q.history == [1.0, 0.5]
        a = sample_cfg(p, TypeId(2), 1.5, seed=5).flat
        b = sample_cfg(q, TypeId(2), 1.5, seed=5).flat
        np.testing.assert_array_equal(a, b)

    def test_corrupt(self):
        p = _params(build_denoiser(SMALL), T=4)
        raw = dumps_checkpoint(p)
        with pytest.raises(DataError):
            loads_checkpoint(b"XXXX" + raw[4:])
        with pytest.raises(DataError):
            loads_checkpoint(raw[:-100])
