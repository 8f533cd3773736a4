import json
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homosynth.losses import si_snr
from homosynth.neural import CarnConfig, Tensor
from homosynth.pipeline import (
    Adam,
    CheckpointError,
    ConfigError,
    NonFiniteLossError,
    PlateauHalver,
    SystemConfig,
    build_model,
    checkpoint_from_model,
    evaluate,
    forward,
    load_checkpoint,
    load_config,
    mix_at_snr,
    model_from_checkpoint,
    save_checkpoint,
    save_config,
    train,
)
from homosynth.pipeline.checkpoint import MAGIC, decode, encode, rng_from_words, rng_state_words
from homosynth.pipeline.config import CONFIG_KEYS
from homosynth.pipeline.mixing import measured_snr
from homosynth.pipeline.training import clip_grad_norm
from homosynth.signal import AudioClip
from synthetic import vowel_like

TINY = CarnConfig([4, 8], arn_hidden=16)


def _tiny_cfg(**kw):
    base = dict(carn=TINY, lifter_hidden=16, batch=1, rir_prob=0.0)
    base.update(kw)
    return SystemConfig(**base)


def _interior_error(x, y, win):
    h = win // 2
    return np.linalg.norm(y[h:-h] - x[h:-h]) / np.linalg.norm(x[h:-h])


def _noise(n, seed=0, scale=0.1):
    return AudioClip(scale * np.random.default_rng(seed).standard_normal(n))


class TestConfig:
    def test_defaults(self):
        cfg = SystemConfig()
        assert (cfg.win_len, cfg.hop, cfg.lifter_N, cfg.lr) == (512, 256, 29, 1e-3)
        assert cfg.snr_range == (-5.0, 20.0) and cfg.rir_prob == 0.75 and cfg.batch == 4
        assert cfg.n_bins == 257

    def test_json_keys_and_round_trip(self, tmp_path):
        cfg = SystemConfig(win_len=320, hop=160, lifter_mode="traditional", seed=9)
        path = tmp_path / "c.json"
        save_config(path, cfg)
        data = json.loads(path.read_text())
        assert set(CONFIG_KEYS) <= set(data)
        assert load_config(path) == cfg

    def test_partial_file_uses_defaults(self):
        cfg = SystemConfig.from_json('{"hop": 128}')
        assert cfg.hop == 128 and cfg.win_len == 512

    @pytest.mark.parametrize(
        "text",
        ['{"bogus": 1}', '{"lifter_mode": "magic"}', '{"hop": 0}', '{"lifter_N": 400}', "[1]", "{", '{"snr_low": 30}'],
    )
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            SystemConfig.from_json(text)


class TestForward:
    @pytest.mark.parametrize("mode", ["intelligent", "traditional"])
    @pytest.mark.parametrize("framing", [(512, 256), (320, 160)])
    def test_structural_round_trip(self, mode, framing):
        win, hop = framing
        cfg = SystemConfig(win_len=win, hop=hop, lifter_mode=mode)
        model = build_model(cfg, seed=3, dtype=np.float64, identity_carns=True)
        if model.lifter is not None:
            # a non-trivial random mask
            model.lifter.proj.weight.data = np.random.default_rng(4).uniform(-1, 1, model.lifter.proj.weight.shape)
        clip = AudioClip(vowel_like(1.0, seed=5) + 0.01 * np.random.default_rng(6).standard_normal(16000))
        result = forward(clip, model)
        assert len(result.enhanced) == len(clip)
        assert _interior_error(clip.samples, result.enhanced.samples, win) <= 1e-6
        mask = result.intermediates["mask"]
        if mode == "traditional":
            assert set(np.unique(mask)) == {0.0, 1.0}
        else:
            assert np.ptp(mask) > 0.1

    def test_intermediates(self):
        cfg = _tiny_cfg()
        model = build_model(cfg, dtype=np.float64)
        clip = AudioClip(vowel_like(0.5))
        inter = forward(clip, model).intermediates
        cep = inter["cepstrum"]
        np.testing.assert_allclose(
            inter["excitation_cepstrum"].frames + inter["vocal_cepstrum"].frames, cep.frames, atol=1e-12
        )
        assert inter["excitation_spec"].shape == (cep.shape[0], 257)
        assert set(inter) >= {"mask", "vocal_spec", "excitation_estimate", "vocal_estimate"}

    @pytest.mark.parametrize("framing", [(512, 256), (320, 160)])
    def test_full_size_runs(self, framing):
        cfg = SystemConfig(win_len=framing[0], hop=framing[1])
        model = build_model(cfg)
        out = forward(AudioClip(vowel_like(1.0)), model).enhanced
        assert len(out) == 16000 and np.all(np.isfinite(out.samples))

    def test_deterministic(self):
        cfg = _tiny_cfg()
        clip = AudioClip(vowel_like(0.5))
        a = forward(clip, build_model(cfg, seed=1)).enhanced.samples
        b = forward(clip, build_model(cfg, seed=1)).enhanced.samples
        np.testing.assert_array_equal(a, b)


class TestMixing:
    def test_zero_db(self):
        clean = AudioClip(vowel_like(1.0))
        noise = _noise(7000)
        mix = mix_at_snr(clean, noise, 0.0)
        scaled = mix.samples - clean.samples
        assert abs(np.mean(scaled**2) / np.mean(clean.samples**2) - 1.0) < 1e-10
        assert len(mix) == len(clean)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-10.0, 30.0), st.integers(0, 1000))
    def test_requested_snr(self, snr, seed):
        clean = AudioClip(np.random.default_rng(seed).standard_normal(3000))
        mix = mix_at_snr(clean, _noise(1200, seed + 1), snr)
        achieved = measured_snr(clean.samples, mix.samples)
        assert abs(10 ** ((achieved - snr) / 10) - 1.0) < 1e-10

    def test_high_snr_limit(self):
        clean = AudioClip(vowel_like(0.5))
        mix = mix_at_snr(clean, _noise(8000), 200.0)
        assert np.max(np.abs(mix.samples - clean.samples)) < 1e-9

    def test_si_snr_bounded_by_snr(self):
        rng = np.random.default_rng(0)
        for i in range(20):
            clean = AudioClip(vowel_like(0.5, seed=i))
            snr = rng.uniform(-5, 20)
            mix = mix_at_snr(clean, _noise(8000, seed=100 + i), snr)
            assert si_snr(mix.samples, clean.samples) <= snr + 0.5

    def test_rir_applied_first(self):
        clean = AudioClip(vowel_like(0.5))
        rir = AudioClip(np.r_[1.0, np.zeros(10), 0.5])
        mix = mix_at_snr(clean, _noise(8000), 200.0, rir)
        reverberant = np.convolve(clean.samples, rir.samples)[: len(clean)]
        assert np.max(np.abs(mix.samples - reverberant)) < 1e-9

    def test_errors(self):
        clean = AudioClip(np.ones(10))
        with pytest.raises(ValueError):
            mix_at_snr(clean, AudioClip(np.zeros(10)), 0.0)
        with pytest.raises(ValueError):
            mix_at_snr(AudioClip(np.zeros(10)), _noise(10), 0.0)
        with pytest.raises(ValueError):
            mix_at_snr(clean, AudioClip(np.ones(10), 8000), 0.0)


class TestOptimiser:
    def test_adam_matches_scalar_oracle(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = Tensor(np.array([2.0]), requires_grad=True)
        opt = Adam([p], lr=lr)
        x, m, v = 2.0, 0.0, 0.0
        for t in range(1, 11):
            p.grad = 2.0 * (p.data - 0.5)
            opt.step()
            g = 2.0 * (x - 0.5)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
            assert abs(p.data[0] - x) <= 1e-12

    def test_plateau_schedule(self):
        sched = PlateauHalver(1e-3)
        lrs = [sched.update(v) for v in (5.0, 5.1, 5.2)]
        assert lrs == [1e-3, 1e-3, 5e-4]

    def test_plateau_resets_on_improvement(self):
        sched = PlateauHalver(1.0)
        lrs = [sched.update(v) for v in (5.0, 5.1, 4.9, 5.0, 5.0, 5.0)]
        assert lrs == [1.0, 1.0, 1.0, 1.0, 0.5, 0.5]

    def test_clip_grad_norm(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        b = Tensor(np.zeros(1), requires_grad=True)
        a.grad, b.grad = np.array([3.0, 4.0]), np.array([12.0])
        assert clip_grad_norm([a, b], 5.0) == pytest.approx(13.0)
        total = math.sqrt(np.sum(a.grad**2) + np.sum(b.grad**2))
        assert total == pytest.approx(5.0)


class TestCheckpoint:
    def _ckpt(self, cfg=None):
        cfg = cfg or _tiny_cfg()
        model = build_model(cfg)
        rng = np.random.default_rng(5)
        rng.random(3)
        return checkpoint_from_model(model, step=42, rng=rng)

    def test_bit_exact_round_trip(self, tmp_path):
        ckpt = self._ckpt()
        path = tmp_path / "m.bin"
        save_checkpoint(path, ckpt)
        back = load_checkpoint(path)
        assert list(back.arrays) == list(ckpt.arrays)
        for name, arr in ckpt.arrays.items():
            assert back.arrays[name].tobytes() == arr.tobytes()
        assert back.step == 42 and back.config == ckpt.config
        assert encode(back) == path.read_bytes()

    def test_rng_state_round_trip(self):
        rng = np.random.default_rng(11)
        rng.random(5)
        rng.integers(0, 10, 3)
        clone = rng_from_words(rng_state_words(rng))
        np.testing.assert_array_equal(clone.random(10), rng.random(10))

    def test_header_layout(self):
        data = encode(self._ckpt())
        assert data[:4] == MAGIC == b"INHS"
        assert int.from_bytes(data[4:8], "little") == 1

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.bin"
        path.write_bytes(b"XXXX" + encode(self._ckpt())[4:])
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_bad_version(self):
        data = bytearray(encode(self._ckpt()))
        data[4] = 9
        with pytest.raises(CheckpointError, match="version"):
            decode(bytes(data))

    def test_truncated(self):
        data = encode(self._ckpt())
        with pytest.raises(CheckpointError, match="truncated"):
            decode(data[:-10])

    def test_framing_mismatch_names_array(self, tmp_path):
        path = tmp_path / "m.bin"
        save_checkpoint(path, self._ckpt(_tiny_cfg()))
        with pytest.raises(CheckpointError, match=r"shape mismatch for array '[a-z_]+\."):
            load_checkpoint(path, expected=_tiny_cfg(win_len=320, hop=160))

    def test_model_round_trip(self):
        ckpt = self._ckpt()
        model = model_from_checkpoint(ckpt)
        clip = AudioClip(vowel_like(0.3))
        a = forward(clip, model).enhanced.samples
        b = forward(clip, model_from_checkpoint(decode(encode(ckpt)))).enhanced.samples
        np.testing.assert_array_equal(a, b)


class TestEvaluate:
    def test_identity_model_no_improvement(self):
        cfg = SystemConfig(lifter_mode="traditional")
        ckpt = checkpoint_from_model(build_model(cfg, identity_carns=True))
        pairs = []
        for i in range(3):
            clean = AudioClip(vowel_like(1.0, seed=i))
            pairs.append((mix_at_snr(clean, _noise(16000, i), 5.0), clean))
        result = evaluate(ckpt, pairs)
        assert len(result.rows) == 3
        assert abs(result.mean_improvement) < 5e-4

    def test_clean_input_saturates(self):
        cfg = SystemConfig(lifter_mode="traditional")
        model = build_model(cfg, dtype=np.float64, identity_carns=True)
        clean = AudioClip(vowel_like(1.0))
        result = evaluate(model, [(clean, clean)])
        ceiling = 10 * np.log10((np.sum(clean.samples**2) + 1e-8) / 1e-8)
        assert result.mean_noisy == pytest.approx(ceiling, abs=1e-9)
        assert result.mean_enhanced == pytest.approx(ceiling, abs=1e-3)

    def test_length_mismatch(self):
        model = build_model(SystemConfig(lifter_mode="traditional"), identity_carns=True)
        with pytest.raises(ValueError):
            evaluate(model, [(AudioClip(np.ones(600)), AudioClip(np.ones(700)))])


class TestTraining:
    def _data(self):
        return [(AudioClip(vowel_like(1.0, seed=1)), _noise(16000, 2))]

    def test_smoke_50_steps(self):
        cfg = _tiny_cfg(snr_range=(0.0, 0.0), seed=2)
        result = train(self._data(), cfg, steps=50)
        losses = [v for _, v in result.losses]
        assert len(losses) == 50 and all(np.isfinite(losses))
        assert losses[-1] < losses[0]
        assert result.checkpoint.step == 50

    def test_deterministic(self):
        cfg = _tiny_cfg(seed=4, batch=2)
        data = self._data() * 2
        a = train(data, cfg, steps=6)
        b = train(data, cfg, steps=6)
        assert a.losses == b.losses
        assert encode(a.checkpoint) == encode(b.checkpoint)

    def test_epochs_and_schedule_records(self):
        cfg = _tiny_cfg(seed=1, batch=2)
        result = train(self._data() * 3, cfg, epochs=2)
        assert len(result.losses) == 4 and len(result.val_losses) == 2 and len(result.lrs) == 2

    def test_rir_branch(self):
        cfg = _tiny_cfg(rir_prob=1.0)
        rir = AudioClip(np.r_[1.0, np.zeros(30), 0.3])
        result = train(self._data(), cfg, steps=2, rirs=[rir])
        assert all(np.isfinite(v) for _, v in result.losses)

    def test_nonfinite_loss_dumps_batch(self, tmp_path):
        cfg = _tiny_cfg()
        model = build_model(cfg)
        model.carn_e.decoder[-1].bias.data[...] = np.nan
        with pytest.raises(NonFiniteLossError) as err, np.errstate(all="ignore"):
            train(self._data(), cfg, steps=1, model=model, dump_dir=tmp_path)
        dump = np.load(err.value.dump_path)
        assert "noisy_0" in dump and "clean_0" in dump

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train([], _tiny_cfg(), steps=1)
