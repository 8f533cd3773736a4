import csv
import json

import numpy as np
import pytest

from homosynth import homomorphic as hm
from homosynth.cli import build_parser, main
from homosynth.losses import si_snr
from homosynth.pipeline import SystemConfig, build_model, checkpoint_from_model, save_checkpoint
from homosynth.pipeline.mixing import measured_snr
from homosynth.signal import AudioClip, read_wav, write_wav
from synthetic import vowel_like

CSV_NAMES = [
    "cepstrum.csv",
    "mask.csv",
    "excitation_cepstrum.csv",
    "vocal_cepstrum.csv",
    "excitation_spec.csv",
    "vocal_spec.csv",
]

TINY = {
    "encoder_channels": [4, 8],
    "arn_hidden": 16,
    "lifter_hidden": 16,
    "batch": 1,
    "rir_prob": 0.0,
    "snr_low": 0.0,
    "snr_high": 0.0,
}


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("HOMOSYNTH_SEED", raising=False)
    write_wav("clean.wav", AudioClip(vowel_like(1.0, seed=0)))
    write_wav("noise.wav", AudioClip(0.1 * np.random.default_rng(0).standard_normal(12000)))
    (tmp_path / "manifest.tsv").write_text("clean.wav\tnoise.wav\n")
    (tmp_path / "tiny.json").write_text(json.dumps(TINY))
    return tmp_path


def _identity_checkpoint(path, **cfg_kw):
    cfg = SystemConfig(**cfg_kw)
    save_checkpoint(path, checkpoint_from_model(build_model(cfg, identity_carns=True)))


class TestUsage:
    def test_no_verb(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_verb(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["mix", "a.wav", "b.wav", "--snr", "0", "--output", "x.wav", "--loud"])
        assert exc.value.code == 1

    def test_help_documents_precedence(self):
        text = build_parser()._subparsers._group_actions[0].choices["train"].format_help()
        assert "precedence" in text and "HOMOSYNTH_SEED" in text


class TestDecompose:
    def test_writes_csvs_and_round_trip(self, workdir, capsys):
        assert main(["decompose", "clean.wav", "--out-dir", "dec"]) == 0
        out = capsys.readouterr().out
        error = float(out.strip().split()[-1])
        assert error <= 1e-6
        for name in CSV_NAMES:
            assert (workdir / "dec" / name).exists()
        cep = hm.read_frames_csv(workdir / "dec" / "cepstrum.csv")
        mask = hm.read_frames_csv(workdir / "dec" / "mask.csv")
        exc = hm.read_frames_csv(workdir / "dec" / "excitation_cepstrum.csv")
        voc = hm.read_frames_csv(workdir / "dec" / "vocal_cepstrum.csv")
        assert cep.shape == mask.shape and cep.shape[1] == 512
        np.testing.assert_allclose(exc + voc, cep, atol=1e-12)
        spec = hm.read_frames_csv(workdir / "dec" / "vocal_spec.csv")
        assert np.iscomplexobj(spec) and spec.shape[1] == 257

    def test_traditional_mask_binary(self, workdir):
        assert main(["decompose", "clean.wav", "--out-dir", "dec", "--lifter-mode", "traditional"]) == 0
        mask = hm.read_frames_csv(workdir / "dec" / "mask.csv")
        assert set(np.unique(mask)) == {0.0, 1.0}

    def test_csv_lossless(self, workdir):
        assert main(["decompose", "clean.wav", "--out-dir", "dec"]) == 0
        path = workdir / "dec" / "cepstrum.csv"
        values = hm.read_frames_csv(path)
        hm.write_frames_csv(workdir / "again.csv", values)
        assert (workdir / "again.csv").read_text() == path.read_text()

    def test_missing_input(self, workdir, capsys):
        assert main(["decompose", "missing.wav", "--out-dir", "dec"]) == 1
        assert "missing.wav" in capsys.readouterr().err
        assert not (workdir / "dec" / "cepstrum.csv").exists()

    def test_bad_config(self, workdir, capsys):
        (workdir / "bad.json").write_text('{"bogus": 3}')
        assert main(["decompose", "clean.wav", "--out-dir", "dec", "--config", "bad.json"]) == 1
        assert "bogus" in capsys.readouterr().err


class TestEnhance:
    def test_identity_checkpoint(self, workdir, capsys):
        _identity_checkpoint("id.bin")
        assert main(["enhance", "clean.wav", "--checkpoint", "id.bin", "--output", "out.wav"]) == 0
        x, y = read_wav("clean.wav").samples, read_wav("out.wav").samples
        assert len(x) == len(y)
        assert np.max(np.abs(x - y)) <= 2 / 32768

    def test_clean_reference_printout(self, workdir, capsys):
        _identity_checkpoint("id.bin")
        assert main(["mix", "clean.wav", "noise.wav", "--snr", "5", "--output", "noisy.wav"]) == 0
        capsys.readouterr()
        assert main(["enhance", "noisy.wav", "--checkpoint", "id.bin", "--output", "o.wav", "--clean", "clean.wav"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("noisy SI-SNR: ") and lines[1].startswith("enhanced SI-SNR: ")
        for line in lines:
            number = line.split(": ")[1].split()[0]
            assert len(number.split(".")[1]) == 3

    def test_config_mismatch(self, workdir, capsys):
        _identity_checkpoint("id.bin")
        code = main(["enhance", "clean.wav", "--checkpoint", "id.bin", "--output", "o.wav", "--win-len", "320", "--hop", "160", "--config", "tiny.json"])
        assert code == 1
        assert "shape mismatch" in capsys.readouterr().err
        assert not (workdir / "o.wav").exists()

    def test_not_a_checkpoint(self, workdir, capsys):
        (workdir / "junk.bin").write_bytes(b"garbage")
        assert main(["enhance", "clean.wav", "--checkpoint", "junk.bin", "--output", "o.wav"]) == 1
        assert "not a checkpoint" in capsys.readouterr().err


class TestTrainEvaluateMix:
    def test_train_writes_outputs(self, workdir):
        code = main(["train", "manifest.tsv", "--config", "tiny.json", "--output", "m.bin", "--steps", "50", "--seed", "2"])
        assert code == 0
        rows = list(csv.reader(open(workdir / "loss.csv")))
        assert rows[0] == ["step", "loss"]
        losses = [float(r[1]) for r in rows[1:]]
        assert [int(r[0]) for r in rows[1:]] == list(range(1, 51))
        assert losses[-1] < losses[0]
        assert (workdir / "m.bin").read_bytes()[:4] == b"INHS"

    def test_train_deterministic(self, workdir):
        args = ["train", "manifest.tsv", "--config", "tiny.json", "--steps", "5", "--seed", "7"]
        assert main(args + ["--output", "a/m.bin"]) == 0
        assert main(args + ["--output", "b/m.bin"]) == 0
        assert (workdir / "a" / "loss.csv").read_bytes() == (workdir / "b" / "loss.csv").read_bytes()
        assert (workdir / "a" / "m.bin").read_bytes() == (workdir / "b" / "m.bin").read_bytes()

    def test_seed_env_fallback_and_flag_precedence(self, workdir, monkeypatch):
        base = ["train", "manifest.tsv", "--config", "tiny.json", "--steps", "3"]
        monkeypatch.setenv("HOMOSYNTH_SEED", "11")
        assert main(base + ["--output", "env/m.bin"]) == 0
        assert main(base + ["--output", "flag/m.bin", "--seed", "11"]) == 0
        assert main(base + ["--output", "other/m.bin", "--seed", "12"]) == 0
        env = (workdir / "env" / "loss.csv").read_bytes()
        assert env == (workdir / "flag" / "loss.csv").read_bytes()
        assert env != (workdir / "other" / "loss.csv").read_bytes()

    def test_malformed_manifest(self, workdir, capsys):
        (workdir / "bad.tsv").write_text("clean.wav\tnoise.wav\nclean.wav noise.wav\n\nx\ty\tz\n")
        assert main(["train", "bad.tsv", "--output", "m.bin", "--steps", "1"]) == 1
        err = capsys.readouterr().err
        assert "bad.tsv:2" in err and "bad.tsv:4" in err
        assert not (workdir / "m.bin").exists()

    def test_manifest_missing_audio(self, workdir, capsys):
        (workdir / "m.tsv").write_text("clean.wav\tnowhere.wav\n")
        assert main(["train", "m.tsv", "--output", "m.bin", "--steps", "1"]) == 1
        assert "nowhere.wav" in capsys.readouterr().err

    def test_nonfinite_exit_code(self, workdir, monkeypatch, capsys):
        from homosynth import cli
        from homosynth.pipeline import NonFiniteLossError

        def boom(*args, **kwargs):
            raise NonFiniteLossError("non-finite loss at step 1")

        monkeypatch.setattr(cli, "train", boom)
        assert main(["train", "manifest.tsv", "--output", "m.bin", "--steps", "1"]) == 2
        assert not (workdir / "m.bin").exists()

    def test_evaluate_identity(self, workdir, capsys):
        _identity_checkpoint("id.bin")
        (workdir / "two.tsv").write_text("clean.wav\tnoise.wav\nclean.wav\tnoise.wav\n")
        assert main(["evaluate", "two.tsv", "--checkpoint", "id.bin", "--snr", "5"]) == 0
        rows = list(csv.reader(capsys.readouterr().out.strip().splitlines()))
        assert rows[0] == ["clip", "noisy_sisnr", "enhanced_sisnr", "improvement"]
        assert len(rows) == 4 and rows[-1][0] == "mean"
        for row in rows[1:]:
            assert abs(float(row[3])) <= 0.0005

    def test_evaluate_paired(self, workdir, capsys):
        _identity_checkpoint("id.bin")
        main(["mix", "clean.wav", "noise.wav", "--snr", "3", "--output", "noisy.wav"])
        (workdir / "p.tsv").write_text("noisy.wav\tclean.wav\n")
        capsys.readouterr()
        assert main(["evaluate", "p.tsv", "--checkpoint", "id.bin", "--paired"]) == 0
        rows = list(csv.reader(capsys.readouterr().out.strip().splitlines()))
        assert abs(float(rows[1][1]) - si_snr(read_wav("noisy.wav").samples, read_wav("clean.wav").samples)) < 1e-3

    def test_mix_zero_db(self, workdir):
        assert main(["mix", "clean.wav", "noise.wav", "--snr", "0", "--output", "mix.wav"]) == 0
        mixed = read_wav("mix.wav").samples
        clean = read_wav("clean.wav").samples
        assert len(mixed) == len(clean)
        # 16-bit quantisation of the written mix limits the achievable accuracy
        assert abs(measured_snr(clean, mixed)) < 0.01

    def test_mix_deterministic(self, workdir):
        for name in ("a.wav", "b.wav"):
            assert main(["mix", "clean.wav", "noise.wav", "--snr", "2.5", "--output", name]) == 0
        assert (workdir / "a.wav").read_bytes() == (workdir / "b.wav").read_bytes()
