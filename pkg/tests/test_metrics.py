"""Tests for LSD, STOI, and corpus evaluation reports."""

import csv
import json

import numpy as np
import pytest

from radarspeech import dsp, metrics, model, simulate

from oracles import lsd_oracle, stoi_oracle


def noise_clip(seed, n=16000, scale=0.3):
    rng = np.random.default_rng(seed)
    return dsp.Waveform(scale * rng.normal(size=n), 8000)


def with_noise_at_snr(wave, snr_db, seed):
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=len(wave.samples))
    sig_rms = np.sqrt(np.mean(wave.samples ** 2))
    noise_rms = np.sqrt(np.mean(noise ** 2))
    gain = sig_rms / (noise_rms * 10.0 ** (snr_db / 20.0))
    return dsp.Waveform(wave.samples + gain * noise, wave.sample_rate_hz)


class TestLsd:
    def test_identity_is_zero(self):
        x = noise_clip(0)
        assert metrics.lsd(x, x) == 0.0

    def test_amplitude_decade_is_two(self):
        x = noise_clip(1)
        scaled = dsp.Waveform(10.0 * x.samples, 8000)
        assert metrics.lsd(x, scaled) == pytest.approx(2.0, abs=1e-9)

    def test_symmetric_in_swap(self):
        x = noise_clip(2)
        k = 3.7
        scaled = dsp.Waveform(k * x.samples, 8000)
        expect = abs(2.0 * np.log10(k))
        assert metrics.lsd(x, scaled) == pytest.approx(expect, abs=1e-9)
        assert metrics.lsd(scaled, x) == pytest.approx(expect, abs=1e-9)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(3):
            a = 0.4 * rng.normal(size=6400)
            b = 0.4 * rng.normal(size=6400)
            got = metrics.lsd(dsp.Waveform(a, 8000), dsp.Waveform(b, 8000))
            assert got == pytest.approx(lsd_oracle(a, b), abs=1e-9)

    def test_nonnegative(self):
        a, b = noise_clip(4), noise_clip(5)
        assert metrics.lsd(a, b) >= 0.0

    def test_trims_small_mismatch(self):
        x = noise_clip(6)
        y = dsp.Waveform(x.samples[:15600], 8000)
        assert metrics.lsd(x, y) == 0.0

    def test_rejects_large_mismatch(self):
        x = noise_clip(7)
        y = dsp.Waveform(x.samples[:8000], 8000)
        with pytest.raises(ValueError, match="length mismatch beyond 10%"):
            metrics.lsd(x, y)

    def test_rejects_rate_mismatch(self):
        x = noise_clip(8)
        y = dsp.Waveform(x.samples, 5100)
        with pytest.raises(ValueError, match="sample rates differ"):
            metrics.lsd(x, y)


class TestStoi:
    def test_self_intelligibility(self):
        x = simulate.synth_speech(seed=50, duration_s=1.5)
        assert metrics.stoi(x, x) >= 0.999

    def test_monotone_in_snr(self):
        x = simulate.synth_speech(seed=51, duration_s=1.5)
        scores = [metrics.stoi(x, with_noise_at_snr(x, snr, seed=52))
                  for snr in (-10.0, 0.0, 10.0)]
        assert scores[0] < scores[1] < scores[2]

    def test_matches_loop_oracle(self):
        cases = []
        a = simulate.synth_speech(seed=101, duration_s=1.0)
        cases.append((a, with_noise_at_snr(a, 0.0, seed=60)))
        b = simulate.synth_speech(seed=102, duration_s=1.2)
        cases.append((b, with_noise_at_snr(b, 10.0, seed=61)))
        c = simulate.synth_speech(seed=103, duration_s=0.8)
        cases.append((c, with_noise_at_snr(c, -5.0, seed=62)))
        for ref, est in cases:
            want = stoi_oracle(ref.samples, est.samples, 8000)
            assert metrics.stoi(ref, est) == pytest.approx(want, abs=1e-3)

    def test_bounded(self):
        x = simulate.synth_speech(seed=53, duration_s=1.0)
        got = metrics.stoi(x, with_noise_at_snr(x, -20.0, seed=54))
        assert -1.0 <= got <= 1.0

    def test_silent_reference_rejected(self):
        zeros = dsp.Waveform(np.zeros(8000), 8000)
        with pytest.raises(ValueError, match="no active frames"):
            metrics.stoi(zeros, zeros)

    def test_rejects_short_clip(self):
        x = simulate.synth_speech(seed=55, duration_s=0.3)
        with pytest.raises(ValueError, match="at least 0.5 s"):
            metrics.stoi(x, x)

    def test_rejects_length_mismatch(self):
        x = simulate.synth_speech(seed=56, duration_s=1.0)
        y = dsp.Waveform(x.samples[:-100], 8000)
        with pytest.raises(ValueError, match="length mismatch"):
            metrics.stoi(x, y)


@pytest.fixture(scope="module")
def eval_setup(tmp_path_factory):
    src = tmp_path_factory.mktemp("speech")
    corpus = tmp_path_factory.mktemp("corpus")
    run = tmp_path_factory.mktemp("run")
    simulate.generate_source_clips(str(src), n_clips=6, seed=33)
    simulate.build_corpus(str(src), str(corpus), simulate.RadarConfig(rng_seed=33),
                          train_fraction=0.8)
    cfg = model.NetConfig(input_size=80, base_channels=2, token_dim=32,
                          transformer_layers=2)
    state = model.train(str(corpus), str(run), cfg, steps=3, lr=0.01, seed=33)
    return str(corpus), state


class TestEvaluate:
    def test_report_structure(self, eval_setup):
        corpus, state = eval_setup
        report = metrics.evaluate(corpus, state, griffin_lim_iters=8)
        assert set(report.variants) == set(metrics.VARIANTS)
        manifest = simulate.load_manifest(corpus)
        test_ids = sorted(e["id"] for e in manifest["clips"]
                          if e["split"] == "test")
        for result in report.variants.values():
            assert [c["id"] for c in result.clips] == test_ids
            assert result.lsd_mean >= 0.0
        assert report.n_clips == len(test_ids)

    def test_aggregates_match_clips(self, eval_setup):
        corpus, state = eval_setup
        report = metrics.evaluate(corpus, state, griffin_lim_iters=8)
        for result in report.variants.values():
            lsds = [c["lsd"] for c in result.clips]
            stois = [c["stoi"] for c in result.clips]
            assert result.lsd_mean == pytest.approx(np.mean(lsds), abs=1e-9)
            assert result.stoi_mean == pytest.approx(np.mean(stois), abs=1e-9)
            assert result.lsd_std == pytest.approx(np.std(lsds), abs=1e-9)

    def test_copy_baseline_lsd_positive(self, eval_setup):
        corpus, state = eval_setup
        report = metrics.evaluate(corpus, state,
                                  variants=("copy-input-baseline",))
        assert report.variants["copy-input-baseline"].lsd_mean > 0.0

    def test_deterministic(self, eval_setup):
        corpus, state = eval_setup
        a = metrics.evaluate(corpus, state, griffin_lim_iters=4)
        b = metrics.evaluate(corpus, state, griffin_lim_iters=4)
        assert a.to_dict() == b.to_dict()

    def test_threads_do_not_change_report(self, eval_setup):
        corpus, state = eval_setup
        a = metrics.evaluate(corpus, state, griffin_lim_iters=4)
        b = metrics.evaluate(corpus, state, griffin_lim_iters=4, threads=4)
        assert a.to_dict() == b.to_dict()

    def test_writes_json_and_csv(self, eval_setup, tmp_path):
        corpus, state = eval_setup
        report = metrics.evaluate(corpus, state, griffin_lim_iters=4)
        jpath = tmp_path / "report.json"
        cpath = tmp_path / "report.csv"
        report.write_json(jpath)
        report.write_csv(cpath)
        loaded = json.loads(jpath.read_text())
        assert loaded == report.to_dict()
        rows = list(csv.reader(cpath.open()))
        assert rows[0] == ["metric"] + sorted(metrics.VARIANTS)
        assert [r[0] for r in rows[1:]] == ["lsd_mean", "lsd_std",
                                            "stoi_mean", "stoi_std"]

    def test_rejects_unknown_variant(self, eval_setup):
        corpus, state = eval_setup
        with pytest.raises(ValueError, match="unknown variant"):
            metrics.evaluate(corpus, state, variants=("vocoder",))

    def test_rejects_empty_test_split(self, eval_setup, tmp_path):
        _, state = eval_setup
        src = tmp_path / "speech"
        src.mkdir()
        dsp.wav_write(str(src / "clip0.wav"), simulate.synth_speech(seed=70))
        corpus = tmp_path / "corpus"
        simulate.build_corpus(str(src), str(corpus),
                              simulate.RadarConfig(rng_seed=1), train_fraction=1.0)
        with pytest.raises(ValueError, match="empty 'test' split"):
            metrics.evaluate(str(corpus), state)
