import json

import numpy as np
import pytest

from radarspeech.dsp import Waveform, wav_read
from radarspeech.simulate import (
    SLOW_TIME_RATE_HZ,
    RadarConfig,
    build_corpus,
    generate_source_clips,
    simulate_trace,
    synth_speech,
)

LAMBDA = 3.9e-3


def sine(freq, duration_s=2.0, rate=8000.0, amp=1.0):
    t = np.arange(int(duration_s * rate)) / rate
    return Waveform(amp * np.sin(2 * np.pi * freq * t), rate)


class TestRadarConfig:
    def test_defaults_valid(self):
        cfg = RadarConfig()
        assert cfg.slow_time_rate_hz == 5100.0
        assert cfg.perception_cutoff_hz == 1000.0

    def test_fixed_rate(self):
        with pytest.raises(ValueError, match="fixed at 5100"):
            RadarConfig(slow_time_rate_hz=4000.0)

    def test_cutoff_range(self):
        with pytest.raises(ValueError, match="cutoff"):
            RadarConfig(perception_cutoff_hz=2550.0)
        with pytest.raises(ValueError, match="cutoff"):
            RadarConfig(perception_cutoff_hz=0.0)

    def test_negative_noise(self):
        with pytest.raises(ValueError, match="noise"):
            RadarConfig(phase_noise_std_rad=-1e-3)


class TestSimulateTrace:
    def test_silent_speech_zero_trace(self):
        cfg = RadarConfig(phase_noise_std_rad=0.0, clutter_phase_rad=0.7)
        # constant zero displacement: clutter is removed by the mean subtraction
        tr = simulate_trace(Waveform(np.zeros(8000), 8000.0), cfg)
        assert np.max(np.abs(tr.wave.samples)) < 1e-12
        assert tr.wave.sample_rate_hz == SLOW_TIME_RATE_HZ

    def test_sine_amplitude_matches_forward_model(self):
        gain = 5e-6
        cfg = RadarConfig(phase_noise_std_rad=0.0, displacement_gain_m=gain)
        tr = simulate_trace(sine(100.0), cfg)
        x = tr.wave.samples
        ref_amp = 4 * np.pi * gain / LAMBDA
        t5 = np.arange(x.size) / SLOW_TIME_RATE_HZ
        ref = ref_amp * np.sin(2 * np.pi * 100.0 * t5)
        # pointwise against the analytic phase (interior: skip edge transients)
        dev = (x - (ref - ref.mean()))[510:-510]
        assert np.max(np.abs(dev)) < 1e-6
        # amplitude by projection onto the 100 Hz quadrature pair
        seg, ts = x[510:-510], t5[510:-510]
        a = 2 * np.dot(seg, np.sin(2 * np.pi * 100 * ts)) / seg.size
        b = 2 * np.dot(seg, np.cos(2 * np.pi * 100 * ts)) / seg.size
        assert np.hypot(a, b) == pytest.approx(ref_amp, abs=1e-6)

    def test_stop_band_rejection(self):
        cfg = RadarConfig(phase_noise_std_rad=0.0)
        lo = simulate_trace(sine(100.0), cfg).wave.samples
        hi = simulate_trace(sine(2000.0), cfg).wave.samples
        rms = lambda v: np.sqrt(np.mean(v**2))
        assert rms(hi) < 0.05 * rms(lo)

    def test_band_limit_invariant_on_synthetic_clips(self):
        cfg = RadarConfig()  # default phase noise
        for seed in range(3):
            tr = simulate_trace(synth_speech(seed), cfg, clip_id="c%d" % seed)
            spec = np.abs(np.fft.rfft(tr.wave.samples)) ** 2
            freqs = np.fft.rfftfreq(len(tr.wave), 1.0 / SLOW_TIME_RATE_HZ)
            above = spec[freqs > cfg.perception_cutoff_hz].sum()
            assert above / spec.sum() < 0.05

    def test_linear_in_gain(self):
        cfg1 = RadarConfig(phase_noise_std_rad=0.0, displacement_gain_m=4e-6)
        cfg2 = RadarConfig(phase_noise_std_rad=0.0, displacement_gain_m=8e-6)
        w = synth_speech(5)
        t1 = simulate_trace(w, cfg1).wave.samples
        t2 = simulate_trace(w, cfg2).wave.samples
        assert np.max(np.abs(t2 - 2 * t1)) / np.max(np.abs(t2)) < 1e-9

    def test_duration_within_10ms(self):
        cfg = RadarConfig()
        for dur in (0.5, 1.33, 2.71):
            w = synth_speech(1, duration_s=dur)
            tr = simulate_trace(w, cfg, clip_id="x")
            assert abs(tr.wave.duration_s - w.duration_s) < 0.010

    def test_deterministic_given_seed(self):
        cfg = RadarConfig(rng_seed=42)
        w = synth_speech(9)
        a = simulate_trace(w, cfg, clip_id="c").wave.samples
        b = simulate_trace(w, cfg, clip_id="c").wave.samples
        assert np.array_equal(a, b)
        c = simulate_trace(w, cfg, clip_id="other").wave.samples
        assert not np.array_equal(a, c)  # distinct per-clip noise streams

    def test_rejects_wrong_rate_and_short_input(self):
        cfg = RadarConfig()
        with pytest.raises(ValueError, match="8000"):
            simulate_trace(Waveform(np.zeros(5100), 5100.0), cfg)
        with pytest.raises(ValueError, match="short"):
            simulate_trace(Waveform(np.zeros(2000), 8000.0), cfg)


class TestSynthSpeech:
    def test_deterministic(self):
        a = synth_speech(3, duration_s=1.7)
        b = synth_speech(3, duration_s=1.7)
        assert np.array_equal(a.samples, b.samples)

    def test_duration_and_level(self):
        w = synth_speech(7, duration_s=2.4)
        assert len(w) == int(2.4 * 8000)
        assert np.max(np.abs(w.samples)) == pytest.approx(0.5)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    src = tmp_path_factory.mktemp("src")
    out = tmp_path_factory.mktemp("corpus")
    generate_source_clips(src, 10, seed=11)
    cfg = RadarConfig(rng_seed=11)
    manifest = build_corpus(src, out, cfg, train_fraction=0.8)
    return src, out, manifest


class TestBuildCorpus:

    def test_split_sizes(self, small_corpus):
        _, _, manifest = small_corpus
        splits = [c["split"] for c in manifest["clips"]]
        assert splits.count("train") == 8
        assert splits.count("test") == 2

    def test_layout_and_rates(self, small_corpus):
        _, out, manifest = small_corpus
        for c in manifest["clips"]:
            d = out / c["split"] / c["id"]
            sp = wav_read(d / "speech.wav")
            rf = wav_read(d / "rf.wav")
            assert sp.sample_rate_hz == 8000.0
            assert rf.sample_rate_hz == 5100.0
            assert abs(sp.duration_s - rf.duration_s) < 0.010
            assert abs(sp.duration_s - c["duration_s"]) < 1e-9

    def test_unit_peak_over_corpus(self, small_corpus):
        _, out, manifest = small_corpus
        peaks = []
        for c in manifest["clips"]:
            rf = wav_read(out / c["split"] / c["id"] / "rf.wav")
            peaks.append(np.max(np.abs(rf.samples)))
        assert max(peaks) == pytest.approx(1.0, abs=2e-4)  # 16-bit quantization

    def test_byte_identical_rebuild(self, small_corpus, tmp_path):
        src, out, manifest = small_corpus
        out2 = tmp_path / "again"
        m2 = build_corpus(src, out2, RadarConfig(rng_seed=11), train_fraction=0.8)
        assert m2 == manifest
        assert (out2 / "manifest.json").read_bytes() == (out / "manifest.json").read_bytes()
        for c in manifest["clips"]:
            for name in ("speech.wav", "rf.wav"):
                a = (out / c["split"] / c["id"] / name).read_bytes()
                b = (out2 / c["split"] / c["id"] / name).read_bytes()
                assert a == b, (c["id"], name)

    def test_empty_dir_errors(self, tmp_path):
        with pytest.raises(ValueError, match="no wav clips"):
            build_corpus(tmp_path, tmp_path / "out", RadarConfig())

    def test_unreadable_clip_skipped_with_warning(self, tmp_path, caplog):
        src = tmp_path / "src"
        generate_source_clips(src, 3, seed=2)
        (src / "broken.wav").write_bytes(b"RIFFgarbage")
        with caplog.at_level("WARNING"):
            manifest = build_corpus(src, tmp_path / "out", RadarConfig())
        assert len(manifest["clips"]) == 3
        assert any("broken.wav" in r.message for r in caplog.records)

    def test_threads_do_not_change_output(self, small_corpus, tmp_path):
        src, out, _ = small_corpus
        out2 = tmp_path / "threaded"
        build_corpus(src, out2, RadarConfig(rng_seed=11), train_fraction=0.8, threads=4)
        assert (out2 / "manifest.json").read_bytes() == (out / "manifest.json").read_bytes()
        rf_a = sorted(out.rglob("rf.wav"))
        rf_b = sorted(out2.rglob("rf.wav"))
        for a, b in zip(rf_a, rf_b):
            assert a.read_bytes() == b.read_bytes()
