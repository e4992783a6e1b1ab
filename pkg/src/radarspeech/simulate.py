"""Radar forward model and paired-corpus synthesis.

The physical capture rig is replaced by a phase-modulation model of one
range bin: audible displacement of a loudspeaker membrane phase-modulates
the reflected millimeter-wave carrier.  What survives is whatever the radar
can perceive: band-limited (default 1 kHz), phase-noisy, sampled at the
5.1 kHz slow-time rate.

All randomness is drawn from counter-based Philox streams keyed by
sha256(seed, purpose, clip id), so corpora are byte-identical across runs,
platforms, and thread counts.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, filtfilt, lfilter

from .dsp import Waveform, resample_cubic_spline, wav_read, wav_write

log = logging.getLogger(__name__)

SLOW_TIME_RATE_HZ = 5100.0
SPEECH_RATE_HZ = 8000.0

# peak membrane displacement of a loudspeaker around 85 dB SPL, order of magnitude
DEFAULT_DISPLACEMENT_M = 5e-6
# 77 GHz automotive radar class
DEFAULT_WAVELENGTH_M = 3.9e-3
# default phase noise keeps above-cutoff trace energy well under the 5% band-limit bound
DEFAULT_PHASE_NOISE_STD_RAD = 2e-4


@dataclass(frozen=True)
class RadarConfig:
    """Forward-model parameters; slow-time rate is fixed at 5100 Hz."""

    carrier_wavelength_m: float = DEFAULT_WAVELENGTH_M
    perception_cutoff_hz: float = 1000.0
    phase_noise_std_rad: float = DEFAULT_PHASE_NOISE_STD_RAD
    clutter_phase_rad: float = 0.0
    displacement_gain_m: float = DEFAULT_DISPLACEMENT_M
    rng_seed: int = 0
    slow_time_rate_hz: float = SLOW_TIME_RATE_HZ

    def __post_init__(self):
        if self.slow_time_rate_hz != SLOW_TIME_RATE_HZ:
            raise ValueError("slow-time rate is fixed at 5100 Hz")
        if not 0.0 < self.perception_cutoff_hz < SLOW_TIME_RATE_HZ / 2:
            raise ValueError("perception cutoff must lie in (0, 2550) Hz")
        if self.phase_noise_std_rad < 0:
            raise ValueError("phase noise std must be >= 0")
        if not self.displacement_gain_m > 0:
            raise ValueError("displacement gain must be positive")
        if not self.carrier_wavelength_m > 0:
            raise ValueError("carrier wavelength must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RfTrace:
    """Demodulated slow-time vibration signal with provenance."""

    wave: Waveform
    clip_id: str
    cfg: RadarConfig

    def __post_init__(self):
        if self.wave.sample_rate_hz != SLOW_TIME_RATE_HZ:
            raise ValueError("RF trace must be sampled at 5100 Hz")


def _stream(seed: int, *tags) -> np.random.Generator:
    """Philox generator keyed by a stable hash of (seed, tags)."""
    digest = hashlib.sha256(("%d:%s" % (seed, ":".join(map(str, tags)))).encode()).digest()
    key = np.frombuffer(digest[:16], dtype="<u8")
    return np.random.Generator(np.random.Philox(key=key))


def simulate_trace(speech: Waveform, cfg: RadarConfig, clip_id: str = "", scale: float = 1.0) -> RfTrace:
    """Run the forward model on one 8 kHz speech clip.

    Pipeline: band-limit to the perception cutoff (4th-order Butterworth,
    run zero-phase so stop-band rejection meets the <5% energy bound and
    alignment is preserved), resample to 5100 Hz, convert displacement to
    carrier phase (4*pi/lambda), add clutter offset and per-sample Gaussian
    phase noise, unwrap, remove the mean.  `scale` is the corpus-level
    unit-peak factor; standalone traces keep scale 1.
    """
    if speech.sample_rate_hz != SPEECH_RATE_HZ:
        raise ValueError("speech must be sampled at 8000 Hz")
    if speech.duration_s < 0.5:
        raise ValueError("speech too short (< 0.5 s)")
    nyq = SPEECH_RATE_HZ / 2.0
    b, a = butter(4, cfg.perception_cutoff_hz / nyq, btype="low")
    band_limited = filtfilt(b, a, speech.samples)
    displacement = cfg.displacement_gain_m * band_limited
    d_slow = resample_cubic_spline(Waveform(displacement, SPEECH_RATE_HZ), SLOW_TIME_RATE_HZ)
    phase = (4.0 * np.pi / cfg.carrier_wavelength_m) * d_slow.samples + cfg.clutter_phase_rad
    if cfg.phase_noise_std_rad > 0:
        rng = _stream(cfg.rng_seed, "trace", clip_id)
        phase = phase + cfg.phase_noise_std_rad * rng.standard_normal(phase.size)
    trace = np.unwrap(phase)
    trace = (trace - trace.mean()) * scale
    out = RfTrace(Waveform(trace, SLOW_TIME_RATE_HZ), clip_id, cfg)
    if abs(out.wave.duration_s - speech.duration_s) > 0.010:
        raise ValueError("trace duration drifted beyond 10 ms from the source clip")
    return out


def synth_speech(seed: int, duration_s: float = 2.0, rate: float = SPEECH_RATE_HZ) -> Waveform:
    """Bundled synthetic talker: formant-shaped harmonic vowels with vibrato
    and aspiration, band-passed noise consonant bursts, and a breath floor.

    Aspiration tracks the local envelope so per-frame mel dynamic range stays
    bounded; the clamped pseudo-inverse mel inversion depends on that.
    """
    rng = _stream(seed, "speech")
    n = int(round(duration_s * rate))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        kind = rng.uniform()
        if kind < 0.65:  # vowel
            dur = min(int(rng.uniform(0.12, 0.35) * rate), n - pos)
            if dur < 80:
                break
            tt = np.arange(dur) / rate
            f0 = rng.uniform(100.0, 240.0)
            vibrato = 1.0 + 0.02 * np.sin(
                2 * np.pi * rng.uniform(4.5, 6.5) * tt + rng.uniform(0, 2 * np.pi)
            )
            jitter = lfilter([1.0], [1.0, -0.999], 0.0015 * rng.standard_normal(dur))
            jitter -= jitter.mean()
            phase0 = np.cumsum(2 * np.pi * f0 * (vibrato + jitter) / rate)
            formants = [
                (rng.uniform(300, 900), rng.uniform(60, 120)),
                (rng.uniform(900, 2400), rng.uniform(90, 180)),
                (rng.uniform(2400, 3500), rng.uniform(120, 250)),
            ]
            seg = np.zeros(dur)
            for k in range(1, int(3900.0 / f0) + 1):
                fk = k * f0
                env = sum(1.0 / (1.0 + ((fk - fc) / bw) ** 2) for fc, bw in formants)
                seg += (env + 0.02) / np.sqrt(k) * np.sin(k * phase0 + rng.uniform(0, 2 * np.pi))
            ramp = min(dur // 6, 160)
            win = np.ones(dur)
            win[:ramp] = np.linspace(0, 1, ramp)
            win[-ramp:] = np.linspace(1, 0, ramp)
            seg = seg / (np.max(np.abs(seg)) or 1.0) * win * rng.uniform(0.5, 1.0)
            envelope = lfilter([1.0], [1.0, -0.995], np.abs(seg))
            envelope /= np.max(envelope) or 1.0
            seg += 0.20 * np.max(np.abs(seg)) * envelope * rng.standard_normal(dur)
            out[pos : pos + dur] += seg
            pos += dur
        elif kind < 0.9:  # consonant burst
            dur = min(int(rng.uniform(0.04, 0.12) * rate), n - pos)
            if dur < 40:
                break
            lo = rng.uniform(800, 2500)
            hi = min(lo + rng.uniform(500, 1400), 3900.0)
            b, a = butter(2, [lo / (rate / 2), hi / (rate / 2)], btype="band")
            seg = lfilter(b, a, rng.standard_normal(dur))
            ramp = max(dur // 4, 8)
            win = np.ones(dur)
            win[:ramp] = np.linspace(0, 1, ramp)
            win[-ramp:] = np.linspace(1, 0, ramp)
            out[pos : pos + dur] += 2.0 * seg * win * rng.uniform(0.3, 0.8)
            pos += dur
        else:  # gap
            pos += int(rng.uniform(0.02, 0.06) * rate)
    white = rng.standard_normal(n)
    pink = lfilter([1.0], [1.0, -0.97], rng.standard_normal(n))
    pink /= np.std(pink)
    out = out / (np.max(np.abs(out)) or 1.0)
    out = out + 0.05 * (0.8 * pink + 0.5 * white)
    return Waveform(0.5 * out / np.max(np.abs(out)), rate)


def generate_source_clips(out_dir, n_clips: int, seed: int,
                          min_duration_s: float = 1.6, max_duration_s: float = 3.2) -> list:
    """Write n_clips synthetic speech WAVs to out_dir; returns sorted paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_clips):
        rng = _stream(seed, "duration", i)
        dur = rng.uniform(min_duration_s, max_duration_s)
        clip_seed = int.from_bytes(
            hashlib.sha256(b"clip:%d:%d" % (seed, i)).digest()[:8], "little"
        )
        w = synth_speech(clip_seed, duration_s=dur)
        p = out_dir / ("clip%03d.wav" % i)
        wav_write(p, w)
        paths.append(p)
    return paths


def build_corpus(speech_dir, out_dir, cfg: RadarConfig,
                 train_fraction: float = 0.8, threads: int = 1) -> dict:
    """Pair every readable WAV in speech_dir with a simulated RF trace.

    Layout: <out_dir>/{train,test}/<id>/{speech.wav, rf.wav} plus
    manifest.json.  Split is deterministic in (sorted ids, seed).  Traces
    are scaled to unit peak over the whole corpus before quantization.
    """
    speech_dir, out_dir = Path(speech_dir), Path(out_dir)
    wavs = sorted(speech_dir.glob("*.wav"))
    if not wavs:
        raise ValueError("no wav clips in %s" % speech_dir)

    clips = []
    for p in wavs:
        try:
            w = wav_read(p)
        except Exception as exc:  # unreadable input is skipped, not fatal
            log.warning("skipping unreadable clip %s: %s", p.name, exc)
            continue
        if not 1.0 <= w.duration_s <= 10.0:
            log.warning("skipping %s: duration %.2f s outside 1-10 s", p.name, w.duration_s)
            continue
        if w.sample_rate_hz != SPEECH_RATE_HZ:
            w = resample_cubic_spline(w, SPEECH_RATE_HZ)
        clips.append((p.stem, w))
    if not clips:
        raise ValueError("no usable clips in %s" % speech_dir)
    clips.sort(key=lambda c: c[0])

    ids = [cid for cid, _ in clips]
    perm = _stream(cfg.rng_seed, "split").permutation(len(ids))
    n_train = int(round(train_fraction * len(ids)))
    train_ids = {ids[i] for i in perm[:n_train]}

    def run(item):
        cid, w = item
        return cid, simulate_trace(w, cfg, clip_id=cid)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            traces = dict(ex.map(run, clips))
    else:
        traces = dict(map(run, clips))

    peak = max(np.max(np.abs(traces[cid].wave.samples)) for cid in ids)
    scale = 1.0 / peak if peak > 0 else 1.0

    manifest = {
        "radar_config": cfg.to_dict(),
        "train_fraction": train_fraction,
        "clips": [],
    }
    for cid, w in clips:
        split = "train" if cid in train_ids else "test"
        clip_dir = out_dir / split / cid
        clip_dir.mkdir(parents=True, exist_ok=True)
        wav_write(clip_dir / "speech.wav", w)
        scaled = Waveform(traces[cid].wave.samples * scale, SLOW_TIME_RATE_HZ)
        wav_write(clip_dir / "rf.wav", scaled)
        manifest["clips"].append({"id": cid, "duration_s": w.duration_s, "split": split})
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(corpus_dir) -> dict:
    p = Path(corpus_dir) / "manifest.json"
    if not p.exists():
        raise FileNotFoundError("missing manifest.json in %s" % corpus_dir)
    return json.loads(p.read_text())


def clip_paths(corpus_dir, entry: dict) -> tuple:
    d = Path(corpus_dir) / entry["split"] / entry["id"]
    return d / "speech.wav", d / "rf.wav"
