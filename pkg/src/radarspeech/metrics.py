"""Objective speech-quality metrics and corpus-level evaluation.

LSD (log-spectral distance) uses the pipeline's own 512/128 STFT geometry.
STOI follows the canonical 10 kHz formulation: silent-frame removal with a
40 dB range VAD keyed on the reference, one-third-octave band energies from
a 256/128 STFT, and clipped normalized correlations over 384 ms segments.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import resample_poly

from . import dsp, model, simulate

log = logging.getLogger(__name__)

VARIANTS = ("griffinlim", "istft-rf-phase", "copy-input-baseline")

STOI_RATE_HZ = 10000
STOI_FRAME = 256
STOI_HOP = 128
STOI_NFFT = 512
STOI_N_BANDS = 15
STOI_BAND_START_HZ = 150.0
STOI_SEG_FRAMES = 30
STOI_BETA_DB = -15.0
STOI_VAD_RANGE_DB = 40.0
_EPS = np.finfo(np.float64).eps
# frames whose peak energy never rises above this are true silence
_SILENCE_DB = -200.0


def _log_power(wave: dsp.Waveform) -> np.ndarray:
    bins = dsp.stft(wave).bins
    return np.log10(np.maximum(np.abs(bins) ** 2, dsp.POWER_FLOOR))


def lsd(ref: dsp.Waveform, est: dsp.Waveform) -> float:
    """Root-mean-square distance between log10 power spectra, averaged over
    frames. Lengths may differ by at most 10%; the excess is trimmed."""
    if ref.sample_rate_hz != est.sample_rate_hz:
        raise ValueError("sample rates differ: %d vs %d"
                         % (ref.sample_rate_hz, est.sample_rate_hz))
    n_r, n_e = len(ref.samples), len(est.samples)
    if abs(n_r - n_e) > 0.1 * max(n_r, n_e):
        raise ValueError("length mismatch beyond 10%%: %d vs %d samples" % (n_r, n_e))
    n = min(n_r, n_e)
    a = _log_power(dsp.Waveform(ref.samples[:n], ref.sample_rate_hz))
    b = _log_power(dsp.Waveform(est.samples[:n], est.sample_rate_hz))
    return float(np.mean(np.sqrt(np.mean((a - b) ** 2, axis=1))))


def _stoi_window() -> np.ndarray:
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _frame_signal(x: np.ndarray, flen: int, hop: int) -> np.ndarray:
    n = 1 + (len(x) - flen) // hop if len(x) >= flen else 0
    return np.stack([x[i * hop:i * hop + flen] for i in range(n)]) if n else \
        np.zeros((0, flen))


def _remove_silent_frames(x: np.ndarray, y: np.ndarray):
    """Drop frames whose reference energy sits more than 40 dB below the
    loudest frame; survivors are overlap-added back into signals."""
    w = _stoi_window()
    xf = _frame_signal(x, STOI_FRAME, STOI_HOP) * w
    yf = _frame_signal(y, STOI_FRAME, STOI_HOP) * w
    energy_db = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    if energy_db.size == 0 or energy_db.max() < _SILENCE_DB:
        raise ValueError("no active frames")
    mask = energy_db > energy_db.max() - STOI_VAD_RANGE_DB
    xf, yf = xf[mask], yf[mask]
    out_len = (len(xf) - 1) * STOI_HOP + STOI_FRAME
    x_out = np.zeros(out_len)
    y_out = np.zeros(out_len)
    for i in range(len(xf)):
        x_out[i * STOI_HOP:i * STOI_HOP + STOI_FRAME] += xf[i]
        y_out[i * STOI_HOP:i * STOI_HOP + STOI_FRAME] += yf[i]
    return x_out, y_out


def _stoi_spectra(x: np.ndarray) -> np.ndarray:
    frames = _frame_signal(x, STOI_FRAME, STOI_HOP) * _stoi_window()
    return np.fft.rfft(frames, n=STOI_NFFT, axis=1)


def _third_octave_matrix() -> np.ndarray:
    f = np.linspace(0.0, STOI_RATE_HZ / 2.0, STOI_NFFT // 2 + 1)
    cf = STOI_BAND_START_HZ * 2.0 ** (np.arange(STOI_N_BANDS) / 3.0)
    h = np.zeros((STOI_N_BANDS, f.size))
    for j in range(STOI_N_BANDS):
        lo = np.argmin((f - cf[j] * 2.0 ** (-1.0 / 6.0)) ** 2)
        hi = np.argmin((f - cf[j] * 2.0 ** (1.0 / 6.0)) ** 2)
        h[j, lo:hi] = 1.0
    return h


def stoi(ref: dsp.Waveform, est: dsp.Waveform) -> float:
    """Short-time objective intelligibility of est against ref."""
    if ref.sample_rate_hz != est.sample_rate_hz:
        raise ValueError("sample rates differ: %d vs %d"
                         % (ref.sample_rate_hz, est.sample_rate_hz))
    if len(ref.samples) != len(est.samples):
        raise ValueError("length mismatch: %d vs %d samples"
                         % (len(ref.samples), len(est.samples)))
    if ref.duration_s < 0.5:
        raise ValueError("clips must be at least 0.5 s")
    rate = int(ref.sample_rate_hz)
    g = int(np.gcd(STOI_RATE_HZ, rate))
    x = resample_poly(ref.samples, STOI_RATE_HZ // g, rate // g)
    y = resample_poly(est.samples, STOI_RATE_HZ // g, rate // g)

    x, y = _remove_silent_frames(x, y)
    xs = np.abs(_stoi_spectra(x)) ** 2
    ys = np.abs(_stoi_spectra(y)) ** 2
    if len(xs) < STOI_SEG_FRAMES:
        raise ValueError(
            "too short after silence removal: %d frames < %d"
            % (len(xs), STOI_SEG_FRAMES)
        )
    octave = _third_octave_matrix()
    xb = np.sqrt(octave @ xs.T)
    yb = np.sqrt(octave @ ys.T)

    clip_gain = 1.0 + 10.0 ** (-STOI_BETA_DB / 20.0)
    n_seg = xb.shape[1] - STOI_SEG_FRAMES + 1
    total = 0.0
    for m in range(n_seg):
        xseg = xb[:, m:m + STOI_SEG_FRAMES]
        yseg = yb[:, m:m + STOI_SEG_FRAMES]
        alpha = np.linalg.norm(xseg, axis=1) / (np.linalg.norm(yseg, axis=1) + _EPS)
        yclip = np.minimum(yseg * alpha[:, None], xseg * clip_gain)
        xc = xseg - xseg.mean(axis=1, keepdims=True)
        yc = yclip - yclip.mean(axis=1, keepdims=True)
        denom = np.linalg.norm(xc, axis=1) * np.linalg.norm(yc, axis=1) + _EPS
        total += float(np.sum((xc * yc).sum(axis=1) / denom))
    return total / (STOI_N_BANDS * n_seg)


# ---------------------------------------------------------------------------
# corpus evaluation


@dataclass(frozen=True)
class VariantResult:
    variant: str
    clips: tuple  # of {id, lsd, stoi} dicts
    lsd_mean: float
    lsd_std: float
    stoi_mean: float
    stoi_std: float

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "clips": list(self.clips),
            "lsd_mean": self.lsd_mean,
            "lsd_std": self.lsd_std,
            "stoi_mean": self.stoi_mean,
            "stoi_std": self.stoi_std,
        }


@dataclass(frozen=True)
class EvalReport:
    variants: dict  # name -> VariantResult
    n_clips: int

    def to_dict(self) -> dict:
        return {
            "n_clips": self.n_clips,
            "variants": {k: v.to_dict() for k, v in sorted(self.variants.items())},
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        """Table with one row per aggregate metric, one column per variant."""
        names = sorted(self.variants)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric"] + names)
            for metric in ("lsd_mean", "lsd_std", "stoi_mean", "stoi_std"):
                writer.writerow(
                    [metric] + [repr(getattr(self.variants[n], metric)) for n in names]
                )


def synthesize(variant: str, state, rf: dsp.Waveform, rf8k: dsp.Waveform,
                mel: dsp.MelSpectrogram, griffin_lim_iters: int) -> dsp.Waveform:
    if variant == "copy-input-baseline":
        return rf8k
    mag = dsp.invert_mel(mel)
    if variant == "griffinlim":
        return dsp.griffin_lim(mag, iters=griffin_lim_iters)
    if variant == "istft-rf-phase":
        rf_bins = dsp.stft(rf8k).bins
        n = min(len(mag), len(rf_bins))
        bins = mag[:n] * np.exp(1j * np.angle(rf_bins[:n]))
        return dsp.istft(dsp.Spectrogram(bins, dsp.MEL_RATE_HZ))
    raise ValueError("unknown variant %r" % variant)


def evaluate(corpus_dir: str, state, variants=VARIANTS,
             griffin_lim_iters: int = 32, threads: int = 1) -> EvalReport:
    """Score every test-split clip under each synthesis variant."""
    for v in variants:
        if v not in VARIANTS:
            raise ValueError("unknown variant %r" % v)
    manifest = simulate.load_manifest(corpus_dir)
    entries = sorted((e for e in manifest["clips"] if e["split"] == "test"),
                     key=lambda e: e["id"])
    if not entries:
        raise ValueError("empty 'test' split in %s" % corpus_dir)

    def score(entry: dict) -> tuple:
        speech_path, rf_path = simulate.clip_paths(corpus_dir, entry)
        ref = dsp.wav_read(speech_path)
        rf = dsp.wav_read(rf_path)
        rf8k = dsp.resample_cubic_spline(rf, int(dsp.MEL_RATE_HZ))
        mel = None
        if any(v != "copy-input-baseline" for v in variants):
            mel = model.infer_mel(state, rf)
        out = {}
        for v in variants:
            est = synthesize(v, state, rf, rf8k, mel, griffin_lim_iters)
            n = min(len(ref.samples), len(est.samples))
            ref_t = dsp.Waveform(ref.samples[:n], ref.sample_rate_hz)
            est_t = dsp.Waveform(est.samples[:n], est.sample_rate_hz)
            clip_lsd = lsd(ref_t, est_t)
            clip_stoi = stoi(ref_t, est_t)
            if not 0.0 <= clip_stoi <= 1.0:
                log.warning("stoi %.4f outside [0, 1] for clip %s variant %s",
                            clip_stoi, entry["id"], v)
            out[v] = {"id": entry["id"], "lsd": clip_lsd, "stoi": clip_stoi}
        return entry["id"], out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = dict(pool.map(score, entries))
    else:
        scored = dict(map(score, entries))

    results = {}
    for v in variants:
        clips = tuple(scored[e["id"]][v] for e in entries)
        lsds = np.array([c["lsd"] for c in clips])
        stois = np.array([c["stoi"] for c in clips])
        results[v] = VariantResult(
            variant=v,
            clips=clips,
            lsd_mean=float(lsds.mean()),
            lsd_std=float(lsds.std()),
            stoi_mean=float(stois.mean()),
            stoi_std=float(stois.std()),
        )
    return EvalReport(variants=results, n_clips=len(entries))
