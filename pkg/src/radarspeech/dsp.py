"""Deterministic DSP kernels shared by the simulator, training, and synthesis.

Fixed analysis geometry: 512-point FFT, hop 128, periodic Hann window,
centered frames with reflect padding.  Mel analysis uses 80 triangular
filters on the HTK mel scale (2595*log10(1+f/700)) spanning 60-4000 Hz
at an 8 kHz sample rate, log10 power with a 1e-10 floor.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal.windows import hann

N_FFT = 512
HOP = 128
N_BINS = N_FFT // 2 + 1
N_MELS = 80
FMIN_HZ = 60.0
FMAX_HZ = 4000.0
MEL_RATE_HZ = 8000.0
POWER_FLOOR = 1e-10

WAV_RATES = (5100, 8000)
MEL_MAGIC = b"R2SMEL1"


@dataclass
class Waveform:
    """1-D real sample sequence with its sample rate."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError("waveform must be a non-empty 1-D sequence")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample rate must be positive")
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass
class Spectrogram:
    """Complex one-sided STFT, frames along rows."""

    bins: np.ndarray  # complex [frames, N_BINS]
    sample_rate_hz: float
    n_fft: int = N_FFT
    hop: int = HOP

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.complex128)
        if self.bins.ndim != 2 or self.bins.shape[1] != self.n_fft // 2 + 1:
            raise ValueError(
                "spectrogram must have %d columns, got shape %r"
                % (self.n_fft // 2 + 1, self.bins.shape)
            )
        if self.n_fft != N_FFT or self.hop != HOP:
            raise ValueError("unsupported STFT geometry (fixed 512/128)")

    @property
    def n_frames(self) -> int:
        return self.bins.shape[0]


@dataclass
class MelSpectrogram:
    """80-band log-power Mel matrix, bands along rows."""

    values: np.ndarray  # real [N_MELS, frames]
    normalized: bool = False
    fmin_hz: float = FMIN_HZ
    fmax_hz: float = FMAX_HZ

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != N_MELS:
            raise ValueError(
                "mel matrix must have %d rows, got shape %r" % (N_MELS, self.values.shape)
            )
        if not np.isfinite(self.values).all():
            raise ValueError("mel matrix contains non-finite entries")
        if not self.normalized and self.values.min() < np.log10(POWER_FLOOR) - 1e-9:
            raise ValueError("un-normalized log-mel entries below the power floor")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def resample_cubic_spline(w: Waveform, target_rate_hz: float) -> Waveform:
    """Resample through a natural cubic spline evaluated on the target grid."""
    if len(w) < 4:
        raise ValueError("input too short for cubic spline")
    if not target_rate_hz > 0:
        raise ValueError("target rate must be positive")
    n_out = int(round(len(w) * target_rate_hz / w.sample_rate_hz))
    t_in = np.arange(len(w)) / w.sample_rate_hz
    t_out = np.arange(n_out) / target_rate_hz
    spline = CubicSpline(t_in, w.samples, bc_type="natural")
    return Waveform(spline(t_out), target_rate_hz)


def _window() -> np.ndarray:
    return hann(N_FFT, sym=False)


def stft(w: Waveform) -> Spectrogram:
    """Centered, reflect-padded, Hann-windowed one-sided STFT."""
    x = w.samples
    if x.size < N_FFT:
        raise ValueError("input shorter than one FFT frame (%d samples)" % N_FFT)
    pad = N_FFT // 2
    xp = np.pad(x, pad, mode="reflect")
    n_frames = 1 + x.size // HOP
    starts = np.arange(n_frames) * HOP
    frames = np.stack([xp[s : s + N_FFT] for s in starts])
    bins = np.fft.rfft(frames * _window(), axis=1)
    return Spectrogram(bins, w.sample_rate_hz)


def istft(s: Spectrogram, length: int | None = None) -> Waveform:
    """Weighted overlap-add inverse of stft.

    `length` trims to the original sample count when known; the default
    is hop*(frames-1), the longest length every frame layout supports.
    """
    n_frames = s.n_frames
    if n_frames < 1:
        raise ValueError("empty spectrogram")
    win = _window()
    frames = np.fft.irfft(s.bins, n=N_FFT, axis=1)
    total = (n_frames - 1) * HOP + N_FFT
    acc = np.zeros(total)
    wsum = np.zeros(total)
    for i in range(n_frames):
        st = i * HOP
        acc[st : st + N_FFT] += frames[i] * win
        wsum[st : st + N_FFT] += win * win
    acc = acc / np.where(wsum > 1e-11, wsum, 1.0)
    pad = N_FFT // 2
    out_len = (n_frames - 1) * HOP if length is None else int(length)
    if out_len < 1 or pad + out_len > total:
        raise ValueError("requested length inconsistent with frame count")
    return Waveform(acc[pad : pad + out_len], s.sample_rate_hz)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


_FILTERBANK_CACHE: np.ndarray | None = None


def mel_filterbank() -> np.ndarray:
    """80 x 257 triangular filterbank, peak-1 triangles, HTK mel spacing."""
    global _FILTERBANK_CACHE
    if _FILTERBANK_CACHE is None:
        freqs = np.linspace(0.0, MEL_RATE_HZ / 2.0, N_BINS)
        mel_pts = np.linspace(hz_to_mel(FMIN_HZ), hz_to_mel(FMAX_HZ), N_MELS + 2)
        hz_pts = mel_to_hz(mel_pts)
        fb = np.zeros((N_MELS, N_BINS))
        for k in range(N_MELS):
            lo, ctr, hi = hz_pts[k], hz_pts[k + 1], hz_pts[k + 2]
            lower = (freqs - lo) / (ctr - lo)
            upper = (hi - freqs) / (hi - ctr)
            fb[k] = np.maximum(0.0, np.minimum(lower, upper))
        fb.setflags(write=False)
        _FILTERBANK_CACHE = fb
    return _FILTERBANK_CACHE


def filter_center_frequencies_hz() -> np.ndarray:
    """Center frequency of each of the 80 filters, ascending."""
    mel_pts = np.linspace(hz_to_mel(FMIN_HZ), hz_to_mel(FMAX_HZ), N_MELS + 2)
    return mel_to_hz(mel_pts)[1:-1]


def log_mel(s: Spectrogram) -> MelSpectrogram:
    """log10 of floored Mel-filtered power, bands x frames."""
    if s.bins.shape[1] != N_BINS:
        raise ValueError("spectrogram geometry does not match the filterbank")
    power = np.abs(s.bins) ** 2  # [frames, bins]
    mel_power = mel_filterbank() @ power.T  # [mels, frames]
    return MelSpectrogram(np.log10(np.maximum(mel_power, POWER_FLOOR)), normalized=False)


def invert_mel(m: MelSpectrogram) -> np.ndarray:
    """Approximate linear magnitude [frames x 257] from a log-power Mel matrix.

    Pseudo-inverse of the filterbank applied per frame in the power domain,
    negative leakage clamped to zero.  The half-triangles at the band edges
    cannot be recovered; expect attenuation below the first and above the
    last filter center.
    """
    if m.normalized:
        raise ValueError("denormalize first")
    power = 10.0 ** m.values  # [mels, frames]
    pinv = np.linalg.pinv(mel_filterbank())  # [bins, mels]
    lin_power = np.clip(pinv @ power, 0.0, None)  # [bins, frames]
    return np.sqrt(lin_power).T


def griffin_lim(mag: np.ndarray, iters: int = 32, sample_rate_hz: float = MEL_RATE_HZ) -> Waveform:
    """Iterative phase reconstruction from a magnitude spectrogram.

    Zero-phase start; each iteration resynthesizes, re-analyzes, and
    re-imposes the target magnitude.  The spectral consistency gap is
    non-increasing in the iteration count.
    """
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[1] != N_BINS:
        raise ValueError("magnitude must be [frames x %d]" % N_BINS)
    if (mag < 0).any():
        raise ValueError("negative magnitudes")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    spec = mag.astype(np.complex128)  # zero phase
    rate = sample_rate_hz
    for _ in range(iters):
        wav = istft(Spectrogram(spec, rate))
        if not np.any(wav.samples):
            return wav
        re = stft(wav).bins
        phase = re / np.maximum(np.abs(re), 1e-16)
        spec = mag * phase
    return istft(Spectrogram(spec, rate))


def consistency_gap(mag: np.ndarray, spec: np.ndarray) -> float:
    """Frobenius distance between a target magnitude and a re-analysis magnitude."""
    return float(np.linalg.norm(np.abs(spec) - mag))


def wav_read(path) -> Waveform:
    """Read 16-bit PCM mono WAV at an accepted sample rate."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError("%s: only mono WAV supported" % path)
        if f.getsampwidth() != 2:
            raise ValueError("%s: only 16-bit PCM supported" % path)
        rate = f.getframerate()
        if rate not in WAV_RATES:
            raise ValueError("%s: sample rate %d not in %r" % (path, rate, WAV_RATES))
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, float(rate))


def wav_write(path, w: Waveform) -> None:
    """Write 16-bit PCM mono WAV; clips to [-1, 1)."""
    rate = int(round(w.sample_rate_hz))
    if rate not in WAV_RATES:
        raise ValueError("sample rate %d not in %r" % (rate, WAV_RATES))
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(rate)
        f.writeframes(pcm.tobytes())


def mel_dump_write(path, values: np.ndarray) -> None:
    """Write a real matrix in the binary dump format (magic, u32 dims, f32 data)."""
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise ValueError("dump expects a 2-D matrix")
    with open(path, "wb") as f:
        f.write(MEL_MAGIC)
        f.write(struct.pack("<II", values.shape[0], values.shape[1]))
        f.write(values.astype("<f4").tobytes(order="C"))


def mel_dump_read(path) -> np.ndarray:
    """Read a matrix written by mel_dump_write; errors carry the byte offset."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MEL_MAGIC)] != MEL_MAGIC:
        raise ValueError("malformed dump at byte 0: bad magic")
    hdr_end = len(MEL_MAGIC) + 8
    if len(blob) < hdr_end:
        raise ValueError("malformed dump at byte %d: truncated header" % len(blob))
    rows, cols = struct.unpack_from("<II", blob, len(MEL_MAGIC))
    need = hdr_end + rows * cols * 4
    if len(blob) != need:
        raise ValueError(
            "malformed dump at byte %d: expected %d data bytes" % (len(blob), need - hdr_end)
        )
    data = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=hdr_end)
    return data.reshape(rows, cols).astype(np.float64)
