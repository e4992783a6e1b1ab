"""Independent brute-force oracles, written as plain loops from the
operation definitions.  Deliberately naive: these must not share any code
path with the vectorized library implementations they check.
"""

import numpy as np


def conv2d_oracle(x, k, b=None, stride=1):
    """Quadruple-loop cross-correlation with TF-style 'same' zero padding."""
    n, c, h, w = x.shape
    co, _, kh, kw = k.shape
    oh = -(-h // stride)
    ow = -(-w // stride)
    total_h = max((oh - 1) * stride + kh - h, 0)
    total_w = max((ow - 1) * stride + kw - w, 0)
    pt, pl = total_h // 2, total_w // 2
    out = np.zeros((n, co, oh, ow), dtype=np.float64)
    for ni in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                ii = i * stride + ki - pt
                                jj = j * stride + kj - pl
                                if 0 <= ii < h and 0 <= jj < w:
                                    acc += x[ni, ci, ii, jj] * k[o, ci, ki, kj]
                    out[ni, o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def attention_oracle(tokens, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Loop-based multi-head attention over one [T, D] sequence."""
    t, d = tokens.shape
    dh = d // heads
    q = tokens @ wq + bq
    k = tokens @ wk + bk
    v = tokens @ wv + bv
    ctx = np.zeros((t, d), dtype=np.float64)
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        for i in range(t):
            scores = np.empty(t)
            for j in range(t):
                scores[j] = float(np.dot(q[i, sl], k[j, sl])) / np.sqrt(dh)
            e = np.exp(scores - scores.max())
            w = e / e.sum()
            for j in range(t):
                ctx[i, sl] += w[j] * v[j, sl]
    return ctx @ wo + bo


def ftl_transform_oracle(f, w_tr):
    """Per-time-step frequency mixing: out[n,c,:,t] = w_tr @ f[n,c,:,t]."""
    n, c, nf, nt = f.shape
    out = np.zeros_like(f)
    for ni in range(n):
        for ci in range(c):
            for t in range(nt):
                for i in range(nf):
                    acc = 0.0
                    for j in range(nf):
                        acc += w_tr[i, j] * f[ni, ci, j, t]
                    out[ni, ci, i, t] = acc
    return out


def log_mel_oracle(bins, fb, floor=1e-10):
    """Loop-based log-mel from a complex [frames x nbins] STFT matrix."""
    frames, nbins = bins.shape
    nmels = fb.shape[0]
    out = np.zeros((nmels, frames), dtype=np.float64)
    for m in range(nmels):
        for t in range(frames):
            acc = 0.0
            for f in range(nbins):
                acc += fb[m, f] * (bins[t, f].real ** 2 + bins[t, f].imag ** 2)
            out[m, t] = np.log10(max(acc, floor))
    return out


def lsd_oracle(ref, est, n_fft=512, hop=128, floor=1e-10):
    """Loop-framed LSD with its own Hann window and DFT matrix."""
    n = min(ref.size, est.size)
    ref, est = ref[:n], est[:n]
    idx = np.arange(n_fft)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * idx / n_fft)  # periodic Hann
    dft = np.exp(-2j * np.pi * np.outer(np.arange(n_fft // 2 + 1), idx) / n_fft)

    def frames(x):
        xp = np.concatenate([x[1 : n_fft // 2 + 1][::-1], x, x[-n_fft // 2 - 1 : -1][::-1]])
        n_frames = 1 + x.size // hop
        return [xp[i * hop : i * hop + n_fft] for i in range(n_frames)]

    fr, fe = frames(ref), frames(est)
    total = 0.0
    for a, b in zip(fr, fe):
        pa = np.maximum(np.abs(dft @ (a * win)) ** 2, floor)
        pb = np.maximum(np.abs(dft @ (b * win)) ** 2, floor)
        d = np.log10(pa) - np.log10(pb)
        total += np.sqrt(np.mean(d * d))
    return total / len(fr)


def stoi_oracle(ref, est, rate):
    """Loop-based short-time intelligibility reference.

    Canonical formulation: resample to 10 kHz, drop frames more than 40 dB
    below the loudest reference frame, one-third-octave band energies from a
    256/128 analysis with a 512-point DFT, clipped normalized correlation
    over 30-frame segments.
    """
    from scipy.signal import resample_poly

    g = int(np.gcd(10000, rate))
    x = resample_poly(ref, 10000 // g, rate // g)
    y = resample_poly(est, 10000 // g, rate // g)
    flen, hop, nfft, n_bands, seg = 256, 128, 512, 15, 30
    eps = np.finfo(np.float64).eps
    w = np.hanning(flen + 2)[1:-1]

    n = 1 + (len(x) - flen) // hop
    energies = []
    for i in range(n):
        fr = x[i * hop:i * hop + flen] * w
        energies.append(20.0 * np.log10(np.sqrt(np.sum(fr * fr)) + eps))
    keep = [i for i in range(n) if energies[i] > max(energies) - 40.0]
    x2 = np.zeros((len(keep) - 1) * hop + flen)
    y2 = np.zeros_like(x2)
    for k, i in enumerate(keep):
        x2[k * hop:k * hop + flen] += x[i * hop:i * hop + flen] * w
        y2[k * hop:k * hop + flen] += y[i * hop:i * hop + flen] * w

    dft = np.exp(-2j * np.pi * np.outer(np.arange(nfft // 2 + 1), np.arange(flen)) / nfft)
    m = 1 + (len(x2) - flen) // hop
    xs = np.zeros((m, nfft // 2 + 1))
    ys = np.zeros((m, nfft // 2 + 1))
    for i in range(m):
        xs[i] = np.abs(dft @ (x2[i * hop:i * hop + flen] * w)) ** 2
        ys[i] = np.abs(dft @ (y2[i * hop:i * hop + flen] * w)) ** 2

    f = [10000.0 / 2.0 * b / (nfft // 2) for b in range(nfft // 2 + 1)]
    xb = np.zeros((n_bands, m))
    yb = np.zeros((n_bands, m))
    for j in range(n_bands):
        cf = 150.0 * 2.0 ** (j / 3.0)
        lo = min(range(len(f)), key=lambda b: (f[b] - cf * 2.0 ** (-1 / 6)) ** 2)
        hi = min(range(len(f)), key=lambda b: (f[b] - cf * 2.0 ** (1 / 6)) ** 2)
        for t in range(m):
            xb[j, t] = np.sqrt(sum(xs[t, b] for b in range(lo, hi)))
            yb[j, t] = np.sqrt(sum(ys[t, b] for b in range(lo, hi)))

    clip_gain = 1.0 + 10.0 ** (15.0 / 20.0)
    total = 0.0
    n_seg = m - seg + 1
    for s in range(n_seg):
        for j in range(n_bands):
            xr = xb[j, s:s + seg]
            yr = yb[j, s:s + seg]
            alpha = np.sqrt(np.sum(xr * xr)) / (np.sqrt(np.sum(yr * yr)) + eps)
            yc = np.minimum(yr * alpha, xr * clip_gain)
            xc = xr - np.mean(xr)
            yc = yc - np.mean(yc)
            denom = np.sqrt(np.sum(xc * xc)) * np.sqrt(np.sum(yc * yc)) + eps
            total += np.sum(xc * yc) / denom
    return total / (n_bands * n_seg)
