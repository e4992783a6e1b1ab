"""Neural-net building blocks on top of the autograd Tensor.

conv2d uses TF-style 'same' padding: output extent = ceil(input/stride),
asymmetric zero padding when the total is odd.  Attention operates on a
single [tokens x dim] sequence (the training batch is one crop).
"""

from __future__ import annotations

import math
import struct

import numpy as np

from .tensor import Tensor

CKPT_MAGIC = b"R2SCKPT1"


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = x @ w
    if b is not None:
        out = out + b
    return out


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    return (a - b).abs().mean()


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / ((var + eps) ** 0.5) * gamma + beta


def _same_pad(extent: int, stride: int, k: int = 3) -> tuple:
    out = -(-extent // stride)  # ceil
    total = max((out - 1) * stride + k - extent, 0)
    return total // 2, total - total // 2, out


def conv2d(x: Tensor, k: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """3x3 cross-correlation, zero 'same' padding, stride 1 or 2."""
    if x.ndim != 4 or k.ndim != 4:
        raise ValueError("conv2d expects x[N,C,H,W] and k[Co,C,kh,kw]")
    n, c, h, w = x.shape
    co, ck, kh, kw = k.shape
    if ck != c:
        raise ValueError("kernel channels %d do not match input channels %d" % (ck, c))
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    pt, pb, oh = _same_pad(h, stride, kh)
    pl, pr, ow = _same_pad(w, stride, kw)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))

    # im2col: gather the kh*kw strided views, [N, C, kh, kw, OH, OW]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=x.data.dtype)
    for ki in range(kh):
        for kj in range(kw):
            cols[:, :, ki, kj] = xp[
                :, :, ki : ki + (oh - 1) * stride + 1 : stride,
                kj : kj + (ow - 1) * stride + 1 : stride,
            ]
    cols2 = cols.reshape(n, c * kh * kw, oh * ow)
    w2 = k.data.reshape(co, c * kh * kw)
    out = (w2 @ cols2).reshape(n, co, oh, ow)
    if b is not None:
        out = out + b.data.reshape(1, co, 1, 1)

    def bwd(g, acc):
        g2 = g.reshape(n, co, oh * ow)
        if k.requires_grad:
            gw = np.tensordot(g2, cols2, axes=([0, 2], [0, 2]))
            acc(k, gw.reshape(k.shape))
        if b is not None and b.requires_grad:
            acc(b, g.sum(axis=(0, 2, 3)).reshape(b.shape))
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(n, c, kh, kw, oh, ow)
            gxp = np.zeros_like(xp)
            for ki in range(kh):
                for kj in range(kw):
                    gxp[
                        :, :, ki : ki + (oh - 1) * stride + 1 : stride,
                        kj : kj + (ow - 1) * stride + 1 : stride,
                    ] += gcols[:, :, ki, kj]
            acc(x, gxp[:, :, pt : pt + h, pl : pl + w])

    parents = (x, k) if b is None else (x, k, b)
    return Tensor._from_op(out, parents, bwd, "conv2d")


def pixel_shuffle(x: Tensor, r: int = 2) -> Tensor:
    """Depth to space: [N, C*r^2, H, W] -> [N, C, H*r, W*r]."""
    n, cr2, h, w = x.shape
    if cr2 % (r * r) != 0:
        raise ValueError("channel count %d not divisible by r^2=%d" % (cr2, r * r))
    c = cr2 // (r * r)
    y = x.reshape(n, c, r, r, h, w)
    y = y.transpose(0, 1, 4, 2, 5, 3)  # [N, C, H, r, W, r]
    return y.reshape(n, c, h * r, w * r)


def pixel_unshuffle(x: Tensor, r: int = 2) -> Tensor:
    """Space to depth, the exact inverse of pixel_shuffle."""
    n, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ValueError("spatial extents not divisible by r")
    h, w = hr // r, wr // r
    y = x.reshape(n, c, h, r, w, r)
    y = y.transpose(0, 1, 3, 5, 2, 4)  # [N, C, r, r, H, W]
    return y.reshape(n, c * r * r, h, w)


def multihead_attention(tokens: Tensor, wq, bq, wk, bk, wv, bv, wo, bo, heads: int) -> Tensor:
    """Scaled dot-product attention over one [T, D] sequence."""
    t, d = tokens.shape
    if d % heads != 0:
        raise ValueError("model dim %d not divisible by %d heads" % (d, heads))
    dh = d // heads

    def split(z):  # [T, D] -> [H, T, Dh]
        return z.reshape(t, heads, dh).transpose(1, 0, 2)

    q = split(linear(tokens, wq, bq))
    key = split(linear(tokens, wk, bk))
    v = split(linear(tokens, wv, bv))
    scores = (q @ key.transpose(0, 2, 1)) * (1.0 / math.sqrt(dh))
    attn = scores.softmax(axis=-1)
    ctx = (attn @ v).transpose(1, 0, 2).reshape(t, d)
    return linear(ctx, wo, bo)


class ModelParams:
    """Named trainable tensors; iteration is sorted by path."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, path: str, value: np.ndarray) -> Tensor:
        if path in self._params:
            raise ValueError("parameter %r registered twice" % path)
        t = Tensor(np.asarray(value, dtype=np.float32), requires_grad=True)
        self._params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path):
        return path in self._params

    def __len__(self):
        return len(self._params)

    def items(self):
        return sorted(self._params.items())

    def paths(self):
        return [p for p, _ in self.items()]

    def total_count(self) -> int:
        return sum(t.size for _, t in self.items())

    def zero_grads(self):
        for _, t in self.items():
            t.grad = None

    @property
    def dtype(self):
        """Dtype shared by the registered tensors."""
        for _, t in self.items():
            return t.data.dtype
        return np.dtype(np.float32)

    def astype(self, dtype) -> "ModelParams":
        """Copy with converted dtype (float64 for gradient checking)."""
        out = ModelParams()
        for path, t in self.items():
            c = Tensor(t.data.astype(dtype), requires_grad=True)
            out._params[path] = c
        return out

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(CKPT_MAGIC)
            f.write(struct.pack("<I", len(self._params)))
            for name, t in self.items():
                enc = name.encode()
                f.write(struct.pack("<I", len(enc)))
                f.write(enc)
                f.write(struct.pack("<I", t.ndim))
                f.write(struct.pack("<%dI" % t.ndim, *t.shape))
                f.write(t.data.astype("<f4").tobytes(order="C"))

    def load(self, path) -> None:
        """Fill existing parameters from a checkpoint; shapes must match."""
        loaded = load_checkpoint(path)
        missing = set(self._params) - set(loaded)
        extra = set(loaded) - set(self._params)
        if missing or extra:
            raise ValueError(
                "checkpoint mismatch: missing %r, unexpected %r" % (sorted(missing), sorted(extra))
            )
        for name, arr in loaded.items():
            t = self._params[name]
            if arr.shape != t.shape:
                raise ValueError("shape mismatch for %r: %r vs %r" % (name, arr.shape, t.shape))
            t.data = arr.astype(np.float32)
            t.grad = None


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    off = len(CKPT_MAGIC)
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + nlen].decode()
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from("<%dI" % rank, blob, off)
        off += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        out[name] = arr.copy()
    if off != len(blob):
        raise ValueError("trailing bytes in checkpoint at offset %d" % off)
    return out


def sgd_step(params: ModelParams, lr: float) -> None:
    """p <- p - lr * grad for every parameter, then zero the grads."""
    for path, t in params.items():
        if t.grad is None:
            raise ValueError("missing grad for %r" % path)
    for _, t in params.items():
        t.data = t.data - np.asarray(t.grad, dtype=t.data.dtype) * t.data.dtype.type(lr)
        t.grad = None


# -- weight init ----------------------------------------------------------------

def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def xavier_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)
