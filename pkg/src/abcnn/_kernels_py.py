"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``ABCNN_PURE_PYTHON=1`` is set. Signatures match the extension exactly.
"""
import numpy as np

BACKEND = "python"


def _pad(x, ph, pw, hp, wp):
    B, H, W, C = x.shape
    xp = np.zeros((B, hp, wp, C), dtype=x.dtype)
    h_keep, w_keep = min(H, hp - ph), min(W, wp - pw)
    xp[:, ph:ph + h_keep, pw:pw + w_keep, :] = x[:, :h_keep, :w_keep, :]
    return xp


def conv2d_forward(x, k, sh, sw, ph, pw, ho, wo):
    """Cross-correlate ``x[B,H,W,Ci]`` with ``k[kh,kw,Ci,Co]``.

    ``ph``/``pw`` are the leading zero pads; the trailing pad is whatever
    is needed to produce ``ho x wo`` outputs.
    """
    kh, kw, _, co = k.shape
    xp = _pad(x, ph, pw, (ho - 1) * sh + kh, (wo - 1) * sw + kw)
    y = np.zeros((x.shape[0], ho, wo, co), dtype=x.dtype)
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, u:u + (ho - 1) * sh + 1:sh, v:v + (wo - 1) * sw + 1:sw, :]
            y += patch @ k[u, v]
    return y


def conv2d_backward(x, k, gy, sh, sw, ph, pw):
    H, W = x.shape[1], x.shape[2]
    kh, kw = k.shape[0], k.shape[1]
    ho, wo = gy.shape[1], gy.shape[2]
    hp, wp = (ho - 1) * sh + kh, (wo - 1) * sw + kw
    xp = _pad(x, ph, pw, hp, wp)
    gxp = np.zeros_like(xp)
    gk = np.zeros_like(k)
    for u in range(kh):
        for v in range(kw):
            rows = slice(u, u + (ho - 1) * sh + 1, sh)
            cols = slice(v, v + (wo - 1) * sw + 1, sw)
            gk[u, v] = np.tensordot(xp[:, rows, cols, :], gy, axes=([0, 1, 2], [0, 1, 2]))
            gxp[:, rows, cols, :] += gy @ k[u, v].T
    gx = np.zeros_like(x)
    h_keep, w_keep = min(H, hp - ph), min(W, wp - pw)
    gx[:, :h_keep, :w_keep, :] = gxp[:, ph:ph + h_keep, pw:pw + w_keep, :]
    return gx, gk


def maxpool_forward(x, kh, kw, sh, sw):
    """Max over ``kh x kw`` windows; returns values and the flat ``H*W``
    index of the first maximal element of each window."""
    B, H, W, C = x.shape
    ho, wo = (H - kh) // sh + 1, (W - kw) // sw + 1
    windows = np.empty((kh * kw, B, ho, wo, C), dtype=x.dtype)
    offsets = np.empty(kh * kw, dtype=np.int64)
    for u in range(kh):
        for v in range(kw):
            windows[u * kw + v] = x[:, u:u + (ho - 1) * sh + 1:sh, v:v + (wo - 1) * sw + 1:sw, :]
            offsets[u * kw + v] = u * W + v
    pick = np.argmax(windows, axis=0)  # first occurrence on ties
    y = np.take_along_axis(windows, pick[None], axis=0)[0]
    base = (np.arange(ho)[:, None] * sh * W + np.arange(wo)[None, :] * sw)[None, :, :, None]
    return y, (base + offsets[pick]).astype(np.int64)


def maxpool_backward(gy, idx, H, W):
    B, ho, wo, C = gy.shape
    gx = np.zeros((B, H * W, C), dtype=gy.dtype)
    b = np.broadcast_to(np.arange(B)[:, None, None, None], idx.shape)
    c = np.broadcast_to(np.arange(C)[None, None, None, :], idx.shape)
    np.add.at(gx, (b.ravel(), idx.ravel(), c.ravel()), gy.ravel())
    return gx.reshape(B, H, W, C)


def decode_212(buf, n):
    """Unpack ``n`` interleaved 12-bit samples from format-212 bytes."""
    raw = np.frombuffer(buf, dtype=np.uint8)
    frames = -(-n // 2)
    padded = np.zeros(frames * 3, dtype=np.uint8)
    used = min(raw.size, frames * 3)
    padded[:used] = raw[:used]
    b = padded.reshape(-1, 3).astype(np.int32)
    out = np.empty(frames * 2, dtype=np.int32)
    out[0::2] = b[:, 0] | ((b[:, 1] & 0x0F) << 8)
    out[1::2] = b[:, 2] | ((b[:, 1] & 0xF0) << 4)
    out[out > 2047] -= 4096
    return out[:n].astype(np.int16)


def encode_212(samples):
    s = np.asarray(samples, dtype=np.int64)
    n = s.size
    frames = -(-n // 2)
    u = np.zeros(frames * 2, dtype=np.int64)
    u[:n] = s & 0xFFF
    s1, s2 = u[0::2], u[1::2]
    out = np.empty((frames, 3), dtype=np.uint8)
    out[:, 0] = s1 & 0xFF
    out[:, 1] = ((s1 >> 8) & 0x0F) | ((s2 >> 4) & 0xF0)
    out[:, 2] = s2 & 0xFF
    return out.tobytes()[:-(-3 * n // 2)]


def adam_update(p, g, m, v, lr, b1, b2, eps, c1, c2):
    """In-place Adam step on flat arrays (same arithmetic as the extension)."""
    m *= b1
    m += (1 - b1) * g
    v *= b2
    v += (1 - b2) * (g * g)
    denom = np.sqrt(v / c2)
    denom += eps
    p -= lr * (m / c1) / denom
