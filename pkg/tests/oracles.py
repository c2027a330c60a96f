"""Independent reference implementations used as test oracles.

Everything here is written with explicit Python loops in float64 and shares no
code with the package beyond calling single-sample network forwards.
"""

from __future__ import annotations

import math

import numpy as np

from cdaae.autodiff import no_grad
from cdaae.nets import LatentCode, NetworkSet

EPS = 1e-7


def conv2d_naive(x, k, stride=1, padding=0, bias=None):
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    xp[:, :, padding : padding + h, padding : padding + w] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    s = 0.0
                    for ic in range(c):
                        for p in range(kh):
                            for q in range(kw):
                                s += xp[b, ic, i * stride + p, j * stride + q] * k[oc, ic, p, q]
                    out[b, oc, i, j] = s + (bias[oc] if bias is not None else 0.0)
    return out


def conv_transpose2d_naive(x, k, stride=1, padding=0):
    """Scatter form: every input pixel stamps the kernel into the output."""
    n, ci, h, w = x.shape
    _, co, kk, _ = k.shape
    full = (h - 1) * stride + kk
    out = np.zeros((n, co, full, full))
    for b in range(n):
        for ic in range(ci):
            for i in range(h):
                for j in range(w):
                    for oc in range(co):
                        out[b, oc, i * stride : i * stride + kk, j * stride : j * stride + kk] += x[b, ic, i, j] * k[ic, oc]
    return out[:, :, padding : full - padding, padding : full - padding] if padding else out


def cross_entropy_naive(pred, target):
    total = 0.0
    for row_p, row_t in zip(pred, target):
        s = 0.0
        for p, t in zip(row_p, row_t):
            s -= float(t) * math.log(min(max(float(p), EPS), 1.0))
        total += s
    return total / len(pred)


def _one(nets: NetworkSet, fn):
    with no_grad():
        return fn()


def content_one(nets, img):
    return _one(nets, lambda: nets.encode_content(img[None]).data[0].astype(np.float64))


def style_one(nets, img, domain):
    return _one(nets, lambda: nets.encode_style(img[None], domain).data[0].astype(np.float64))


def disc_one(nets, code, which):
    p = _one(nets, lambda: float(nets.discriminate(np.asarray(code, np.float32)[None], which).data[0]))
    return min(max(p, EPS), 1 - EPS)


def generate_one(nets, content, style, domain):
    code = LatentCode(np.asarray(content, np.float32)[None], np.asarray(style, np.float32)[None], domain)
    return _one(nets, lambda: nets.generate(code).data[0])


def log_clip(p):
    return math.log(min(max(p, EPS), 1.0))


def adv_style_naive(nets, xa, xb, za, zb, w):
    t1 = sum(log_clip(1 - disc_one(nets, style_one(nets, x, "A"), "style-A")) for x in xa) / len(xa)
    t2 = sum(log_clip(1 - disc_one(nets, style_one(nets, x, "B"), "style-B")) for x in xb) / len(xb)
    t3 = sum(log_clip(disc_one(nets, z, "style-A")) for z in za) / len(za)
    t4 = sum(log_clip(disc_one(nets, z, "style-B")) for z in zb) / len(zb)
    return w.alpha1 * t1 + w.alpha2 * t2 + w.alpha3 * t3 + w.alpha4 * t4


def adv_content_naive(nets, xa, xb, zc, w):
    t1 = sum(log_clip(1 - disc_one(nets, content_one(nets, x), "content")) for x in xa) / len(xa)
    t2 = sum(log_clip(1 - disc_one(nets, content_one(nets, x), "content")) for x in xb) / len(xb)
    t3 = sum(log_clip(disc_one(nets, z, "content")) for z in zc) / len(zc)
    return w.beta1 * t1 + w.beta2 * t2 + w.beta3 * t3


def rec_naive(nets, xa, xb, w):
    def term(xs, dom):
        total = 0.0
        for x in xs:
            r = generate_one(nets, content_one(nets, x), style_one(nets, x, dom), dom)
            total += float(((r.astype(np.float64) - x) ** 2).mean())
        return total / len(xs)

    return w.gamma1 * term(xa, "A") + w.gamma2 * term(xb, "B")


def sup_naive(nets, xa, la, xb, lb, w):
    k = nets.prior.num_classes

    def term(xs, ls):
        return sum(-log_clip(content_one(nets, x)[l]) for x, l in zip(xs, ls)) / len(xs)

    return w.lambda1 * term(xa, la) + w.lambda2 * term(xb, lb)


def _transformed_content(nets, x, dst, style):
    c = content_one(nets, x)
    return c, content_one(nets, generate_one(nets, c, style, dst))


def cc_soft_naive(nets, xs, dst, styles):
    total = 0.0
    for x, s in zip(xs, styles):
        c, ct = _transformed_content(nets, x, dst, s)
        total += -sum(ci * log_clip(cti) for ci, cti in zip(c, ct))
    return total / len(xs)


def cc_label_naive(nets, xs, labels, dst, styles):
    total = 0.0
    for x, l, s in zip(xs, labels, styles):
        _, ct = _transformed_content(nets, x, dst, s)
        total += -log_clip(ct[l])
    return total / len(xs)


def adam_naive(params, grads_seq, lr, b1, b2, eps):
    """Plain-float Adam over a list of scalars."""
    m = [0.0] * len(params)
    v = [0.0] * len(params)
    p = list(params)
    for t, grads in enumerate(grads_seq, 1):
        for i, g in enumerate(grads):
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            mh = m[i] / (1 - b1**t)
            vh = v[i] / (1 - b2**t)
            p[i] -= lr * mh / (math.sqrt(vh) + eps)
    return p


def resize_bilinear_naive(img, oh, ow):
    """Half-pixel-center bilinear with edge clamping, one pixel at a time."""
    h, w = img.shape
    out = np.zeros((oh, ow))
    for i in range(oh):
        y = (i + 0.5) * h / oh - 0.5
        y = min(max(y, 0.0), h - 1.0)
        y0 = int(math.floor(y))
        y1 = min(y0 + 1, h - 1)
        fy = y - y0
        for j in range(ow):
            x = (j + 0.5) * w / ow - 0.5
            x = min(max(x, 0.0), w - 1.0)
            x0 = int(math.floor(x))
            x1 = min(x0 + 1, w - 1)
            fx = x - x0
            top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
            bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


def idx_bytes_naive(arr: np.ndarray) -> bytes:
    """Hand-assembled IDX encoding (big-endian header, raw payload)."""
    codes = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09, np.dtype(">i2"): 0x0B, np.dtype(">i4"): 0x0C, np.dtype(">f4"): 0x0D, np.dtype(">f8"): 0x0E}
    head = bytes([0, 0, codes[arr.dtype], arr.ndim])
    for d in arr.shape:
        head += int(d).to_bytes(4, "big")
    return head + arr.tobytes()
