"""Straight-line reference implementations used only by the tests.

Each oracle is written from the defining formula with explicit loops and
shares no code with the package.
"""

import math

import numpy as np


def conv_circular(a, taps, center):
    """out[i, j] = sum_k taps[k] * a[(i - (k - center)) mod M, j]."""
    m, n = a.shape
    out = np.zeros((m, n))
    for j in range(n):
        for i in range(m):
            s = 0.0
            for k, t in enumerate(taps):
                s += t * a[(i - (k - center)) % m, j]
            out[i, j] = s
    return out


def corr_circular(a, taps, center):
    """Adjoint of :func:`conv_circular`."""
    m, n = a.shape
    out = np.zeros((m, n))
    for j in range(n):
        for i in range(m):
            s = 0.0
            for k, t in enumerate(taps):
                s += t * a[(i + (k - center)) % m, j]
            out[i, j] = s
    return out


def bilateral(a, sigma_s, sigma_r, radius, lateral_wrap=False):
    m, n = a.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            num = den = 0.0
            for di in range(-radius, radius + 1):
                for dj in range(-radius, radius + 1):
                    ii = min(max(i + di, 0), m - 1)
                    jj = (j + dj) % n if lateral_wrap else min(max(j + dj, 0), n - 1)
                    v = a[ii, jj]
                    w = math.exp(-(di * di + dj * dj) / (2 * sigma_s ** 2))
                    if not math.isinf(sigma_r):
                        w *= math.exp(-((v - a[i, j]) ** 2) / (2 * sigma_r ** 2))
                    num += w * v
                    den += w
            out[i, j] = num / den
    return out


def ssim(a, b, win=11, sigma=1.5, k1=0.01, k2=0.03, L=1.0):
    half = win // 2
    w = np.zeros((win, win))
    for u in range(win):
        for v in range(win):
            w[u, v] = math.exp(-((u - half) ** 2 + (v - half) ** 2) / (2 * sigma ** 2))
    w /= w.sum()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for i in range(a.shape[0] - win + 1):
        for j in range(a.shape[1] - win + 1):
            pa = a[i:i + win, j:j + win]
            pb = b[i:i + win, j:j + win]
            ma = (w * pa).sum()
            mb = (w * pb).sum()
            va = (w * (pa - ma) ** 2).sum()
            vb = (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2)
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def rl_step(y, x, taps, center, eps=1e-12):
    hx = conv_circular(x, taps, center)
    ratio = y / np.maximum(hx, eps)
    return x * corr_circular(ratio, taps, center)


def rl_scalar(y, taps, center, iters):
    """1-D Richardson-Lucy with scalar loops, started from the observation."""
    m = len(y)
    x = list(y)
    for _ in range(iters):
        hx = [sum(taps[k] * x[(i - (k - center)) % m] for k in range(len(taps)))
              for i in range(m)]
        r = [y[i] / max(hx[i], 1e-12) for i in range(m)]
        c = [sum(taps[k] * r[(i + (k - center)) % m] for k in range(len(taps)))
             for i in range(m)]
        x = [x[i] * c[i] for i in range(m)]
    return np.array(x)


def softplus(z):
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0)


def conv3x3_circular(x, w, b):
    """x (Cin, H, W), w (Cout, Cin, 3, 3) cross-correlation with wrap padding."""
    cin, h, wd = x.shape
    cout = w.shape[0]
    out = np.zeros((cout, h, wd))
    for o in range(cout):
        for i in range(h):
            for j in range(wd):
                s = b[o]
                for c in range(cin):
                    for u in range(3):
                        for v in range(3):
                            s += w[o, c, u, v] * x[c, (i + u - 1) % h, (j + v - 1) % wd]
                out[o, i, j] = s
    return out


def shift(a, dz, dx):
    m, n = a.shape
    out = np.empty_like(a)
    for i in range(m):
        for j in range(n):
            out[(i + dz) % m, (j + dx) % n] = a[i, j]
    return out


def mc(images, outputs, taps, center, masks):
    tot, cnt = 0.0, 0
    for x, y, m in zip(images, outputs, masks):
        r = (x - conv_circular(y, taps, center)) * m
        tot += float((r * r).sum())
        cnt += r.size
    return tot / cnt


def fs(outputs, masks):
    tot, cnt = 0.0, 0
    for y, m in zip(outputs, masks):
        r = y * (1 - m)
        tot += float((r * r).sum())
        cnt += r.size
    return tot / cnt


def ei(outputs, phi, taps, center, shifts):
    """mean over shifts and pixels of (T y - phi(H T y))**2; ``phi`` maps one frame."""
    tot, cnt = 0.0, 0
    for dz, dx in shifts:
        for y in outputs:
            ty = shift(y, dz, dx)
            r = ty - phi(conv_circular(ty, taps, center))
            tot += float((r * r).sum())
            cnt += r.size
    return tot / cnt


def _lrelu(x, alpha):
    return np.where(x > 0, x, alpha * x)


def unet(params, depth, x, alpha=0.1, head="softplus", floor=1e-12):
    """Forward pass of the residual U-Net for one (H, W) frame, from its definition."""
    def block(name, t):
        a = _lrelu(conv3x3_circular(t, params[f"{name}.conv1.weight"],
                                    params[f"{name}.conv1.bias"]), alpha)
        return _lrelu(a + conv3x3_circular(a, params[f"{name}.conv2.weight"],
                                           params[f"{name}.conv2.bias"]), alpha)

    def pool(t):
        c, h, w = t.shape
        out = np.zeros((c, h // 2, w // 2))
        for i in range(h // 2):
            for j in range(w // 2):
                out[:, i, j] = (t[:, 2 * i, 2 * j] + t[:, 2 * i + 1, 2 * j]
                                + t[:, 2 * i, 2 * j + 1] + t[:, 2 * i + 1, 2 * j + 1]) / 4
        return out

    def up(t):
        c, h, w = t.shape
        out = np.zeros((c, 2 * h, 2 * w))
        for i in range(2 * h):
            for j in range(2 * w):
                out[:, i, j] = t[:, i // 2, j // 2]
        return out

    t = x[None].astype(np.float64)
    skips = []
    for lvl in range(depth):
        t = block(f"enc{lvl}", t)
        skips.append(t)
        t = pool(t)
    t = block("mid", t)
    for lvl in reversed(range(depth)):
        t = np.concatenate([up(t), skips[lvl]], axis=0)
        t = block(f"dec{lvl}", t)
    delta = conv3x3_circular(t, params["head.weight"], params["head.bias"])
    xc = np.maximum(x, floor)
    logit = xc + np.log(-np.expm1(-xc))
    if head == "softplus":
        return softplus(logit + delta[0])
    if head == "relu":
        return np.maximum(x + delta[0], 0)
    if head == "softplus_relu":
        return np.maximum(softplus(logit + delta[0]) + delta[1], 0)
    return softplus(delta[0])
