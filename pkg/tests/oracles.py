"""Brute-force reference implementations, written with plain loops.

Nothing here imports the package, so agreement with these functions is
evidence from an independent route.
"""

import math

import numpy as np


def conv1d(x, w, b=None, stride=1, padding=0):
    n, c_in, length = x.shape
    c_out, _, k = w.shape
    l_out = (length + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, l_out))
    for i in range(n):
        for o in range(c_out):
            for t in range(l_out):
                acc = 0.0 if b is None else float(b[o])
                for c in range(c_in):
                    for j in range(k):
                        pos = t * stride + j - padding
                        if 0 <= pos < length:
                            acc += w[o, c, j] * x[i, c, pos]
                out[i, o, t] = acc
    return out


def bn_stats(x):
    """Per-channel mean and biased variance over the batch and time axes."""
    n, c, length = x.shape
    means, vars_ = np.zeros(c), np.zeros(c)
    for ch in range(c):
        vals = [x[i, ch, t] for i in range(n) for t in range(length)]
        mu = math.fsum(vals) / len(vals)
        means[ch] = mu
        vars_[ch] = math.fsum((v - mu) ** 2 for v in vals) / len(vals)
    return means, vars_


def batch_norm(x, gamma, beta, mean, var, eps=1e-5):
    out = np.empty_like(x)
    for ch in range(x.shape[1]):
        out[:, ch] = gamma[ch] * (x[:, ch] - mean[ch]) / math.sqrt(var[ch] + eps) + beta[ch]
    return out


def masked_mean(z, mask):
    b, c, d = z.shape
    out = np.zeros((b, d))
    for i in range(b):
        rows = [z[i, j] for j in range(c) if mask[i, j]]
        out[i] = sum(rows) / len(rows)
    return out


def slot_mix(A, h):
    b, k, c = A.shape
    out = np.zeros((b, k) + h.shape[2:])
    for i in range(b):
        for s in range(k):
            for j in range(c):
                out[i, s] += A[i, s, j] * h[i, j]
    return out


def cross_entropy(logits, labels, weights=None):
    n = len(labels)
    total = 0.0
    for i in range(n):
        row = [float(v) for v in logits[i]]
        top = max(row)
        lse = top + math.log(math.fsum(math.exp(v - top) for v in row))
        w = 1.0 / n if weights is None else float(weights[i])
        total += w * (lse - row[labels[i]])
    return total


def macro_f1(labels, preds, n_classes):
    """Mean F1 over classes that occur in ``labels``."""
    scores = []
    for c in range(n_classes):
        tp = sum(1 for y, p in zip(labels, preds) if y == c and p == c)
        fp = sum(1 for y, p in zip(labels, preds) if y != c and p == c)
        fn = sum(1 for y, p in zip(labels, preds) if y == c and p != c)
        if tp + fn == 0:
            continue
        scores.append(2 * tp / (2 * tp + fp + fn))
    return sum(scores) / len(scores) if scores else 0.0


def standardize(windows_by_key):
    """``{key: [1-D arrays]}`` -> ``{key: (mean, std)}`` over the concatenated values."""
    out = {}
    for key, rows in windows_by_key.items():
        vals = [float(v) for r in rows for v in r]
        mu = math.fsum(vals) / len(vals)
        out[key] = (mu, math.sqrt(math.fsum((v - mu) ** 2 for v in vals) / len(vals)))
    return out


def fd_grad(f, x, h=1e-6):
    """Central differences of a scalar numpy function ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += h
        down[idx] -= h
        g[idx] = (f(up) - f(down)) / (2 * h)
    return g


def interp_linear(values):
    """Fill NaNs of a 1-D array by linear interpolation between nearest finite neighbours."""
    out = list(values)
    finite = [i for i, v in enumerate(out) if not math.isnan(v)]
    for i, v in enumerate(out):
        if not math.isnan(v):
            continue
        left = max(j for j in finite if j < i)
        right = min(j for j in finite if j > i)
        frac = (i - left) / (right - left)
        out[i] = out[left] + frac * (out[right] - out[left])
    return np.array(out)
