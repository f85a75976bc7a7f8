"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np
import torch


def factor_loop(w, b, f):
    """z[i, c, p] = w[i, c] * f[c, p] + b[i] with explicit loops; f is (d, positions)."""
    k, d = w.shape
    z = np.zeros((k, d, f.shape[1]))
    for i in range(k):
        for c in range(d):
            for p in range(f.shape[1]):
                z[i, c, p] = w[i, c] * f[c, p] + b[i]
    return z


def reconstruct_loop(ws, bs, wu, bu, f):
    """Scalar triple loop of sum_i (ws_i*f + bs_i) * (wu_i*f + bu_i)."""
    k, d = ws.shape
    out = np.zeros(f.shape)
    for c in range(d):
        for p in range(f.shape[1]):
            acc = 0.0
            for i in range(k):
                acc += (ws[i, c] * f[c, p] + bs[i]) * (wu[i, c] * f[c, p] + bu[i])
            out[c, p] = acc
    return out


def pairwise_consistency(z, groups):
    """sum_g 1/(2 n_g) sum_{i,j in g} ||z_i - z_j||^2, the all-pairs form."""
    total = 0.0
    for g in set(groups):
        members = [np.asarray(z[i], dtype=np.float64).ravel() for i in range(len(groups)) if groups[i] == g]
        n = len(members)
        total += sum(((p - q) ** 2).sum() for p in members for q in members) / (2 * n)
    return total


def directional_check(loss_fn, params, eps=1e-5, seed=0):
    """(autodiff, central difference) of loss_fn along a random unit direction in `params`."""
    gen = torch.Generator().manual_seed(seed)
    dirs = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
    norm = float(torch.sqrt(sum((v ** 2).sum() for v in dirs)))
    dirs = [v / norm for v in dirs]
    for p in params:
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    auto = sum(float((g * v).sum()) for g, v in zip(grads, dirs) if g is not None)
    with torch.no_grad():
        for p, v in zip(params, dirs):
            p.add_(eps * v)
        plus = float(loss_fn())
        for p, v in zip(params, dirs):
            p.sub_(2 * eps * v)
        minus = float(loss_fn())
        for p, v in zip(params, dirs):
            p.add_(eps * v)
    return auto, (plus - minus) / (2 * eps)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-12)
