"""Compiled inner loop for one round of local SGD across all participants.

Mirrors :func:`objectives.stacked_gradients` followed by the update and the
optional ball projection; the tests hold the two paths together.
"""

import math

import numba
import numpy as np

KIND_CODES = {"least-squares": 0, "logistic": 1, "softmax": 2}


@numba.njit(cache=True)
def _sample_grad(kind, x, a, y, num_classes, out):
    # accumulates the data-term gradient of one sample into ``out``
    f = a.shape[0]
    if kind == 0:
        r = -y
        for j in range(f):
            r += a[j] * x[j]
        for j in range(f):
            out[j] += a[j] * r
    elif kind == 1:
        z = 0.0
        for j in range(f):
            z += a[j] * x[j]
        z *= y
        # -y * sigmoid(-z), computed stably
        if z >= 0:
            e = math.exp(-z)
            s = -y * e / (1.0 + e)
        else:
            s = -y / (1.0 + math.exp(z))
        for j in range(f):
            out[j] += a[j] * s
    else:
        K = num_classes
        logits = np.zeros(K)
        for k in range(K):
            acc = 0.0
            for j in range(f):
                acc += a[j] * x[j * K + k]
            logits[k] = acc
        top = logits.max()
        total = 0.0
        for k in range(K):
            logits[k] = math.exp(logits[k] - top)
            total += logits[k]
        label = int(y)
        for k in range(K):
            p = logits[k] / total
            if k == label:
                p -= 1.0
            for j in range(f):
                out[j * K + k] += a[j] * p


@numba.njit(cache=True)
def sgd_round(kind, X, A, Y, scales, rate, lam, radius, num_classes, track):
    """Run ``A.shape[1]`` local steps for every row of ``X`` in place.

    ``A[i, s]`` and ``Y[i, s]`` hold row ``i``'s minibatch for step ``s``.
    Returns the largest squared norm of any applied (scaled) gradient when
    ``track`` is set, else 0.
    """
    n, steps, batch = A.shape[0], A.shape[1], A.shape[2]
    idx = np.empty((n, steps, batch), dtype=np.int64)
    rows = np.empty(n * steps * batch, dtype=np.int64)
    feats = A.reshape(n * steps * batch, A.shape[3])
    targs = Y.reshape(n * steps * batch)
    for q in range(n * steps * batch):
        rows[q] = q
    idx[:] = rows.reshape(n, steps, batch)
    return sgd_round_indexed(kind, X, feats, targs, idx, scales, rate, lam, radius, num_classes, track)


@numba.njit(cache=True)
def batch_rows(uniforms, members, offsets, counts):
    """Absolute row indices of each participant's minibatches.

    Participant ``j`` is client ``members[j]``; its draws are
    ``floor(u * n_i)`` over its own uniforms, shifted to its rows.
    """
    n = members.shape[0]
    steps, batch = uniforms.shape[1], uniforms.shape[2]
    idx = np.empty((n, steps, batch), dtype=np.int64)
    for j in range(n):
        i = members[j]
        c = counts[i]
        for s in range(steps):
            for b in range(batch):
                k = int(uniforms[i, s, b] * c)
                if k > c - 1:
                    k = c - 1
                idx[j, s, b] = offsets[i] + k
    return idx


@numba.njit(cache=True)
def sgd_round_indexed(kind, X, feats, targs, idx, scales, rate, lam, radius, num_classes, track):
    """As :func:`sgd_round`, with minibatches given as rows ``idx[i, s]`` of ``feats``/``targs``."""
    n, steps, batch = idx.shape[0], idx.shape[1], idx.shape[2]
    d = X.shape[1]
    g = np.zeros(d)
    g2max = 0.0
    for i in range(n):
        x = X[i]
        for s in range(steps):
            g[:] = 0.0
            for b in range(batch):
                q = idx[i, s, b]
                _sample_grad(kind, x, feats[q], targs[q], num_classes, g)
            nrm = 0.0
            for j in range(d):
                g[j] = scales[i] * (g[j] / batch + lam * x[j])
                nrm += g[j] * g[j]
            if track and nrm > g2max:
                g2max = nrm
            for j in range(d):
                x[j] -= rate * g[j]
            if radius > 0:
                xn = 0.0
                for j in range(d):
                    xn += x[j] * x[j]
                xn = math.sqrt(xn)
                if xn > radius:
                    for j in range(d):
                        x[j] *= radius / xn
    return g2max


@numba.njit(cache=True)
def _sample_loss(kind, x, a, y, num_classes):
    f = a.shape[0]
    if kind == 0:
        r = -y
        for j in range(f):
            r += a[j] * x[j]
        return 0.5 * r * r
    if kind == 1:
        z = 0.0
        for j in range(f):
            z += a[j] * x[j]
        z *= -y
        # log(1 + exp(z)), computed stably
        if z > 0:
            return z + math.log1p(math.exp(-z))
        return math.log1p(math.exp(z))
    K = num_classes
    logits = np.zeros(K)
    for k in range(K):
        acc = 0.0
        for j in range(f):
            acc += a[j] * x[j * K + k]
        logits[k] = acc
    top = logits.max()
    total = 0.0
    for k in range(K):
        total += math.exp(logits[k] - top)
    return top + math.log(total) - logits[int(y)]


@numba.njit(cache=True)
def client_losses(kind, models, feats, targs, offsets, counts, members, scales, lam, num_classes):
    """Scaled full-local-data loss of every model for every participant, ``(n_models, n)``."""
    out = np.empty((models.shape[0], members.shape[0]))
    f = feats.shape[1]
    for r in range(models.shape[0]):
        x = models[r]
        reg = 0.0
        for j in range(x.shape[0]):
            reg += x[j] * x[j]
        reg *= 0.5 * lam
        for j in range(members.shape[0]):
            i = members[j]
            acc = 0.0
            for q in range(offsets[i], offsets[i] + counts[i]):
                if kind == 2:
                    acc += _sample_loss(kind, x, feats[q], targs[q], num_classes)
                    continue
                z = 0.0
                for p in range(f):
                    z += feats[q, p] * x[p]
                if kind == 0:
                    z -= targs[q]
                    acc += 0.5 * z * z
                else:
                    z *= -targs[q]
                    if z > 0:
                        acc += z + math.log1p(math.exp(-z))
                    else:
                        acc += math.log1p(math.exp(z))
            out[r, j] = scales[i] * (acc / counts[i] + reg)
    return out
