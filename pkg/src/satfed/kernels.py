"""Hot numeric kernels.

Each kernel exists twice: an explicit-loop version compiled with numba and a
vectorised numpy version. The public names at the bottom of the module are
bound to one or the other according to :data:`satfed._accel.USE_NUMBA`.
Both versions are always importable (``*_nb`` / ``*_np``) so tests and the
benchmark can compare them.

Parameter layout (flat float64 vectors):

* softmax regression: ``W`` (n_features x n_classes, row-major), then ``b`` (n_classes)
* one-hidden-layer MLP: ``W1`` (f x h), ``b1`` (h), ``W2`` (h x c), ``b2`` (c)
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------- softmax


def softmax_loss_grad_np(params, X, y, n_classes):
    n, f = X.shape
    c = n_classes
    W = params[: f * c].reshape(f, c)
    b = params[f * c :]
    logits = X @ W + b
    mx = logits.max(axis=1, keepdims=True)
    shifted = logits - mx
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = -logp[np.arange(n), y].mean()
    d = np.exp(logp)
    d[np.arange(n), y] -= 1.0
    d /= n
    grad = np.empty_like(params)
    grad[: f * c] = (X.T @ d).ravel()
    grad[f * c :] = d.sum(axis=0)
    return loss, grad


@njit
def softmax_loss_grad_nb(params, X, y, n_classes):
    n, f = X.shape
    c = n_classes
    boff = f * c
    grad = np.zeros(params.size)
    raw = np.empty(c)
    loss = 0.0
    inv_n = 1.0 / n
    for s in range(n):
        mx = -np.inf
        for k in range(c):
            acc = params[boff + k]
            for d in range(f):
                acc += X[s, d] * params[d * c + k]
            raw[k] = acc
            if acc > mx:
                mx = acc
        z = 0.0
        for k in range(c):
            z += np.exp(raw[k] - mx)
        lse = mx + np.log(z)
        loss += lse - raw[y[s]]
        for k in range(c):
            g = np.exp(raw[k] - lse)
            if k == y[s]:
                g -= 1.0
            g *= inv_n
            grad[boff + k] += g
            for d in range(f):
                grad[d * c + k] += X[s, d] * g
    return loss * inv_n, grad


def softmax_predict(params, X, n_classes):
    f = X.shape[1]
    W = params[: f * n_classes].reshape(f, n_classes)
    return np.argmax(X @ W + params[f * n_classes :], axis=1)


# ---------------------------------------------------------------- mlp


def _mlp_split(params, f, h, c):
    o = 0
    W1 = params[o : o + f * h].reshape(f, h)
    o += f * h
    b1 = params[o : o + h]
    o += h
    W2 = params[o : o + h * c].reshape(h, c)
    o += h * c
    b2 = params[o : o + c]
    return W1, b1, W2, b2


def mlp_loss_grad_np(params, X, y, n_classes, hidden):
    n, f = X.shape
    h, c = hidden, n_classes
    W1, b1, W2, b2 = _mlp_split(params, f, h, c)
    a = np.tanh(X @ W1 + b1)
    logits = a @ W2 + b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), y].mean()
    d2 = np.exp(logp)
    d2[np.arange(n), y] -= 1.0
    d2 /= n
    d1 = (d2 @ W2.T) * (1.0 - a * a)
    return loss, np.concatenate(
        [(X.T @ d1).ravel(), d1.sum(axis=0), (a.T @ d2).ravel(), d2.sum(axis=0)]
    )


@njit
def mlp_loss_grad_nb(params, X, y, n_classes, hidden):
    n, f = X.shape
    h = hidden
    c = n_classes
    ob1 = f * h
    oW2 = ob1 + h
    ob2 = oW2 + h * c
    grad = np.zeros(params.size)
    a = np.empty(h)
    raw = np.empty(c)
    g2 = np.empty(c)
    loss = 0.0
    inv_n = 1.0 / n
    for s in range(n):
        for j in range(h):
            acc = params[ob1 + j]
            for d in range(f):
                acc += X[s, d] * params[d * h + j]
            a[j] = np.tanh(acc)
        mx = -np.inf
        for k in range(c):
            acc = params[ob2 + k]
            for j in range(h):
                acc += a[j] * params[oW2 + j * c + k]
            raw[k] = acc
            if acc > mx:
                mx = acc
        z = 0.0
        for k in range(c):
            z += np.exp(raw[k] - mx)
        lse = mx + np.log(z)
        loss += lse - raw[y[s]]
        for k in range(c):
            g = np.exp(raw[k] - lse)
            if k == y[s]:
                g -= 1.0
            g2[k] = g * inv_n
            grad[ob2 + k] += g2[k]
        for j in range(h):
            back = 0.0
            for k in range(c):
                grad[oW2 + j * c + k] += a[j] * g2[k]
                back += params[oW2 + j * c + k] * g2[k]
            back *= 1.0 - a[j] * a[j]
            grad[ob1 + j] += back
            for d in range(f):
                grad[d * h + j] += X[s, d] * back
    return loss * inv_n, grad


def mlp_predict(params, X, n_classes, hidden):
    f = X.shape[1]
    W1, b1, W2, b2 = _mlp_split(params, f, hidden, n_classes)
    return np.argmax(np.tanh(X @ W1 + b1) @ W2 + b2, axis=1)


# ---------------------------------------------------------------- naive transport replay
#
# Caches are timestamp matrices: dev_ts[i, j] is the version time of device
# i's copy of v_j, sat_ts[h, j] likewise for cache holder h; -inf marks a
# missing model. One session = (time, device, holder). At each session the
# device's own entry is set to its current version, floor(t / V) * V for
# version interval V (V = 0 gives a new version at every contact, V = inf
# keeps the initial one). The satellite never echoes a device's own model back.
# Budgets are counts of models per direction (-1 = unlimited).

MODE_OWN_ONLY = 0
MODE_FLOOD = 1


def _version(t, interval):
    if interval <= 0.0:
        return t
    if interval == np.inf:
        return 0.0
    return np.floor(t / interval) * interval


def naive_replay_np(times, devices, holders, dev_ts, sat_ts, mode, max_up, max_down, version_interval=np.inf):
    """Returns (transfers, necessary); mutates ``dev_ts``/``sat_ts`` in place."""
    transfers = 0
    necessary = 0
    for s in range(times.shape[0]):
        t, i, hh = times[s], devices[s], holders[s]
        dev_ts[i, i] = max(dev_ts[i, i], _version(t, version_interval))
        if mode == MODE_OWN_ONLY:
            up_idx = np.array([i])
        else:
            up_idx = np.flatnonzero(dev_ts[i] > -np.inf)
        if max_up >= 0:
            up_idx = up_idx[:max_up]
        transfers += up_idx.size
        fresher = dev_ts[i, up_idx] > sat_ts[hh, up_idx]
        necessary += int(fresher.sum())
        sat_ts[hh, up_idx] = np.maximum(sat_ts[hh, up_idx], dev_ts[i, up_idx])

        avail = np.flatnonzero(sat_ts[hh] > -np.inf)
        avail = avail[avail != i]
        # newest first, ties by ascending owner id
        down_idx = avail[np.argsort(-sat_ts[hh, avail], kind="stable")]
        if max_down >= 0:
            down_idx = down_idx[:max_down]
        transfers += down_idx.size
        fresher = sat_ts[hh, down_idx] > dev_ts[i, down_idx]
        necessary += int(fresher.sum())
        dev_ts[i, down_idx] = np.maximum(dev_ts[i, down_idx], sat_ts[hh, down_idx])
    return transfers, necessary


@njit
def naive_replay_nb(times, devices, holders, dev_ts, sat_ts, mode, max_up, max_down, version_interval):
    m = dev_ts.shape[1]
    transfers = 0
    necessary = 0
    order = np.empty(m, dtype=np.int64)
    keys = np.empty(m)
    for s in range(times.shape[0]):
        t = times[s]
        i = devices[s]
        hh = holders[s]
        if version_interval <= 0.0:
            ver = t
        elif version_interval == np.inf:
            ver = 0.0
        else:
            ver = np.floor(t / version_interval) * version_interval
        if ver > dev_ts[i, i]:
            dev_ts[i, i] = ver
        sent = 0
        for j in range(m):
            if mode == 0 and j != i:
                continue
            if dev_ts[i, j] == -np.inf:
                continue
            if max_up >= 0 and sent >= max_up:
                break
            sent += 1
            if dev_ts[i, j] > sat_ts[hh, j]:
                necessary += 1
                sat_ts[hh, j] = dev_ts[i, j]
        transfers += sent
        n_av = 0
        for j in range(m):
            if j != i and sat_ts[hh, j] > -np.inf:
                order[n_av] = j
                keys[n_av] = -sat_ts[hh, j]
                n_av += 1
        perm = np.argsort(keys[:n_av], kind="mergesort")
        limit = n_av if max_down < 0 else min(n_av, max_down)
        for q in range(limit):
            j = order[perm[q]]
            if sat_ts[hh, j] > dev_ts[i, j]:
                necessary += 1
                dev_ts[i, j] = sat_ts[hh, j]
        transfers += limit
    return transfers, necessary


if USE_NUMBA:
    softmax_loss_grad = softmax_loss_grad_nb
    mlp_loss_grad = mlp_loss_grad_nb
    naive_replay = naive_replay_nb
else:
    softmax_loss_grad = softmax_loss_grad_np
    mlp_loss_grad = mlp_loss_grad_np
    naive_replay = naive_replay_np
