"""Compiled loss/gradient kernel for the single-index ReLU network.

The network is ``f(s) = b_out + sum_j v_j * relu(a_j * s + c_j)`` applied to a
scalar index ``s``.  Each hidden unit switches on or off at its kink
``-c_j / a_j``, so once the kinks are sorted the output is affine between
consecutive kinks and every per-sample and per-unit sum becomes a prefix or
suffix sum.  One loss/gradient evaluation costs O(n d + H log H) instead of
the O(n H) of a dense implementation.
"""

import numpy as np
from numba import njit

MSE = 0
BCE = 1


@njit(cache=True)
def _counts(kinks, s):
    """For each index value, the number of kinks strictly below it.

    A uniform bucket table over the kink range gives an O(1) starting guess
    which is then corrected by linear probing, so the result is exact
    whatever the kink spacing.
    """
    m = kinks.size
    n = s.size
    out = np.empty(n, dtype=np.int64)
    if m == 0:
        out[:] = 0
        return out
    lo = kinks[0]
    hi = kinks[m - 1]
    nb = 4 * m
    if hi > lo:
        scale = nb / (hi - lo)
    else:
        scale = 0.0
    tab = np.empty(nb + 1, dtype=np.int64)
    c = 0
    for b in range(nb + 1):
        edge = lo + b / scale if scale > 0.0 else lo
        while c < m and kinks[c] < edge:
            c += 1
        tab[b] = c
    for i in range(n):
        x = s[i]
        if not x > lo:  # also catches NaN
            out[i] = 0
            continue
        if x > hi:
            out[i] = m
            continue
        b = int((x - lo) * scale)
        if b > nb:
            b = nb
        c = tab[b]
        while c > 0 and kinks[c - 1] >= x:
            c -= 1
        while c < m and kinks[c] < x:
            c += 1
        out[i] = c
    return out


@njit(cache=True)
def _softplus(x):
    if x > 0.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def index_values(X, tcol, theta, alpha, use_alpha):
    n, d = X.shape
    s = np.empty(n)
    for i in range(n):
        acc = 0.0
        for k in range(d):
            acc += X[i, k] * theta[k]
        if use_alpha:
            acc += alpha * tcol[i]
        s[i] = acc
    return s


@njit(cache=True)
def _unit_tables(hw, hb, ow):
    """Sort the units with nonzero slope by kink.

    Returns ``(order, kinks, slope_tab, offset_tab)`` where, for a sample with
    ``c`` kinks strictly below its index, the network output is
    ``b_out + slope_tab[c] * s + offset_tab[c]``.
    """
    H = hw.size
    m = 0
    for j in range(H):
        if hw[j] != 0.0:
            m += 1
    units = np.empty(m, dtype=np.int64)
    kinks = np.empty(m)
    const_c = 0.0
    q = 0
    for j in range(H):
        if hw[j] != 0.0:
            units[q] = j
            kinks[q] = -hb[j] / hw[j]
            q += 1
        elif hb[j] > 0.0:
            const_c += ow[j] * hb[j]
    order = np.argsort(kinks, kind="mergesort")
    units = units[order]
    kinks = kinks[order]

    # units with positive slope are active above their kink, negative below
    slope_tab = np.zeros(m + 1)
    offset_tab = np.zeros(m + 1)
    neg_a = 0.0
    neg_c = 0.0
    for q in range(m):
        j = units[q]
        if hw[j] < 0.0:
            neg_a += ow[j] * hw[j]
            neg_c += ow[j] * hb[j]
    slope_tab[0] = neg_a
    offset_tab[0] = neg_c + const_c
    for q in range(m):
        j = units[q]
        # crossing kink q: positive unit switches on, negative unit switches off
        slope_tab[q + 1] = slope_tab[q] + ow[j] * hw[j] * (1.0 if hw[j] > 0.0 else -1.0)
        offset_tab[q + 1] = offset_tab[q] + ow[j] * hb[j] * (1.0 if hw[j] > 0.0 else -1.0)
    return units, kinks, slope_tab, offset_tab


@njit(cache=True)
def forward_index(s, hw, hb, ow, ob):
    """Network output (pre-activation) at each index value."""
    units, kinks, slope_tab, offset_tab = _unit_tables(hw, hb, ow)
    counts = _counts(kinks, s)
    n = s.size
    out = np.empty(n)
    for i in range(n):
        c = counts[i]
        out[i] = ob + slope_tab[c] * s[i] + offset_tab[c]
    return out


@njit(cache=True)
def loss_grad(X, tcol, y, theta, alpha, use_alpha, hw, hb, ow, ob, loss_kind,
              g_theta, g_hw, g_hb, g_ow):
    """Loss value and full gradient; gradients are written into the g_* buffers.

    Returns ``(loss, g_alpha, g_ob)``.
    """
    n, d = X.shape
    H = hw.size
    s = index_values(X, tcol, theta, alpha, use_alpha)
    units, kinks, slope_tab, offset_tab = _unit_tables(hw, hb, ow)
    counts = _counts(kinks, s)
    m = units.size

    h0 = np.zeros(m + 1)
    h1 = np.zeros(m + 1)
    for k in range(d):
        g_theta[k] = 0.0
    g_alpha = 0.0
    tot0 = 0.0
    tot1 = 0.0
    loss = 0.0
    for i in range(n):
        si = s[i]
        c = counts[i]
        sl = slope_tab[c]
        f = ob + sl * si + offset_tab[c]
        if loss_kind == MSE:
            e = f - y[i]
            loss += e * e
            ri = 2.0 * e / n
        else:
            loss += _softplus(f) - y[i] * f
            ri = (_sigmoid(f) - y[i]) / n
        h0[c] += ri
        h1[c] += ri * si
        tot0 += ri
        tot1 += ri * si
        ds = ri * sl
        for k in range(d):
            g_theta[k] += ds * X[i, k]
        if use_alpha:
            g_alpha += ds * tcol[i]
    loss /= n

    # a unit at sorted position q is active for samples with c > q (positive
    # slope) or c <= q (negative slope)
    below0 = 0.0
    below1 = 0.0
    for q in range(m):
        below0 += h0[q]
        below1 += h1[q]
        j = units[q]
        if hw[j] > 0.0:
            a0 = tot0 - below0
            a1 = tot1 - below1
        else:
            a0 = below0
            a1 = below1
        g_ow[j] = hw[j] * a1 + hb[j] * a0
        g_hw[j] = ow[j] * a1
        g_hb[j] = ow[j] * a0
    for j in range(H):
        if hw[j] == 0.0:
            if hb[j] > 0.0:
                g_ow[j] = hb[j] * tot0
                g_hw[j] = ow[j] * tot1
                g_hb[j] = ow[j] * tot0
            else:
                g_ow[j] = 0.0
                g_hw[j] = 0.0
                g_hb[j] = 0.0
    return loss, g_alpha, tot0


@njit(cache=True)
def train_adam(X, tcol, y, theta, alpha, use_alpha, hw, hb, ow, ob, loss_kind,
               lr, iterations, beta1, beta2, eps):
    """Full-batch ADAM.  Parameter arrays are updated in place.

    Returns ``(loss_history, alpha, ob)``; ``loss_history[k]`` is the training
    loss before update ``k`` and the last entry is the loss after the final
    update.
    """
    d = theta.size
    H = hw.size
    p = d + 3 * H + 2
    m = np.zeros(p)
    v = np.zeros(p)
    g = np.empty(p)
    params = np.empty(p)
    params[:d] = theta
    params[d] = alpha
    params[d + 1:d + 1 + H] = hw
    params[d + 1 + H:d + 1 + 2 * H] = hb
    params[d + 1 + 2 * H:d + 1 + 3 * H] = ow
    params[p - 1] = ob
    g_theta = np.empty(d)
    g_hw = np.empty(H)
    g_hb = np.empty(H)
    g_ow = np.empty(H)
    history = np.empty(iterations + 1)
    b1t = 1.0
    b2t = 1.0
    for it in range(iterations + 1):
        loss, g_alpha, g_ob = loss_grad(X, tcol, y, theta, alpha, use_alpha,
                                        hw, hb, ow, ob, loss_kind,
                                        g_theta, g_hw, g_hb, g_ow)
        history[it] = loss
        if it == iterations:
            break
        g[:d] = g_theta
        g[d] = g_alpha if use_alpha else 0.0
        g[d + 1:d + 1 + H] = g_hw
        g[d + 1 + H:d + 1 + 2 * H] = g_hb
        g[d + 1 + 2 * H:d + 1 + 3 * H] = g_ow
        g[p - 1] = g_ob
        b1t *= beta1
        b2t *= beta2
        step = lr / (1.0 - b1t)
        corr2 = 1.0 - b2t
        for k in range(p):
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k]
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k]
            params[k] -= step * m[k] / (np.sqrt(v[k] / corr2) + eps)
        theta[:] = params[:d]
        alpha = params[d]
        hw[:] = params[d + 1:d + 1 + H]
        hb[:] = params[d + 1 + H:d + 1 + 2 * H]
        ow[:] = params[d + 1 + 2 * H:d + 1 + 3 * H]
        ob = params[p - 1]
    return history, alpha, ob


def dense_loss_grad(X, tcol, y, theta, alpha, use_alpha, hw, hb, ow, ob, loss_kind):
    """Plain numpy forward/backward pass over the full n x H activation matrix.

    Shares no code with the kink-sorted kernel and is used to cross-check it.
    Returns ``(loss, grads)`` with ``grads`` keyed by parameter name.
    """
    n = X.shape[0]
    s = X @ theta
    if use_alpha:
        s = s + alpha * tcol
    pre = s[:, None] * hw[None, :] + hb[None, :]
    act = np.maximum(pre, 0.0)
    f = act @ ow + ob
    if loss_kind == MSE:
        err = f - y
        loss = float(np.mean(err ** 2))
        r = 2.0 * err / n
    else:
        loss = float(np.mean(np.logaddexp(0.0, f) - y * f))
        r = (1.0 / (1.0 + np.exp(-f)) - y) / n
    d_pre = (r[:, None] * ow[None, :]) * (pre > 0.0)
    ds = d_pre @ hw
    grads = {
        "theta": X.T @ ds,
        "alpha": float(ds @ tcol) if use_alpha else 0.0,
        "hidden_w": (d_pre * s[:, None]).sum(axis=0),
        "hidden_b": d_pre.sum(axis=0),
        "out_w": act.T @ r,
        "out_b": float(r.sum()),
    }
    return loss, grads


def dense_forward_index(s, hw, hb, ow, ob):
    return np.maximum(s[:, None] * hw[None, :] + hb[None, :], 0.0) @ ow + ob
