"""Pure numpy implementation of the hot kernels.

Mirrors ``_ckernels.pyx`` function for function. Parameters of a network
are a flat float64 vector; layer ``l`` stores its weight matrix
``(sizes[l], sizes[l+1])`` row-major followed by its bias ``(sizes[l+1],)``.
Hidden layers use SiLU, the output layer is linear.
"""
import numpy as np

BACKEND = "python"


def layer_views(params, sizes):
    out = []
    off = 0
    for nin, nout in zip(sizes[:-1], sizes[1:]):
        w = params[off:off + nin * nout].reshape(nin, nout)
        off += nin * nout
        b = params[off:off + nout]
        off += nout
        out.append((w, b))
    return out


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def mlp_forward(params, sizes, X):
    h = X
    layers = layer_views(params, sizes)
    for idx, (w, b) in enumerate(layers):
        z = h @ w + b
        h = z * _sigmoid(z) if idx < len(layers) - 1 else z
    return h


def _forward_cache(layers, X):
    acts = [X]
    pres = []
    h = X
    for idx, (w, b) in enumerate(layers):
        z = h @ w + b
        pres.append(z)
        if idx < len(layers) - 1:
            h = z * _sigmoid(z)
            acts.append(h)
        else:
            h = z
    return h, acts, pres


def mlp_loss_grad(params, sizes, X, target):
    """Mean over rows of the squared error summed over output coordinates."""
    n = X.shape[0]
    layers = layer_views(params, sizes)
    out, acts, pres = _forward_cache(layers, X)
    diff = out - target
    loss = float(np.sum(diff * diff)) / n
    grad = np.empty_like(params)
    gviews = layer_views(grad, sizes)
    dz = (2.0 / n) * diff
    for idx in range(len(layers) - 1, -1, -1):
        w, _ = layers[idx]
        gw, gb = gviews[idx]
        gw[...] = acts[idx].T @ dz
        gb[...] = dz.sum(axis=0)
        if idx > 0:
            da = dz @ w.T
            z = pres[idx - 1]
            s = _sigmoid(z)
            dz = da * (s * (1.0 + z * (1.0 - s)))
    return loss, grad


def adam_update(params, grad, m, v, step, lr, beta1, beta2, eps):
    """In-place adaptive-moment update; ``step`` is the new (1-based) count."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    params -= lr * mhat / (np.sqrt(vhat) + eps)


def _net_input(x, cond, temb_row):
    n = x.shape[0]
    return np.concatenate([x, cond, np.broadcast_to(temb_row, (n, temb_row.shape[0]))], axis=1)


def ddim_encode(params, sizes, x0, cond, alpha_bar, temb):
    z = np.array(x0, dtype=np.float64, copy=True)
    T = alpha_bar.shape[0] - 1
    for t in range(T):
        a_t, a_n = alpha_bar[t], alpha_bar[t + 1]
        eps = mlp_forward(params, sizes, _net_input(z, cond, temb[t]))
        coef = np.sqrt(1.0 - a_n) - np.sqrt(a_n * (1.0 - a_t) / a_t)
        z = np.sqrt(a_n / a_t) * z + coef * eps
    return z


def ddim_decode(params, sizes, z, cond, alpha_bar, temb):
    x = np.array(z, dtype=np.float64, copy=True)
    T = alpha_bar.shape[0] - 1
    for t in range(T, 0, -1):
        a_t, a_p = alpha_bar[t], alpha_bar[t - 1]
        eps = mlp_forward(params, sizes, _net_input(x, cond, temb[t]))
        coef = np.sqrt(a_p * (1.0 - a_t) / a_t) - np.sqrt(1.0 - a_p)
        x = np.sqrt(a_p / a_t) * x - coef * eps
    return x


def train_epoch(params, sizes, m, v, step, x0, cond, t_idx, eps, order,
                alpha_bar, temb, batch, lr, beta1, beta2, guard):
    """One pass over ``order`` in minibatches; returns (mean batch loss, step)."""
    n = order.shape[0]
    total = 0.0
    nb = 0
    sa = np.sqrt(alpha_bar)
    sb = np.sqrt(1.0 - alpha_bar)
    for start in range(0, n, batch):
        rows = order[start:start + batch]
        t = t_idx[rows]
        e = eps[rows]
        xt = sa[t][:, None] * x0[rows] + sb[t][:, None] * e
        X = np.concatenate([xt, cond[rows], temb[t]], axis=1)
        loss, grad = mlp_loss_grad(params, sizes, X, e)
        step += 1
        adam_update(params, grad, m, v, step, lr, beta1, beta2, guard)
        total += loss
        nb += 1
    return total / max(nb, 1), step


def rbf_kernel_sum(A, B, gamma):
    """sum_{a,b} exp(-gamma * ||a - b||^2), accumulated row by row."""
    total = 0.0
    chunk = 256
    for s in range(0, A.shape[0], chunk):
        a = A[s:s + chunk]
        d2 = np.sum((a[:, None, :] - B[None, :, :]) ** 2, axis=2)
        total += float(np.exp(-gamma * d2).sum())
    return total
