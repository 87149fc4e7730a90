"""Independent oracles shared by the test modules."""

import numpy as np

from wavebeat import nn


def conv1d_loop(x, w, b, stride, dilation, padding):
    batch, c_in, length = x.shape
    c_out, _, k_size = w.shape
    t_out = (length + 2 * padding - dilation * (k_size - 1) - 1) // stride + 1
    out = np.zeros((batch, c_out, t_out))
    for bi in range(batch):
        for o in range(c_out):
            for t in range(t_out):
                acc = 0.0 if b is None else float(b[o])
                for i in range(c_in):
                    for k in range(k_size):
                        src = t * stride + k * dilation - padding
                        if 0 <= src < length:
                            acc += w[o, i, k] * x[bi, i, src]
                out[bi, o, t] = acc
    return out


def numeric_grad(f, arr, h=1e-6):
    """Central finite differences of scalar ``f()`` with respect to every entry of ``arr``."""
    g = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def optimal_matching(est, ref, tol):
    """Exhaustive maximum one-to-one matching (memoised over a bitmask of used estimates)."""
    from functools import lru_cache

    est = list(est)
    ref = list(ref)

    @lru_cache(maxsize=None)
    def best(i, used):
        if i == len(ref):
            return 0
        result = best(i + 1, used)
        for j, e in enumerate(est):
            if not used & (1 << j) and abs(e - ref[i]) <= tol:
                result = max(result, 1 + best(i + 1, used | (1 << j)))
        return result

    return best(0, 0)


def onset_times(samples, sr, threshold=0.08, hold_s=0.1):
    """Transient onsets: first sample where a 1 ms envelope crosses ``threshold``
    times the global maximum, with ``hold_s`` dead time after each onset."""
    win = max(1, int(0.001 * sr))
    env = np.convolve(np.abs(samples), np.ones(win) / win, mode="same")
    level = threshold * env.max()
    onsets = []
    i = 0
    above = np.flatnonzero(env > level)
    while len(above):
        i = above[0]
        onsets.append(i / sr)
        above = above[above > i + hold_s * sr]
    return np.array(onsets)


def gradcheck_conv(seed):
    rng = np.random.default_rng(seed)
    batch, c_in, c_out = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.integers(1, 4))
    stride, dilation = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    padding = int(rng.integers(0, 3))
    length = int(rng.integers(dilation * (k - 1) + 1, 17))
    x = rng.standard_normal((batch, c_in, length))
    w = rng.standard_normal((c_out, c_in, k))
    b = rng.standard_normal(c_out)
    out, cache = nn.conv1d_forward(x, w, b, stride, dilation, padding)
    proj = rng.standard_normal(out.shape)
    gx, gw, gb = nn.conv1d_backward(proj, cache)
    f = lambda: float(np.sum(nn.conv1d_forward(x, w, b, stride, dilation, padding)[0] * proj))
    return max(rel_error(gx, numeric_grad(f, x)), rel_error(gw, numeric_grad(f, w)),
               rel_error(gb, numeric_grad(f, b)))


def gradcheck_batchnorm(seed, training=True):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 9))))
    c = x.shape[1]
    gamma = rng.uniform(0.5, 2.0, c)
    beta = rng.standard_normal(c)
    rm, rv = rng.standard_normal(c), rng.uniform(0.5, 2.0, c)
    out, cache = nn.batchnorm1d_forward(x, gamma, beta, rm.copy(), rv.copy(), training=training)
    proj = rng.standard_normal(out.shape)
    gx, gg, gb = nn.batchnorm1d_backward(proj, cache)
    f = lambda: float(np.sum(nn.batchnorm1d_forward(x, gamma, beta, rm.copy(), rv.copy(),
                                                    training=training)[0] * proj))
    return max(rel_error(gx, numeric_grad(f, x)), rel_error(gg, numeric_grad(f, gamma)),
               rel_error(gb, numeric_grad(f, beta)))


def gradcheck_prelu(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 7))
    x[np.abs(x) < 1e-3] = 0.5  # keep finite differences away from the kink
    alpha = rng.uniform(0.0, 0.5, 3)
    out, cache = nn.prelu_forward(x, alpha)
    proj = rng.standard_normal(out.shape)
    gx, ga = nn.prelu_backward(proj, cache)
    f = lambda: float(np.sum(nn.prelu_forward(x, alpha)[0] * proj))
    return max(rel_error(gx, numeric_grad(f, x)), rel_error(ga, numeric_grad(f, alpha)))


def gradcheck_sigmoid(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, 6)) * 4
    out, cache = nn.sigmoid_forward(x)
    proj = rng.standard_normal(out.shape)
    gx = nn.sigmoid_backward(proj, cache)
    f = lambda: float(np.sum(nn.sigmoid(x) * proj))
    return rel_error(gx, numeric_grad(f, x))


OP_GRADCHECKS = {
    "conv1d": gradcheck_conv,
    "batchnorm_train": gradcheck_batchnorm,
    "batchnorm_eval": lambda seed: gradcheck_batchnorm(seed, training=False),
    "prelu": gradcheck_prelu,
    "sigmoid": gradcheck_sigmoid,
}


def model_gradcheck(cfg, instance, frames=4, h=1e-6):
    """Largest finite-difference discrepancy of the whole model plus MFE loss in float64.

    Combines a random direction in parameter space, one random coordinate of every
    trainable tensor and a random input direction. A coordinate counts as relative
    error with a 1e-5 absolute floor so that vanishing gradients do not dominate.
    The small step keeps central differences from straddling PReLU kinks.
    """
    from wavebeat.loss import mfe, mfe_grad
    from wavebeat.model import build

    rng = np.random.default_rng(instance)
    model = build(cfg, instance, dtype=np.float64)
    for p in model.parameters(trainable_only=True):
        p.value += 0.1 * rng.standard_normal(p.value.shape)
    x = rng.standard_normal((2, 1, cfg.total_stride * frames))
    y = (rng.random((2, 2, frames)) < 0.4).astype(float)
    loss = lambda inp=x: mfe(model.forward(inp), y)[0]
    model.zero_grad()
    gx = model.backward(mfe_grad(model.forward(x), y))
    params = model.parameters(trainable_only=True)

    def shifted(step, direction):
        for p, v in zip(params, direction):
            p.value += step * v
        value = loss()
        for p, v in zip(params, direction):
            p.value -= step * v
        return value

    errors = []
    direction = [rng.standard_normal(p.value.shape) for p in params]
    analytic = sum(np.sum(p.grad * v) for p, v in zip(params, direction))
    errors.append(rel_error(analytic, (shifted(h, direction) - shifted(-h, direction)) / (2 * h)))
    for p in params:
        i = tuple(rng.integers(0, s) for s in p.value.shape)
        old = p.value[i]
        p.value[i] = old + h
        up = loss()
        p.value[i] = old - h
        down = loss()
        p.value[i] = old
        num = (up - down) / (2 * h)
        errors.append(abs(p.grad[i] - num) / (max(abs(num), abs(p.grad[i])) + 1e-5))
    vx = rng.standard_normal(x.shape)
    num = (loss(x + h * vx) - loss(x - h * vx)) / (2 * h)
    errors.append(rel_error(np.sum(gx * vx), num))
    return max(errors)
