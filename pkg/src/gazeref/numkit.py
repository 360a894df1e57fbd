"""Dense numeric primitives: validated tensors, an LSTM cell with exact
analytic backward, stable softmax, Adam, and a finite-difference gradient
checker.

Everything runs in float64. Gate block order in all LSTM weight matrices is
(input, forget, output, candidate).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, NumericError


def tensor(values, dims=None):
    """Validated dense array: float64, finite, optionally reshaped to dims."""
    arr = np.asarray(values, dtype=np.float64)
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        if any(d <= 0 for d in dims):
            raise DimensionError(f"non-positive dims {dims}")
        if arr.size != int(np.prod(dims)):
            raise DimensionError(
                f"{arr.size} values do not fill shape {dims}")
        arr = arr.reshape(dims)
    if arr.ndim > 3:
        raise DimensionError(f"rank {arr.ndim} > 3 not supported")
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite values in tensor")
    return arr


def check_finite(arr, what="array"):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def sigmoid(z):
    # piecewise form avoids overflow in exp for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    """Max-shifted softmax over a 1-D logit vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise DimensionError("softmax of empty vector")
    check_finite(z, "softmax input")
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class LstmParams:
    """Cell weights; W_x is (4H, I), W_h is (4H, H), b is (4H,)."""
    input_dim: int
    hidden_dim: int
    W_x: np.ndarray
    W_h: np.ndarray
    b: np.ndarray

    def validate(self):
        h, i = self.hidden_dim, self.input_dim
        if h <= 0 or i <= 0:
            raise DimensionError("non-positive LSTM dims")
        if self.W_x.shape != (4 * h, i):
            raise DimensionError(f"W_x shape {self.W_x.shape} != {(4*h, i)}")
        if self.W_h.shape != (4 * h, h):
            raise DimensionError(f"W_h shape {self.W_h.shape} != {(4*h, h)}")
        if self.b.shape != (4 * h,):
            raise DimensionError(f"b shape {self.b.shape} != {(4*h,)}")
        for name, a in (("W_x", self.W_x), ("W_h", self.W_h), ("b", self.b)):
            check_finite(a, name)
        return self


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim):
        return cls(np.zeros(hidden_dim), np.zeros(hidden_dim))


def init_lstm(input_dim, hidden_dim, rng):
    """Uniform(-a, a) with a = 1/sqrt(hidden_dim); forget-gate bias +1."""
    a = 1.0 / np.sqrt(hidden_dim)
    p = LstmParams(
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        W_x=rng.uniform(-a, a, (4 * hidden_dim, input_dim)),
        W_h=rng.uniform(-a, a, (4 * hidden_dim, hidden_dim)),
        b=np.zeros(4 * hidden_dim),
    )
    p.b[hidden_dim:2 * hidden_dim] = 1.0
    return p.validate()


@dataclass
class StepCache:
    params: LstmParams
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    c_new: np.ndarray
    tanh_c: np.ndarray


@dataclass
class LstmGrads:
    dW_x: np.ndarray
    dW_h: np.ndarray
    db: np.ndarray


def lstm_step(x, prev, p):
    """One LSTM cell step; returns the new state and a cache for backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.input_dim,):
        raise DimensionError(f"x shape {x.shape} != {(p.input_dim,)}")
    if prev.h.shape != (p.hidden_dim,) or prev.c.shape != (p.hidden_dim,):
        raise DimensionError("state shape mismatch")
    check_finite(x, "lstm input")
    h = p.hidden_dim
    z = p.W_x @ x + p.W_h @ prev.h + p.b
    i = sigmoid(z[:h])
    f = sigmoid(z[h:2 * h])
    o = sigmoid(z[2 * h:3 * h])
    g = np.tanh(z[3 * h:])
    c_new = f * prev.c + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    cache = StepCache(p, x, prev.h, prev.c, i, f, o, g, c_new, tanh_c)
    return LstmState(h_new, c_new), cache


def lstm_backward(cache, dh, dc):
    """Exact gradients of one cell step.

    Returns (LstmGrads, dx, dPrevState) for upstream gradients dh, dc at the
    step's outputs.
    """
    p = cache.params
    if dh.shape != (p.hidden_dim,) or dc.shape != (p.hidden_dim,):
        raise ContractError("upstream gradient shape mismatch")
    i, f, o, g = cache.i, cache.f, cache.o, cache.g
    do = dh * cache.tanh_c
    dct = dc + dh * o * (1.0 - cache.tanh_c ** 2)
    di = dct * g
    dg = dct * i
    df = dct * cache.c_prev
    dc_prev = dct * f
    dz = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        do * o * (1.0 - o),
        dg * (1.0 - g ** 2),
    ])
    grads = LstmGrads(
        dW_x=np.outer(dz, cache.x),
        dW_h=np.outer(dz, cache.h_prev),
        db=dz,
    )
    dx = p.W_x.T @ dz
    dh_prev = p.W_h.T @ dz
    return grads, dx, LstmState(dh_prev, dc_prev)


def lstm_sequence(xs, p, h0=None):
    """Run the cell over a sequence; returns (states, caches)."""
    state = h0 if h0 is not None else LstmState.zeros(p.hidden_dim)
    states, caches = [], []
    for x in xs:
        state, cache = lstm_step(x, state, p)
        states.append(state)
        caches.append(cache)
    return states, caches


def lstm_sequence_backward(caches, dh_per_step, accum):
    """BPTT over cached steps.

    dh_per_step[t] may be None; `accum` is an LstmGrads to add into.
    Returns (dx list, dState at step 0's inputs).
    """
    h = caches[0].params.hidden_dim
    carry = LstmState(np.zeros(h), np.zeros(h))
    dxs = [None] * len(caches)
    for t in range(len(caches) - 1, -1, -1):
        dh = carry.h.copy()
        if dh_per_step[t] is not None:
            dh += dh_per_step[t]
        g, dx, carry = lstm_backward(caches[t], dh, carry.c)
        accum.dW_x += g.dW_x
        accum.dW_h += g.dW_h
        accum.db += g.db
        dxs[t] = dx
    return dxs, carry


def zero_grads_like(values):
    return {k: np.zeros_like(v) for k, v in values.items()}


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads, max_norm=5.0):
    """Scale all gradients in place so the global norm is <= max_norm."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return grads


@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamState:
    def __init__(self, values):
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in values.items()}
        self.v = {k: np.zeros_like(v) for k, v in values.items()}


def adam_step(values, grads, state, hyper=AdamHyper()):
    """Standard Adam with bias correction; updates `values` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in group '{name}'")
    state.t += 1
    t = state.t
    b1, b2 = hyper.beta1, hyper.beta2
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        values[name] -= hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return values


def grad_check(loss_fn, params, eps=1e-5, max_coords_per_group=200, seed=0):
    """Max relative error of analytic gradients vs central differences.

    loss_fn(params) must be pure and return (loss, grads) with grads keyed
    like params. Groups larger than max_coords_per_group are subsampled
    with a fixed seed.
    """
    _, analytic = loss_fn(params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        n = flat.size
        if n > max_coords_per_group:
            idx = rng.choice(n, size=max_coords_per_group, replace=False)
        else:
            idx = np.arange(n)
        a_flat = analytic[name].reshape(-1)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + eps
            lp, _ = loss_fn(params)
            flat[k] = orig - eps
            lm, _ = loss_fn(params)
            flat[k] = orig
            numeric = (lp - lm) / (2 * eps)
            a = a_flat[k]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
