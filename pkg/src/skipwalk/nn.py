"""Numpy kernels with hand-written backward passes.

Every differentiable op is a ``*_forward`` returning ``(output, cache)`` and
a ``*_backward`` taking ``(upstream gradient, cache)``. Kernels are dtype
agnostic: tests run them in float64, training in float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class MissingCacheError(RuntimeError):
    pass


def _need(cache):
    if cache is None:
        raise MissingCacheError("backward called without a forward cache")
    return cache


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_sigmoid(x):
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def scatter_rows(ids, values, n_rows: int) -> np.ndarray:
    """``out[ids[i]] += values[i]`` for (N, F) ``values``; a sparse product
    is far faster than ``np.add.at`` for many repeated ids."""
    ids = np.asarray(ids).reshape(-1)
    values = np.asarray(values).reshape(len(ids), -1)
    m = sp.csr_matrix((np.ones(len(ids), dtype=values.dtype), (ids, np.arange(len(ids)))),
                      shape=(n_rows, len(ids)))
    return np.asarray(m @ values)


def xavier_init(shape, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Glorot uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    shape = tuple(shape)
    if not shape:
        raise ValueError("xavier_init needs at least one dimension")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
        fan_in, fan_out = shape[0] * receptive, shape[1] * receptive
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray = None
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    step_count: int = 0

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.value)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.value)
        shapes = {a.shape for a in (self.value, self.grad, self.adam_m, self.adam_v)}
        if len(shapes) != 1:
            raise ValueError(f"parameter tensors disagree on shape: {shapes}")

    @property
    def shape(self):
        return self.value.shape


def adam_step(p: Parameter, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in place; clears the gradient."""
    p.step_count += 1
    g = p.grad
    p.adam_m *= beta1
    p.adam_m += (1.0 - beta1) * g
    p.adam_v *= beta2
    p.adam_v += (1.0 - beta2) * (g * g)
    m_hat = p.adam_m / (1.0 - beta1 ** p.step_count)
    v_hat = p.adam_v / (1.0 - beta2 ** p.step_count)
    p.value -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.value.dtype)
    p.grad[...] = 0


# ---------------------------------------------------------------- dense ops


def matmul_forward(x, w):
    return x @ w, (x, w)


def matmul_backward(dy, cache):
    x, w = _need(cache)
    return dy @ w.T, x.T @ dy


def embedding_forward(table, ids):
    return table[ids], (table.shape, ids)


def embedding_backward(dy, cache):
    shape, ids = _need(cache)
    return scatter_rows(ids, dy.reshape(-1, shape[1]), shape[0])


def dropout_forward(x, rate: float, rng: np.random.Generator | None, train: bool = True):
    """Inverted dropout. In infer mode (or rate 0) the input passes through."""
    if not train or rate <= 0.0:
        return x, None
    keep = 1.0 - rate
    mask = (rng.random(x.shape, dtype=np.float32) < keep).astype(x.dtype) / keep
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


# ---------------------------------------------------------------- LSTM


def lstm_forward(x_t, h_prev, c_prev, layer: "LstmLayer"):
    """One time step of the standard LSTM cell. Returns ``(h_t, c_t)``."""
    h, c, _ = lstm_step_forward(x_t, h_prev, c_prev, layer.Wx.value, layer.Wh.value, layer.b.value)
    return h, c


def lstm_step_forward(x, h_prev, c_prev, Wx, Wh, b):
    d = Wh.shape[0]
    if x.shape[-1] != Wx.shape[0] or h_prev.shape[-1] != d or c_prev.shape[-1] != d:
        raise ValueError(
            f"LSTM shape mismatch: x {x.shape}, h {h_prev.shape}, c {c_prev.shape}, Wx {Wx.shape}"
        )
    z = x @ Wx + h_prev @ Wh + b
    return _lstm_gates(z, h_prev, c_prev, d, x)


def _lstm_gates(z, h_prev, c_prev, d, x=None):
    ifo = sigmoid(z[:, :3 * d])
    i, f, o = ifo[:, :d], ifo[:, d:2 * d], ifo[:, 2 * d:]
    g = np.tanh(z[:, 3 * d:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, o, g, tc)


def _lstm_gates_backward(dh, dc, cache):
    _, _, c_prev, i, f, o, g, tc = _need(cache)
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dh * tc * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ],
        axis=1,
    )
    return dz, dc * f


def lstm_step_backward(dh, dc, cache, Wx, Wh):
    """Gradients of one step: ``(dx, dh_prev, dc_prev, dWx, dWh, db)``."""
    x, h_prev = _need(cache)[:2]
    dz, dc_prev = _lstm_gates_backward(dh, dc, cache)
    return dz @ Wx.T, dz @ Wh.T, dc_prev, x.T @ dz, h_prev.T @ dz, dz.sum(axis=0)


class LstmLayer:
    """LSTM over whole sequences, gates ordered input, forget, output, cell."""

    def __init__(self, n_in: int, d: int, rng: np.random.Generator, dtype=np.float64,
                 forget_bias: float = 1.0):
        self.n_in, self.d = n_in, d
        self.Wx = Parameter(xavier_init((n_in, 4 * d), rng, dtype))
        self.Wh = Parameter(xavier_init((d, 4 * d), rng, dtype))
        b = np.zeros(4 * d, dtype=dtype)
        b[d:2 * d] = forget_bias
        self.b = Parameter(b)

    def parameters(self) -> dict[str, Parameter]:
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b}

    def forward(self, xs):
        """``xs``: (B, T, n_in) -> hidden states (B, T, d), cache.

        Same arithmetic as repeated :func:`lstm_step_forward`, laid out
        time-major with in-place updates. ``tanh(x) = 2 sigmoid(2x) - 1``
        lets one ``tanh`` over the whole gate block serve all four gates.
        """
        B, T, _ = xs.shape
        d = self.d
        if xs.shape[2] != self.n_in:
            raise ValueError(f"LSTM expects input size {self.n_in}, got {xs.shape[2]}")
        dt = xs.dtype
        half = np.full(4 * d, 0.5, dtype=dt)
        half[3 * d:] = 1.0
        lift = np.full(4 * d, 0.5, dtype=dt)
        lift[3 * d:] = 0.0
        xt = np.ascontiguousarray(xs.transpose(1, 0, 2))
        acts = (xt.reshape(T * B, -1) @ self.Wx.value).reshape(T, B, 4 * d)
        acts += self.b.value
        C = np.empty((T, B, d), dtype=dt)
        TC = np.empty_like(C)
        H = np.empty_like(C)
        Wh = self.Wh.value
        zbuf = np.empty((B, 4 * d), dtype=dt)
        fbuf = np.empty((B, d), dtype=dt)
        for t in range(T):
            a = acts[t]
            if t:
                a += np.matmul(H[t - 1], Wh, out=zbuf)
            a *= half
            np.tanh(a, out=a)
            a *= half
            a += lift  # a = [i, f, o, g]
            np.multiply(a[:, :d], a[:, 3 * d:], out=C[t])
            if t:
                C[t] += np.multiply(a[:, d:2 * d], C[t - 1], out=fbuf)
            np.tanh(C[t], out=TC[t])
            np.multiply(a[:, 2 * d:3 * d], TC[t], out=H[t])
        return H.transpose(1, 0, 2), (xt, acts, C, TC, H)

    def backward(self, dhs, cache):
        """Accumulates parameter gradients; returns dL/dxs."""
        xt, acts, C, TC, H = _need(cache)
        T, B, d = C.shape
        dt = dhs.dtype
        Wh = self.Wh.value
        dH = np.array(dhs.transpose(1, 0, 2), dtype=dt, order="C")
        dZ = np.empty((T, B, 4 * d), dtype=dt)
        dc = np.zeros((B, d), dtype=dt)
        dh = np.zeros((B, d), dtype=dt)
        tmp = np.empty((B, d), dtype=dt)
        for t in range(T - 1, -1, -1):
            a = acts[t]
            i, f, o, g = a[:, :d], a[:, d:2 * d], a[:, 2 * d:3 * d], a[:, 3 * d:]
            dz = dZ[t]
            dht = dH[t]
            if t < T - 1:
                dht += dh
            tc = TC[t]
            # output gate: dh * tc * o(1 - o)
            np.multiply(o, o, out=tmp)
            np.subtract(o, tmp, out=tmp)
            tmp *= tc
            np.multiply(dht, tmp, out=dz[:, 2 * d:3 * d])
            # cell: dc += dh * o * (1 - tc^2)
            np.multiply(tc, tc, out=tmp)
            np.subtract(1.0, tmp, out=tmp)
            tmp *= o
            tmp *= dht
            dc += tmp
            # input gate: dc * g * i(1 - i)
            np.multiply(i, i, out=tmp)
            np.subtract(i, tmp, out=tmp)
            tmp *= g
            np.multiply(dc, tmp, out=dz[:, :d])
            # candidate: dc * i * (1 - g^2)
            np.multiply(g, g, out=tmp)
            np.subtract(1.0, tmp, out=tmp)
            tmp *= i
            np.multiply(dc, tmp, out=dz[:, 3 * d:])
            if t:
                # forget gate: dc * c_prev * f(1 - f)
                np.multiply(f, f, out=tmp)
                np.subtract(f, tmp, out=tmp)
                tmp *= C[t - 1]
                np.multiply(dc, tmp, out=dz[:, d:2 * d])
                dc *= f
                np.matmul(dz, Wh.T, out=dh)
            else:
                dz[:, d:2 * d] = 0.0
        dz2 = dZ.reshape(T * B, 4 * d)
        self.Wx.grad += xt.reshape(T * B, -1).T @ dz2
        if T > 1:
            self.Wh.grad += H[:-1].reshape((T - 1) * B, d).T @ dZ[1:].reshape((T - 1) * B, 4 * d)
        self.b.grad += dz2.sum(axis=0)
        return (dz2 @ self.Wx.value.T).reshape(T, B, -1).transpose(1, 0, 2)


# ---------------------------------------------------------------- batch norm


@dataclass
class BatchNormState:
    scale: Parameter
    shift: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5
    train: bool = True

    @classmethod
    def create(cls, n_features: int, dtype=np.float64, momentum: float = 0.9, eps: float = 1e-5):
        return cls(
            Parameter(np.ones(n_features, dtype=dtype)),
            Parameter(np.zeros(n_features, dtype=dtype)),
            np.zeros(n_features, dtype=dtype),
            np.ones(n_features, dtype=dtype),
            momentum,
            eps,
        )


def batchnorm_forward(x, state: BatchNormState, mask=None):
    """Normalise features of ``x`` (N, F). ``mask`` (N,) selects the rows that
    contribute to batch statistics; other rows get zero gradient."""
    if state.train:
        xs = x if mask is None else x[mask]
        n = xs.shape[0]
        if n < 2:
            raise ValueError("batch normalization in train mode needs at least 2 rows")
        mu = xs.mean(axis=0)
        var = xs.var(axis=0)
        m = state.momentum
        state.running_mean[...] = m * state.running_mean + (1 - m) * mu
        state.running_var[...] = m * state.running_var + (1 - m) * var
    else:
        mu, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mu) * inv
    y = xhat * state.scale.value + state.shift.value
    return y, (xhat, inv, mask, state.train)


def batchnorm_backward(dy, cache, state: BatchNormState):
    """Accumulates scale/shift gradients; returns dL/dx."""
    xhat, inv, mask, train = _need(cache)
    if mask is not None:
        dy = dy * mask[:, None]
    state.scale.grad += (dy * xhat).sum(axis=0)
    state.shift.grad += dy.sum(axis=0)
    dxhat = dy * state.scale.value
    if not train:
        return dxhat * inv
    n = xhat.shape[0] if mask is None else int(mask.sum())
    s1 = dxhat.sum(axis=0)
    s2 = (dxhat * xhat).sum(axis=0)
    dx = (dxhat - (s1 + xhat * s2) / n) * inv
    if mask is not None:
        dx *= mask[:, None]
    return dx


# ---------------------------------------------------------------- checkpoints

_MAGIC = b"SKWCKPT\x00"
_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


def save_archive(arrays: dict[str, np.ndarray], path, meta: dict[str, int] | None = None) -> None:
    """Named-array archive, little-endian throughout::

        magic(8) version:u32 n_meta:u32 n_arrays:u32
        n_meta x  [key_len:u16 key utf8, value:i64]
        n_arrays x [name_len:u16 name utf8, dtype:u8, ndim:u8, dims:u64*ndim, raw data]

    dtype codes: 1 float32, 2 float64, 3 int64.
    """
    meta = meta or {}
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, len(meta), len(arrays)))
        for k, v in meta.items():
            kb = k.encode()
            fh.write(struct.pack("<H", len(kb)) + kb + struct.pack("<q", int(v)))
        for name, a in arrays.items():
            a = np.asarray(a)
            dt = a.dtype.newbyteorder("<")
            if dt not in _CODES:
                raise ValueError(f"unsupported dtype {a.dtype} for {name}")
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)) + nb)
            fh.write(struct.pack("<BB", _CODES[dt], a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(np.ascontiguousarray(a, dtype=dt).tobytes())


def load_archive(path) -> tuple[dict[str, np.ndarray], dict[str, int]]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint archive")
    version, n_meta, n_arr = struct.unpack_from("<III", buf, 8)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported archive version {version}")
    pos = 20
    meta = {}
    for _ in range(n_meta):
        (kl,) = struct.unpack_from("<H", buf, pos)
        key = buf[pos + 2:pos + 2 + kl].decode()
        (val,) = struct.unpack_from("<q", buf, pos + 2 + kl)
        meta[key] = val
        pos += 2 + kl + 8
    arrays = {}
    for _ in range(n_arr):
        (nl,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2:pos + 2 + nl].decode()
        pos += 2 + nl
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        dt = _DTYPES[code]
        size = int(np.prod(shape)) * dt.itemsize
        arrays[name] = np.frombuffer(buf, dtype=dt, count=int(np.prod(shape)), offset=pos).reshape(shape).copy()
        pos += size
    return arrays, meta
