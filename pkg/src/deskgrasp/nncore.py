"""Minimal deterministic neural-network substrate.

Reverse-mode autodiff over float64 numpy arrays with exactly the layer
kinds the learned components need: dense, 3x3/stride-2 convolution and
its transpose, batchnorm, an LSTM cell, relu, mish, and embeddings. No
graph compiler, no GPU; determinism and checkability outrank speed.

Checkpoints are single binary files: magic ``DXC1``, a version word, a
JSON table of named arrays (shape + dtype, payload order), then the raw
little-endian payloads. ``save_checkpoint``/``load_checkpoint`` are the
only reader and writer.
"""

from __future__ import annotations

import json
import struct
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels as K

_CHECKED = False


def set_checked(flag: bool):
    """In checked mode every op asserts its output is finite."""
    global _CHECKED
    _CHECKED = bool(flag)


class DimensionError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

class Tensor:
    """Node in the dynamic graph: values, gradient, and a backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.name = name
        if _CHECKED and not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite tensor {name!r}")

    @property
    def shape(self):
        return self.data.shape

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise DimensionError("backward() needs a scalar loss")
        topo: List[Tensor] = []
        seen = set()

        def visit(t: Tensor):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        grads: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for t in reversed(topo):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad:
                t._accum(g)
            if t._backward is None:
                continue
            for p, pg in zip(t._parents, t._backward(g)):
                if pg is None:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # operator sugar used all over the model code
    def __add__(self, o): return add(self, _lift(o))
    def __radd__(self, o): return add(_lift(o), self)
    def __sub__(self, o): return add(self, scale(_lift(o), -1.0))
    def __rsub__(self, o): return add(_lift(o), scale(self, -1.0))
    def __mul__(self, o): return mul(self, _lift(o))
    def __rmul__(self, o): return mul(_lift(o), self)
    def __neg__(self): return scale(self, -1.0)
    def __matmul__(self, o): return matmul(self, _lift(o))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(data: np.ndarray, parents: Tuple[Tensor, ...],
        backward: Callable[[np.ndarray], Tuple]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._backward is not None or p._parents
           for p in parents):
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Primitive ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return _op(a.data + b.data, (a, b),
               lambda g: (_unbroadcast(g, a.data.shape),
                          _unbroadcast(g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _op(a.data * b.data, (a, b),
               lambda g: (_unbroadcast(g * b.data, a.data.shape),
                          _unbroadcast(g * a.data, b.data.shape)))


def scale(a: Tensor, s: float) -> Tensor:
    return _op(a.data * s, (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 1 or b.data.ndim < 2:
        raise DimensionError("matmul needs at least (.., m, k) @ (k, n)")
    data = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb
    return _op(data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _op(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _op(y, (a,), lambda g: (g * (1.0 - y * y),))


def mish(a: Tensor) -> Tensor:
    """x * tanh(softplus(x)), with the stable softplus form."""
    x = a.data
    sp = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
    t = np.tanh(sp)
    y = x * t
    sig = 1.0 / (1.0 + np.exp(-x))
    dy = t + x * (1.0 - t * t) * sig
    return _op(y, (a,), lambda g: (g * dy,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _op(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    return _op(np.log(a.data), (a,), lambda g: (g / a.data,))


def pow_const(a: Tensor, p: float) -> Tensor:
    y = a.data ** p
    return _op(y, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)
    return _op(data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else \
        np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    return _op(a.data.reshape(shape), (a,),
               lambda g: (g.reshape(a.data.shape),))


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError("transpose2d is for matrices")
    return _op(a.data.T.copy(), (a,), lambda g: (g.T.copy(),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    datas = [p.data for p in parts]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, splits, axis=axis))
    return _op(np.concatenate(datas, axis=axis), tuple(parts), backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)
    return _op(a.data[idx].copy(), (a,), backward)


def embedding_rows(w: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= w.data.shape[0]):
        raise DimensionError("embedding index out of range")

    def backward(g):
        gw = np.zeros_like(w.data)
        np.add.at(gw, idx.reshape(-1),
                  g.reshape(-1, w.data.shape[1]))
        return (gw,)
    return _op(w.data[idx], (w,), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 stride-2 pad-1 convolution; x (N,C,H,W), w (Cout, C*9)."""
    n, c, h, wd = x.data.shape
    cout = w.data.shape[0]
    if w.data.shape[1] != c * 9 or b.data.shape != (cout,):
        raise DimensionError("conv2d parameter shapes do not match input")
    cols = K.im2col(x.data, 3, 2, 1)                     # (N, L, C*9)
    out = cols @ w.data.T + b.data                       # (N, L, Cout)
    oh = (h + 2 - 3) // 2 + 1
    ow = (wd + 2 - 3) // 2 + 1
    data = out.transpose(0, 2, 1).reshape(n, cout, oh, ow)

    def backward(g):
        gl = g.reshape(n, cout, oh * ow).transpose(0, 2, 1)  # (N, L, Cout)
        gw = np.tensordot(gl, cols, axes=([0, 1], [0, 1]))   # (Cout, C*9)
        gb = gl.sum(axis=(0, 1))
        gcols = gl @ w.data                                  # (N, L, C*9)
        gx = K.col2im(gcols, c, h, wd, 3, 2, 1)
        return gx, gw, gb
    return _op(data, (x, w, b), backward)


def tconv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Transposed 3x3 stride-2 conv doubling H and W; w (Cin, Cout*9).

    Exactly the adjoint of :func:`conv2d`'s linear map, so gradients reuse
    im2col/col2im with the roles swapped.
    """
    n, c, h, wd = x.data.shape
    if w.data.shape[0] != c or w.data.shape[1] % 9 != 0:
        raise DimensionError("tconv2d parameter shapes do not match input")
    cout = w.data.shape[1] // 9
    if b.data.shape != (cout,):
        raise DimensionError("tconv2d bias shape mismatch")
    oh, ow = 2 * h, 2 * wd
    xf = x.data.reshape(n, c, h * wd).transpose(0, 2, 1)     # (N, L, C)
    cols = xf @ w.data                                       # (N, L, Cout*9)
    data = K.col2im(cols, cout, oh, ow, 3, 2, 1) \
        + b.data.reshape(1, cout, 1, 1)

    def backward(g):
        gcols = K.im2col(g, 3, 2, 1)                         # (N, L, Cout*9)
        gxf = gcols @ w.data.T                               # (N, L, C)
        gx = gxf.transpose(0, 2, 1).reshape(n, c, h, wd)
        gw = np.tensordot(xf, gcols, axes=([0, 1], [0, 1]))  # (C, Cout*9)
        gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb
    return _op(data, (x, w, b), backward)


# ---------------------------------------------------------------------------
# Initializers
# ---------------------------------------------------------------------------

def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int,
                   fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(rng: np.random.Generator, shape) -> np.ndarray:
    a = rng.normal(size=(max(shape), max(shape)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q[: shape[0], : shape[1]].copy()


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Layer:
    def named_params(self) -> List[Tuple[str, Tensor]]:
        raise NotImplementedError

    def params(self) -> List[Tensor]:
        return [p for _, p in self.named_params()]


class Dense(Layer):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator,
                 init: str = "kaiming", name: str = "dense"):
        if init == "kaiming":
            w = kaiming_uniform(rng, (fan_out, fan_in), fan_in)
        elif init == "xavier":
            w = xavier_uniform(rng, (fan_out, fan_in), fan_in, fan_out)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.w = Tensor(w, requires_grad=True, name=f"{name}.w")
        self.b = Tensor(np.zeros(fan_out), requires_grad=True,
                        name=f"{name}.b")
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[-1] != self.w.data.shape[1]:
            raise DimensionError(
                f"{self.name}: got fan-in {x.data.shape[-1]}, "
                f"expected {self.w.data.shape[1]}")
        return matmul(x, transpose2d(self.w)) + self.b

    def named_params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class Conv2d(Layer):
    """3x3 kernel, stride 2, pad 1 (the only convolution in the stack)."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator,
                 name: str = "conv"):
        self.w = Tensor(kaiming_uniform(rng, (cout, cin * 9), cin * 9),
                        requires_grad=True, name=f"{name}.w")
        self.b = Tensor(np.zeros(cout), requires_grad=True, name=f"{name}.b")
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b)

    def named_params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class TConv2d(Layer):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator,
                 name: str = "tconv"):
        self.w = Tensor(kaiming_uniform(rng, (cin, cout * 9), cin * 9),
                        requires_grad=True, name=f"{name}.w")
        self.b = Tensor(np.zeros(cout), requires_grad=True, name=f"{name}.b")
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        return tconv2d(x, self.w, self.b)

    def named_params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class BatchNorm(Layer):
    """Feature-wise (2d input) or channel-wise (4d input) normalization.

    Train mode normalizes by batch statistics and folds them into the
    running estimates with momentum 0.1; eval mode uses the running
    estimates only. Variances are biased (1/N), matching the normalizer.
    """

    def __init__(self, n: int, momentum: float = 0.1, eps: float = 1e-5,
                 name: str = "bn", gamma_init: float = 1.0):
        self.gamma = Tensor(np.full(n, gamma_init), requires_grad=True,
                            name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(n), requires_grad=True,
                           name=f"{name}.beta")
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.momentum = momentum
        self.eps = eps
        self.training = True
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        nd = x.data.ndim
        if nd == 2:
            axes, view = (0,), (1, -1)
        elif nd == 4:
            axes, view = (0, 2, 3), (1, -1, 1, 1)
        else:
            raise DimensionError("batchnorm expects 2d or 4d input")
        if x.data.shape[1] != self.gamma.data.shape[0]:
            raise DimensionError(f"{self.name}: channel count mismatch")
        if self.training:
            mean = tmean(x, axis=axes, keepdims=True)
            cent = x - mean
            var = tmean(mul(cent, cent), axis=axes, keepdims=True)
            m, v = mean.data.reshape(-1), var.data.reshape(-1)
            self.running_mean = (1 - self.momentum) * self.running_mean \
                + self.momentum * m
            self.running_var = (1 - self.momentum) * self.running_var \
                + self.momentum * v
            inv = pow_const(var + Tensor(self.eps), -0.5)
            xn = mul(cent, inv)
        else:
            m = self.running_mean.reshape(view)
            v = self.running_var.reshape(view)
            xn = mul(x - Tensor(m), Tensor(1.0 / np.sqrt(v + self.eps)))
        g = reshape(self.gamma, view)
        b = reshape(self.beta, view)
        return mul(xn, g) + b

    def named_params(self):
        return [(f"{self.name}.gamma", self.gamma),
                (f"{self.name}.beta", self.beta)]

    def state_arrays(self) -> List[Tuple[str, np.ndarray]]:
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]


class LSTMCell(Layer):
    """Single LSTM cell; gate order i, f, g, o; forget bias starts at 1."""

    def __init__(self, fan_in: int, hidden: int, rng: np.random.Generator,
                 name: str = "lstm"):
        self.hidden = hidden
        self.w_ih = Tensor(kaiming_uniform(rng, (4 * hidden, fan_in), fan_in),
                           requires_grad=True, name=f"{name}.w_ih")
        w_hh = np.concatenate(
            [orthogonal(rng, (hidden, hidden)) for _ in range(4)], axis=0)
        self.w_hh = Tensor(w_hh, requires_grad=True, name=f"{name}.w_hh")
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        self.b = Tensor(bias, requires_grad=True, name=f"{name}.b")
        self.name = name

    def __call__(self, x: Tensor, h: Tensor, c: Tensor
                 ) -> Tuple[Tensor, Tensor]:
        if x.data.shape[-1] != self.w_ih.data.shape[1]:
            raise DimensionError(f"{self.name}: input width mismatch")
        gates = matmul(x, transpose2d(self.w_ih)) \
            + matmul(h, transpose2d(self.w_hh)) + self.b
        hs = self.hidden
        i = sigmoid(narrow(gates, -1, 0, hs))
        f = sigmoid(narrow(gates, -1, hs, hs))
        g = tanh(narrow(gates, -1, 2 * hs, hs))
        o = sigmoid(narrow(gates, -1, 3 * hs, hs))
        c_new = mul(f, c) + mul(i, g)
        h_new = mul(o, tanh(c_new))
        return h_new, c_new

    def init_state(self, batch: int) -> Tuple[Tensor, Tensor]:
        return (Tensor(np.zeros((batch, self.hidden))),
                Tensor(np.zeros((batch, self.hidden))))

    def named_params(self):
        return [(f"{self.name}.w_ih", self.w_ih),
                (f"{self.name}.w_hh", self.w_hh),
                (f"{self.name}.b", self.b)]


class Embedding(Layer):
    def __init__(self, count: int, dim: int, rng: np.random.Generator,
                 name: str = "emb"):
        self.w = Tensor(rng.normal(0.0, 0.02, size=(count, dim)),
                        requires_grad=True, name=f"{name}.w")
        self.name = name

    def __call__(self, idx: np.ndarray) -> Tensor:
        return embedding_rows(self.w, idx)

    def named_params(self):
        return [(f"{self.name}.w", self.w)]


def set_training(layers: Iterable[Layer], flag: bool):
    for l in layers:
        if isinstance(l, BatchNorm):
            l.training = flag


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Bias-corrected Adam; weight decay is classic L2 added to the grad."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[i] / b1t) \
                / (np.sqrt(self.v[i] / b2t) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def batches(n: int, size: int, rng: np.random.Generator):
    """Seeded shuffling without replacement; final partial batch kept."""
    perm = rng.permutation(n)
    for k in range(0, n, size):
        yield perm[k:k + size]


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def grad_check(params: Sequence[Tensor], loss_fn: Callable[[], Tensor],
               eps: float = 1e-6, coords: int = 200, seed: int = 0) -> float:
    """Max scaled error between backprop and central differences.

    Samples at least `coords` parameter coordinates (seeded) across all
    given tensors, proportionally to size. Frozen tensors
    (requires_grad=False) are reported with analytic gradient exactly 0.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    rng = np.random.default_rng(seed)
    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    take = min(coords, total)
    picks = rng.choice(total, size=take, replace=False)
    offsets = np.cumsum(sizes) - sizes
    worst = 0.0
    for flat in sorted(picks.tolist()):
        pi = int(np.searchsorted(offsets, flat, side="right") - 1)
        ci = flat - offsets[pi]
        p = params[pi]
        idx = np.unravel_index(ci, p.data.shape)
        keep = p.data[idx]
        p.data[idx] = keep + eps
        hi = float(loss_fn().data)
        p.data[idx] = keep - eps
        lo = float(loss_fn().data)
        p.data[idx] = keep
        numeric = (hi - lo) / (2.0 * eps)
        a = float(analytic[pi][idx]) if p.requires_grad else 0.0
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"DXC1"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, arrays: Dict[str, np.ndarray],
                    meta: Optional[dict] = None):
    """Write named arrays: DXC1 | version u32 | header-len u32 | JSON header
    {meta, entries:[{name, shape, dtype}]} | raw little-endian payloads in
    entry order, C-contiguous."""
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in (np.float64, np.float32, np.int64):
            raise ValueError(f"unsupported checkpoint dtype {arr.dtype}")
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": arr.dtype.name})
        blobs.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    header = json.dumps({"meta": meta or {}, "entries": entries},
                        sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a model checkpoint (bad magic)")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen).decode())
        arrays: Dict[str, np.ndarray] = {}
        for e in header["entries"]:
            dtype = np.dtype(e["dtype"]).newbyteorder("<")
            count = int(np.prod(e["shape"])) if e["shape"] else 1
            buf = f.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise ValueError("truncated checkpoint payload")
            arrays[e["name"]] = np.frombuffer(buf, dtype=dtype).reshape(
                e["shape"]).astype(dtype.newbyteorder("="))
    return arrays, header["meta"]
