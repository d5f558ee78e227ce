"""Dense tensors with reverse-mode automatic differentiation.

Every operation built while gradients are enabled records itself on an
implicit tape: the output tensor keeps references to its input tensors
together with a vector-Jacobian closure.  :func:`backward` replays the tape
of a scalar loss in reverse topological order and returns the gradients of
every reachable leaf parameter.

Only the primitives needed by the factorized video classifier are provided:
3D convolution (cross-correlation convention, zero padding), batch
normalization, ReLU, sigmoid, average pooling, a fully connected layer, and
a handful of elementwise helpers.  Values are float32 or float64; binary
operations never broadcast implicitly except against python scalars, which
keeps shape bugs loud.

All operations are deterministic for fixed inputs: reductions use fixed
numpy evaluation order, and the tape is replayed in construction order.
A single graph must stay on one thread; independent graphs are fine.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "backward",
    "finite_difference_grad",
    "relu",
    "sigmoid",
    "clamp",
    "cast",
    "log",
    "add",
    "mul",
    "tsum",
    "tmean",
    "reshape",
    "avg_pool",
    "linear",
    "conv3d",
    "batch_norm",
]

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A dense N-dimensional float array, optionally recorded on the tape.

    ``data`` is always a numpy array of float32 or float64.  Leaf tensors
    created with ``requires_grad=True`` act as trainable parameters; tensors
    produced by operations carry the tape links needed for :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Small operator surface; everything routes through the module functions.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul(other, -1.0))
        return add(self, -other)

    def __rsub__(self, other):
        if isinstance(other, Tensor):
            return add(other, mul(self, -1.0))
        return add(mul(self, -1.0), other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, shape):
        return reshape(self, shape)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def backward(loss: Tensor) -> dict[Tensor, Tensor]:
    """Run reverse-mode differentiation from a scalar loss.

    Returns a map from each reachable leaf tensor with ``requires_grad`` to
    its gradient; unreachable parameters are simply absent.  The tape is
    traversed in a fixed order, so repeated calls on identical graphs give
    bitwise-identical gradients.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    nodes: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        needs = tuple(p.requires_grad for p in node._parents)
        for parent, contrib in zip(node._parents, node._vjp(g, needs)):
            if contrib is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + contrib
            else:
                grads[pid] = contrib
                nodes[pid] = parent

    return {
        nodes[i]: Tensor(g)
        for i, g in grads.items()
        if nodes[i].requires_grad and not nodes[i]._parents
    }


# ---------------------------------------------------------------------------
# elementwise and reduction primitives


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def vjp(g, needs):
        return (g * mask,)

    return _make(np.maximum(x.data, 0), (x,), vjp)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)

    def vjp(g, needs):
        return (g * s * (1.0 - s),)

    return _make(s, (x,), vjp)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    if not lo < hi:
        raise ValueError(f"clamp requires lo < hi, got {lo} >= {hi}")
    inside = (x.data >= lo) & (x.data <= hi)

    def vjp(g, needs):
        return (g * inside,)

    return _make(np.clip(x.data, lo, hi), (x,), vjp)


def cast(x: Tensor, dtype) -> Tensor:
    dtype = np.dtype(dtype)
    if dtype not in _FLOAT_DTYPES:
        raise ValueError(f"cast supports float32/float64, got {dtype}")
    src = x.dtype

    def vjp(g, needs):
        return (g.astype(src),)

    return _make(x.data.astype(dtype), (x,), vjp)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log requires strictly positive inputs")
    d = x.data

    def vjp(g, needs):
        return (g / d,)

    return _make(np.log(d), (x,), vjp)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (no implicit broadcasting)")


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "add")

        def vjp(g, needs):
            return (g, g)

        return _make(a.data + b.data, (a, b), vjp)
    bval = a.dtype.type(b)

    def vjp(g, needs):
        return (g,)

    return _make(a.data + bval, (a,), vjp)


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "mul")
        ad, bd = a.data, b.data

        def vjp(g, needs):
            return (g * bd if needs[0] else None, g * ad if needs[1] else None)

        return _make(ad * bd, (a, b), vjp)
    bval = a.dtype.type(b)

    def vjp(g, needs):
        return (g * bval,)

    return _make(a.data * bval, (a,), vjp)


def tsum(x: Tensor) -> Tensor:
    shape = x.shape

    def vjp(g, needs):
        return (np.broadcast_to(g, shape),)

    return _make(np.asarray(x.data.sum(), dtype=x.dtype), (x,), vjp)


def tmean(x: Tensor) -> Tensor:
    shape = x.shape
    n = x.size

    def vjp(g, needs):
        return (np.broadcast_to(g / n, shape),)

    return _make(np.asarray(x.data.mean(), dtype=x.dtype), (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.shape
    shape = tuple(shape)

    def vjp(g, needs):
        return (g.reshape(orig),)

    return _make(x.data.reshape(shape), (x,), vjp)


def avg_pool(x: Tensor, axes: Sequence[int] = (-3, -2, -1)) -> Tensor:
    """Average pooling by mean-reduction over ``axes`` (global pooling)."""
    axes = tuple(a % x.ndim for a in axes)
    if len(set(axes)) != len(axes):
        raise ValueError(f"avg_pool: duplicate axes {axes}")
    count = int(np.prod([x.shape[a] for a in axes]))
    if count == 0:
        raise ValueError("avg_pool: empty reduction window")
    shape = x.shape

    def vjp(g, needs):
        ge = g
        for a in sorted(axes):
            ge = np.expand_dims(ge, a)
        return (np.broadcast_to(ge / count, shape),)

    return _make(x.data.mean(axis=axes), (x,), vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for x of shape [N, F]."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ValueError(f"linear expects 2D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"linear: feature axis mismatch, input has {x.shape[1]} features "
            f"but weight expects {weight.shape[1]}"
        )
    # einsum keeps identical rows bitwise identical regardless of their batch
    # position; BLAS gemm does not guarantee that for small shapes.
    out = np.einsum("nf,of->no", x.data, weight.data)
    parents: tuple[Tensor, ...]
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data
        parents = (x, weight, bias)
    else:
        parents = (x, weight)
    xd, wd = x.data, weight.data

    def vjp(g, needs):
        dx = np.einsum("no,of->nf", g, wd) if needs[0] else None
        dw = np.einsum("no,nf->of", g, xd) if needs[1] else None
        if bias is not None:
            db = g.sum(axis=0) if needs[2] else None
            return (dx, dw, db)
        return (dx, dw)

    return _make(out, parents, vjp)


# ---------------------------------------------------------------------------
# 3D convolution

_CONV_AXES = ("temporal", "height", "width")


def _conv_out_extent(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def conv3d(
    x: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: tuple[int, int, int] = (1, 1, 1),
    padding: tuple[int, int, int] = (0, 0, 0),
) -> Tensor:
    """3D cross-correlation with zero padding.

    ``x`` is [C, T, H, W] or [N, C, T, H, W]; ``kernel`` is
    [C_out, C_in, Kt, Kh, Kw].  Kernels are applied without flipping.
    Output extents follow ``floor((in + 2p - K) / s) + 1`` per axis.
    """
    if kernel.ndim != 5:
        raise ValueError(f"conv3d kernel must be 5D [O,C,Kt,Kh,Kw], got shape {kernel.shape}")
    squeeze = x.ndim == 4
    if x.ndim not in (4, 5):
        raise ValueError(f"conv3d input must be [C,T,H,W] or [N,C,T,H,W], got shape {x.shape}")
    stride = tuple(int(s) for s in stride)
    padding = tuple(int(p) for p in padding)
    if len(stride) != 3 or any(s < 1 for s in stride):
        raise ValueError(f"conv3d stride must be three positive ints, got {stride}")
    if len(padding) != 3 or any(p < 0 for p in padding):
        raise ValueError(f"conv3d padding must be three non-negative ints, got {padding}")

    xd = x.data if not squeeze else x.data[np.newaxis]
    n, c = xd.shape[0], xd.shape[1]
    co, ci, kt, kh, kw = kernel.shape
    if ci != c:
        raise ValueError(
            f"conv3d: channel axis mismatch, input has {c} channels but kernel expects {ci}"
        )
    ksizes = (kt, kh, kw)
    for ax in range(3):
        padded = xd.shape[2 + ax] + 2 * padding[ax]
        if ksizes[ax] > padded:
            raise ValueError(
                f"conv3d: kernel extent {ksizes[ax]} exceeds padded input extent {padded} "
                f"on the {_CONV_AXES[ax]} axis"
            )
    if bias is not None and bias.shape != (co,):
        raise ValueError(f"conv3d: bias shape {bias.shape} != ({co},)")

    pt, ph, pw = padding
    st, sh, sw = stride
    if any(padding):
        xp = np.pad(xd, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    else:
        xp = xd
    to = _conv_out_extent(xd.shape[2], kt, st, pt)
    ho = _conv_out_extent(xd.shape[3], kh, sh, ph)
    wo = _conv_out_extent(xd.shape[4], kw, sw, pw)
    m = to * ho * wo
    kd = kernel.data
    k2 = kd.reshape(co, c * kt * kh * kw)

    pointwise = kt == kh == kw == 1 and stride == (1, 1, 1)
    if pointwise:
        cols = xp.reshape(n, c, m)
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))
        win = win[:, :, ::st, ::sh, ::sw]
        # [n, c, kt, kh, kw, to, ho, wo] -> [n, c*kt*kh*kw, m] in one copy
        cols = np.ascontiguousarray(win.transpose(0, 1, 5, 6, 7, 2, 3, 4)).reshape(
            n, c * kt * kh * kw, m
        )
    out = np.matmul(k2, cols).reshape(n, co, to, ho, wo)
    if bias is not None:
        out = out + bias.data[:, np.newaxis, np.newaxis, np.newaxis]

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def vjp(g, needs):
        gb = g if not squeeze else g[np.newaxis]
        gr = gb.reshape(n, co, m)
        dx = None
        dk = None
        if needs[1]:
            dk = np.matmul(gr, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kd.shape)
        if needs[0]:
            dcols = np.matmul(k2.T, gr)
            if pointwise:
                dxp = dcols.reshape(xp.shape)
            else:
                dxp = np.zeros_like(xp)
                d6 = dcols.reshape(n, c, kt, kh, kw, to, ho, wo)
                for i in range(kt):
                    for j in range(kh):
                        for k in range(kw):
                            dxp[
                                :, :, i : i + st * to : st, j : j + sh * ho : sh, k : k + sw * wo : sw
                            ] += d6[:, :, i, j, k]
            dx = dxp[
                :,
                :,
                pt : pt + xd.shape[2],
                ph : ph + xd.shape[3],
                pw : pw + xd.shape[4],
            ]
            if squeeze:
                dx = dx[0]
        if bias is not None:
            db = gb.sum(axis=(0, 2, 3, 4)) if needs[2] else None
            return (dx, dk, db)
        return (dx, dk)

    return _make(out if not squeeze else out[0], parents, vjp)


# ---------------------------------------------------------------------------
# batch normalization


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_running_stats: bool | None = None,
) -> Tensor:
    """Per-channel batch normalization over axis 1.

    Training mode normalizes by batch statistics (biased variance) and, when
    ``update_running_stats`` (default: same as ``training``), folds them into
    the running estimates with exponential moving average.  Eval mode
    normalizes by the running estimates.
    """
    if eps <= 0:
        raise ValueError(f"batch_norm epsilon must be > 0, got {eps}")
    if x.ndim < 2:
        raise ValueError(f"batch_norm input must have a channel axis, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(
            f"batch_norm: gamma/beta shapes {gamma.shape}/{beta.shape} must be ({c},)"
        )
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ValueError("batch_norm: running statistics must be per-channel")
    axes = (0,) + tuple(range(2, x.ndim))
    count = int(np.prod([x.shape[a] for a in axes]))
    if count == 0:
        raise ValueError("batch_norm: zero batch")
    if update_running_stats is None:
        update_running_stats = training

    bshape = (1, c) + (1,) * (x.ndim - 2)
    gd = gamma.data.reshape(bshape)
    xd = x.data

    if training:
        mu = xd.mean(axis=axes)
        var = ((xd - mu.reshape(bshape)) ** 2).mean(axis=axes)
        if update_running_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.astype(running_mean.dtype)
            running_var *= 1.0 - momentum
            running_var += momentum * var.astype(running_var.dtype)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu.reshape(bshape)) * inv_std.reshape(bshape)
        out = gd * xhat + beta.data.reshape(bshape)

        def vjp(g, needs):
            dbeta = g.sum(axis=axes) if needs[2] else None
            dgamma = (g * xhat).sum(axis=axes) if needs[1] else None
            dx = None
            if needs[0]:
                dxhat = g * gd
                m1 = dxhat.mean(axis=axes).reshape(bshape)
                m2 = (dxhat * xhat).mean(axis=axes).reshape(bshape)
                dx = inv_std.reshape(bshape) * (dxhat - m1 - xhat * m2)
            return (dx, dgamma, dbeta)

        return _make(out, (x, gamma, beta), vjp)

    inv_std = (1.0 / np.sqrt(running_var + eps)).astype(xd.dtype)
    xhat = (xd - running_mean.reshape(bshape).astype(xd.dtype)) * inv_std.reshape(bshape)
    out = gd * xhat + beta.data.reshape(bshape)

    def vjp(g, needs):
        dbeta = g.sum(axis=axes) if needs[2] else None
        dgamma = (g * xhat).sum(axis=axes) if needs[1] else None
        dx = g * gd * inv_std.reshape(bshape) if needs[0] else None
        return (dx, dgamma, dbeta)

    return _make(out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# numerical gradient oracle


def finite_difference_grad(f: Callable, param: Tensor, eps: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function of ``param``.

    ``f`` must be pure and deterministic; it receives a tensor of the same
    shape as ``param`` and returns a scalar (float or 0-d tensor).  Each
    element i is estimated as (f(p + eps*e_i) - f(p - eps*e_i)) / (2*eps).
    """
    if eps <= 0:
        raise ValueError(f"finite_difference_grad requires eps > 0, got {eps}")

    def evaluate(arr: np.ndarray) -> float:
        result = f(Tensor(arr))
        if isinstance(result, Tensor):
            return float(result.data)
        return float(result)

    base = param.data
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        probe = base.copy().reshape(-1)
        probe[i] += eps
        hi = evaluate(probe.reshape(base.shape))
        probe[i] -= 2 * eps
        lo = evaluate(probe.reshape(base.shape))
        flat[i] = (hi - lo) / (2.0 * eps)
    return Tensor(grad)
