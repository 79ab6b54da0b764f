"""A small dense-tensor engine with reverse-mode differentiation.

Only the operations the imputation network needs are provided. Operations are
recorded on the innermost active :class:`Tape` of the current thread; with no
tape active nothing is recorded, so inference pays no bookkeeping cost::

    with Tape() as tape:
        loss = (w * x).sum()
    backward(loss, tape)
    w.grad
"""

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericError

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Nodes are appended at creation time, which is already a topological order.
    After :meth:`backward`, ``grads`` maps ``id(tensor)`` to the gradient of
    every requires-grad leaf reached from the loss.
    """

    def __init__(self):
        self.nodes = []
        self.grads = {}
        self._leaves = {}
        self._outputs = set()

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def record(self, out, parents, fn):
        self.nodes.append((out, parents, fn))
        self._outputs.add(id(out))

    def backward(self, loss):
        if loss.data.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._outputs and not loss.requires_grad:
            raise ContractError("loss was not produced on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        if id(loss) not in self._outputs:
            leaves[id(loss)] = loss
        for out, parents, fn in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for p, pg in zip(parents, fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                    if key not in self._outputs:
                        leaves[key] = p
        self.grads = {}
        for key, p in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64).reshape(p.shape)
            p.grad = g
            self.grads[key] = g
        self._leaves = leaves
        return self

    def grad(self, tensor):
        return self.grads.get(id(tensor))


def backward(loss, tape=None):
    """Populate ``.grad`` on every requires-grad leaf that ``loss`` depends on."""
    tape = tape if tape is not None else current_tape()
    if tape is None:
        raise ContractError("no tape recorded this loss")
    return tape.backward(loss)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _result(data, parents, fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = False
    tape = current_tape()
    if tape is not None:
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                tape.record(out, parents, fn)
                break
    return out


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    """Float64 array with an optional gradient."""

    __array_priority__ = 100
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        c = float(b)
        return _result(a.data * c, (a,), lambda g: (g * c,))
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, sa), _unbroadcast(g * a.data, sb)),
    )


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.shape, b.shape
    out = a.data / b.data
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, sa), _unbroadcast(-g * out / b.data, sb)),
    )


def tabs(a):
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def matmul(a, b):
    """Matrix product over the last two axes.

    ``b`` may be a plain 2-D weight shared across all leading axes of ``a``;
    otherwise leading axes must match exactly.
    """
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if b.ndim == 2:
        k, n = b.shape
        out = a.data @ b.data

        def fn(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb

        return _result(out, (a, b), fn)
    if a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch mismatch: {a.shape} x {b.shape}")
    out = a.data @ b.data
    return _result(
        out,
        (a, b),
        lambda g: (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g),
    )


def reshape(a, shape):
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {tuple(shape)}") from exc
    return _result(out, (a,), lambda g: (g.reshape(src),))


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def getitem(a, idx):
    src = a.shape
    basic = _is_basic(idx)

    def fn(g):
        full = np.zeros(src)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), fn)


def broadcast_to(a, shape):
    src = a.shape
    out = np.broadcast_to(a.data, shape)
    return _result(out, (a,), lambda g: (_unbroadcast(g, src),))


def tsum(a, axis=None, keepdims=False):
    src = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src),)

    return _result(np.asarray(out), (a,), fn)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def concat_last(parts):
    """Concatenate tensors along the final axis."""
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ContractError("concat_last needs at least one part")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise DimensionError(
                f"concat_last leading dims differ: {parts[0].shape} vs {p.shape}"
            )
    if len(parts) == 1:
        return parts[0]
    widths = [p.shape[-1] for p in parts]
    cuts = np.cumsum(widths)[:-1]
    out = np.concatenate([p.data for p in parts], axis=-1)
    return _result(out, tuple(parts), lambda g: tuple(np.split(g, cuts, axis=-1)))


def softmax_last(x):
    """Softmax over the last axis, with max subtraction."""
    x = _wrap(x)
    if np.isnan(x.data).any():
        raise NumericError("NaN input to softmax")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), fn)


LN_EPS = 1e-5


def layer_norm(x, gamma, beta, eps=LN_EPS):
    """Normalize each trailing row to zero mean / unit variance, then scale and shift."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.shape}, {beta.shape} do not match width {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def fn(g):
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gamma, beta), fn)


def dropout(x, p, training, rng=None):
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an rng stream")
    keep = (rng.random(x.shape) >= p) * (1.0 / (1.0 - p))
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


def linear(x, weight, bias=None):
    """``x @ weight + bias`` over the last axis, as a single recorded op."""
    x, weight = _wrap(x), _wrap(weight)
    k, n = weight.shape
    if x.shape[-1] != k:
        raise DimensionError(f"linear shape mismatch: {x.shape} x {weight.shape}")
    if n == 1:
        # BLAS gemv rounds differently depending on the row's position; a
        # row-wise reduction does not, which keeps outputs equivariant to row order
        out = (x.data * weight.data[:, 0]).sum(axis=-1, keepdims=True)
    else:
        out = x.data @ weight.data
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (n,):
            raise DimensionError(f"bias shape {bias.shape} does not match output width {n}")
        out = out + bias.data

    def fn(g):
        g2 = g.reshape(-1, n)
        gx = g @ weight.data.T
        gw = x.data.reshape(-1, k).T @ g2
        return (gx, gw) if bias is None else (gx, gw, g2.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, fn)


# [B,T,F,3,H,dk] -> [3,B,groups,H,S,dk] for each attention axis
_QKV_PERM = {"temporal": (3, 0, 2, 4, 1, 5), "feature": (3, 0, 1, 4, 2, 5)}
# [B,groups,H,S,dk] -> [B,T,F,H,dk]
_CTX_PERM = {"temporal": (0, 3, 1, 2, 4), "feature": (0, 1, 3, 2, 4)}


def _row_sum(x):
    return np.einsum("...j->...", x)[..., None]


def _grouped_softmax(scores):
    """Softmax over the last axis of ``[..., S, S]`` score blocks.

    Subtracts one max per block instead of per row (any per-row constant is
    exact for softmax); rows that underflow fall back to per-row maxima.
    Row sums go through ``einsum``: as fast as a matmul with a ones vector,
    but its rounding does not depend on where a row sits in the array.
    """
    lead = scores.shape[:-2]
    block_max = scores.reshape(*lead, -1).max(axis=-1)[..., None, None]
    e = np.exp(scores - block_max)
    denom = _row_sum(e)
    if not (denom > 1e-280).all():
        if np.isnan(denom).any():
            raise NumericError("NaN attention scores")
        e = np.exp(scores - scores.max(axis=-1, keepdims=True))
        denom = _row_sum(e)
    e /= denom
    return e


def _key_order(k, v):
    """Permutation of the key axis that depends only on key/value content.

    Sorting keys before the probability-weighted sums fixes the summation
    order, so relabelling the tokens reorders the output bit for bit. The
    primary key is the first key component; content ties between different
    rows fall back to a full lexicographic sort.
    """
    order = np.argsort(k[..., 0], axis=-1, kind="stable")
    k0 = np.take_along_axis(k[..., 0], order, -1)
    tied = k0[..., 1:] == k0[..., :-1]
    if tied.any():
        rows = _take_rows(np.concatenate([k, v], axis=-1), order)
        if (tied & np.any(rows[..., 1:, :] != rows[..., :-1, :], axis=-1)).any():
            # lexsort treats its last key as primary
            keys = np.concatenate([k, v], axis=-1)[..., ::-1]
            order = np.lexsort(np.moveaxis(keys, -1, 0), axis=-1)
    return order


def _take_rows(x, order):
    """``x[..., order, :]`` per leading index; a flat gather beats take_along_axis here."""
    S = order.shape[-1]
    base = np.arange(order.size // S).reshape(*order.shape[:-1], 1) * S
    return x.reshape(-1, x.shape[-1])[(order + base).ravel()].reshape(x.shape)


def _put_rows(x, order):
    """Inverse of :func:`_take_rows`."""
    S = order.shape[-1]
    base = np.arange(order.size // S).reshape(*order.shape[:-1], 1) * S
    out = np.empty((order.size, x.shape[-1]))
    out[(order + base).ravel()] = x.reshape(-1, x.shape[-1])
    return out.reshape(x.shape)


def attention_core(qkv, axis, n_heads, p_drop=0.0, training=False, rng=None, return_probs=True):
    """Scaled dot-product multi-head attention along one axis of a 4-D token grid.

    ``qkv`` is ``[B,T,F,3d]`` holding queries, keys and values side by side.
    Attention runs over ``T`` (``axis="temporal"``) or ``F`` (``"feature"``)
    with the other axis folded into the batch. Returns ``(context, probs)``
    where ``context`` is ``[B,T,F,d]`` and ``probs`` is the pre-dropout
    ``[B, groups, heads, S, S]`` probability array (``None`` unless
    ``return_probs``).

    Along the feature axis keys are visited in a content-defined order, which
    makes the output exactly equivariant to feature relabelling.
    """
    qkv = _wrap(qkv)
    B, T, F, d3 = qkv.shape
    if d3 % 3 or (d3 // 3) % n_heads:
        raise DimensionError(f"qkv width {d3} is not 3*d with d divisible by {n_heads}")
    if not 0.0 <= p_drop < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p_drop}")
    d = d3 // 3
    dk = d // n_heads
    perm = _QKV_PERM[axis]
    # contiguous copies keep every batched matmul on the BLAS path
    parts = np.ascontiguousarray(qkv.data.reshape(B, T, F, 3, n_heads, dk).transpose(perm))
    q, k, v = parts[0], parts[1], parts[2]
    order = _key_order(k, v) if axis == "feature" else None
    if order is not None:
        k, v = _take_rows(k, order), _take_rows(v, order)
    scale = 1.0 / np.sqrt(dk)
    scores = q @ np.swapaxes(k, -1, -2)
    scores *= scale
    probs = _grouped_softmax(scores)
    if training and p_drop > 0.0:
        keep = (rng.random(probs.shape) >= p_drop) * (1.0 / (1.0 - p_drop))
        used = probs * keep
    else:
        keep = None
        used = probs
    cperm = _CTX_PERM[axis]
    out = (used @ v).transpose(cperm).reshape(B, T, F, d)

    def fn(g):
        gh = np.ascontiguousarray(g.reshape(B, T, F, n_heads, dk).transpose(tuple(np.argsort(cperm))))
        g_used = gh @ np.swapaxes(v, -1, -2)
        gv = np.swapaxes(used, -1, -2) @ gh
        gp = g_used if keep is None else g_used * keep
        gs = gp - _row_sum(gp * probs)
        gs *= probs
        gs *= scale
        gk = np.swapaxes(gs, -1, -2) @ q
        if order is not None:
            gk, gv = _put_rows(gk, order), _put_rows(gv, order)
        gqkv = np.empty((B, T, F, 3, n_heads, dk))
        gview = gqkv.transpose(perm)
        gview[0] = gs @ k
        gview[1] = gk
        gview[2] = gv
        return (gqkv.reshape(B, T, F, d3),)

    if return_probs and order is not None:
        # back to the caller's key order
        returned = np.swapaxes(_put_rows(np.swapaxes(probs, -1, -2), order), -1, -2)
    else:
        returned = probs if return_probs else None
    return _result(out, (qkv,), fn), returned


# -- gradient checking ------------------------------------------------------


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def relative_errors(f, x, h=1e-5):
    """Per-element relative errors between analytic and central-difference gradients.

    ``f`` is called as ``f(*xs)`` and must return a scalar tensor. Returns one
    array per input, shaped like that input.
    """
    xs = _as_list(x)
    saved = [(t.requires_grad, t.grad) for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = f(*xs)
    backward(out, tape)
    analytic = [
        np.zeros(t.shape) if t.grad is None else np.array(t.grad, copy=True) for t in xs
    ]
    errors = []
    for t, ga in zip(xs, analytic):
        base = t.data
        num = np.zeros(t.shape)
        for idx in np.ndindex(*t.shape):
            plus = base.copy()
            plus[idx] += h
            t.data = plus
            fp = float(f(*xs).data)
            minus = base.copy()
            minus[idx] -= h
            t.data = minus
            fm = float(f(*xs).data)
            num[idx] = (fp - fm) / (2.0 * h)
        t.data = base
        errors.append(np.abs(ga - num) / np.maximum(1e-8, np.abs(ga) + np.abs(num)))
    for t, (rg, gr) in zip(xs, saved):
        t.requires_grad, t.grad = rg, gr
    return errors


def grad_check(f, x, h=1e-5):
    """Max relative error of the analytic gradient against central differences."""
    errs = relative_errors(f, x, h)
    return max((float(e.max()) if e.size else 0.0) for e in errs)


# -- optimizer --------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """One bias-corrected Adam update.

    Parameters are rebound to fresh arrays rather than mutated, so snapshots of
    earlier ``.data`` arrays stay valid.
    """
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    if len(grads) != len(params) or len(state.m) != len(params):
        raise DimensionError("params, grads and moment buffers differ in length")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise DimensionError(
                f"adam shape mismatch for parameter {p.name or i}: {p.shape} vs grad {g.shape}"
            )
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
