"""Dense-tensor algebra with reverse-mode automatic differentiation.

The engine is deliberately small: a Tensor wrapping a contiguous numpy
array, a Tape that records operations in creation order (which is already
a topological order), and the handful of primitives the hiding network
needs. Arrays are float32 by default; float64 is available for gradient
verification. Broadcasting is restricted to scalar-with-tensor so every
backward rule stays trivially checkable.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "DimensionError",
    "ContractError",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "exp_bounded",
    "leaky_relu",
    "abs_val",
    "sum_all",
    "clamp_ste",
    "concat_channels",
    "split_channels",
    "channel_slice",
    "stack_leading",
    "take_leading",
    "expand_leading",
    "conv2d",
    "pool_avg",
    "AdamState",
    "adam_step",
    "Module",
    "record_op",
    "gradcheck",
]


class DimensionError(ValueError):
    """Shapes of the operands do not satisfy an operation's contract."""


class ContractError(ValueError):
    """An operation was called outside its stated preconditions."""


_FLOAT_TYPES = (np.float32, np.float64)


class Tensor:
    """A shaped view over a flat row-major float array.

    Channel-first layout for images (C, H, W); an optional leading axis
    batches independent items. Tensors are treated as immutable after
    creation except for training-time weight updates, which happen on a
    single thread through adam_step.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError("item() requires a scalar tensor")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{flags})"


class _OpRecord:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Creation-ordered record of differentiable operations.

    Appending in forward order guarantees a topological order, so the
    backward sweep is a single reversed pass that touches each node once.
    The tape is confined to one training thread.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def backward(self, loss):
        """Single reversed sweep; the tape is consumed by the call."""
        if loss.data.size != 1:
            raise ContractError("backward requires a scalar loss")
        if loss._tape is not self:
            raise ContractError("loss was not recorded on this tape")
        leaves = []
        for rec in self.records:
            for inp in rec.inputs:
                if isinstance(inp, Tensor) and inp.requires_grad and inp._tape is None:
                    leaves.append(inp)
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self.records):
            gout = rec.out.grad
            if gout is not None:
                grads = rec.backward_fn(gout)
                for inp, g in zip(rec.inputs, grads):
                    if g is None or not isinstance(inp, Tensor):
                        continue
                    if inp.requires_grad:
                        inp.accumulate_grad(g)
                if rec.out is not loss:
                    rec.out.grad = None  # consumers already swept
            # drop saved arrays eagerly; keeps peak memory flat
            rec.out = None
            rec.inputs = None
            rec.backward_fn = None
        self.records.clear()
        # Leaves on the tape the sweep never reached carry zero gradient.
        for leaf in leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)


_TAPE_STACK = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record_op(out, inputs, backward_fn):
    """Register a primitive's output on the active tape.

    `backward_fn(gout)` must return one gradient array (or None) per
    entry of `inputs`. Recording only happens when a tape is active and
    some input requires a gradient; otherwise the output is detached.
    """
    tape = _active_tape()
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    if tape is not None and needs:
        out.requires_grad = True
        out._tape = tape
        tape.records.append(_OpRecord(out, inputs, backward_fn))
    return out


def backward(loss):
    """Populate gradients of every reachable leaf of a scalar loss."""
    if not isinstance(loss, Tensor):
        raise ContractError("loss must be a Tensor")
    if loss._tape is None:
        raise ContractError("loss is not attached to a tape")
    loss._tape.backward(loss)


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

def _coerce_pair(a, b):
    """Resolve the scalar-with-tensor / same-shape broadcast contract."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        if a.shape != b.shape:
            raise DimensionError(
                f"elementwise op needs identical shapes, got {a.shape} vs {b.shape}")
        return a, b, None
    if isinstance(a, Tensor) and isinstance(b, (int, float)):
        return a, None, float(b)
    if isinstance(b, Tensor) and isinstance(a, (int, float)):
        return b, None, float(a)
    raise ContractError("operands must be Tensor and Tensor/scalar")


def add(a, b):
    x, y, c = _coerce_pair(a, b)
    if y is not None:
        out = Tensor(x.data + y.data)
        return record_op(out, [x, y], lambda g: (g, g))
    out = Tensor(x.data + c)
    return record_op(out, [x], lambda g: (g,))


def sub(a, b):
    if isinstance(a, (int, float)):
        return add(neg(b), a)
    x, y, c = _coerce_pair(a, b)
    if y is not None:
        out = Tensor(x.data - y.data)
        return record_op(out, [x, y], lambda g: (g, -g))
    out = Tensor(x.data - c)
    return record_op(out, [x], lambda g: (g,))


def mul(a, b):
    x, y, c = _coerce_pair(a, b)
    if y is not None:
        out = Tensor(x.data * y.data)
        xd, yd = x.data, y.data
        return record_op(out, [x, y], lambda g: (g * yd, g * xd))
    out = Tensor(x.data * c)
    return record_op(out, [x], lambda g: (g * c,))


def neg(x):
    out = Tensor(-x.data)
    return record_op(out, [x], lambda g: (-g,))


def scale(x, s):
    return mul(x, float(s))


def exp_bounded(x, bound):
    """exp(bound * tanh(x)): a saturating exponential in (e^-bound, e^bound).

    tanh is the smooth odd squashing map; the bound keeps the
    multiplicative coupling terms invertible in float arithmetic no
    matter how large the subnet outputs grow.
    """
    b = float(bound)
    t = np.tanh(x.data)
    out = Tensor(np.exp(b * t))
    od = out.data
    return record_op(out, [x], lambda g: (g * od * b * (1.0 - t * t),))


def leaky_relu(x, slope=0.2):
    s = float(slope)
    mask = x.data >= 0
    out = Tensor(np.where(mask, x.data, s * x.data))
    return record_op(out, [x], lambda g: (np.where(mask, g, s * g),))


def abs_val(x):
    sgn = np.sign(x.data)
    out = Tensor(np.abs(x.data))
    return record_op(out, [x], lambda g: (g * sgn,))


def sum_all(x):
    out = Tensor(np.asarray(x.data.sum(), dtype=x.data.dtype))
    shp, dt = x.shape, x.data.dtype
    return record_op(out, [x], lambda g: (np.full(shp, g, dtype=dt),))


def clamp_ste(x, lo=0.0, hi=1.0):
    """Clamp with a straight-through gradient inside [lo, hi]."""
    mask = (x.data >= lo) & (x.data <= hi)
    out = Tensor(np.clip(x.data, lo, hi))
    return record_op(out, [x], lambda g: (np.where(mask, g, 0.0),))


# ---------------------------------------------------------------------------
# shape primitives
# ---------------------------------------------------------------------------

def _channel_axis(t):
    if t.data.ndim == 3:
        return 0
    if t.data.ndim == 4:
        return 1
    raise DimensionError(f"expected a 3-D or 4-D tensor, got shape {t.shape}")


def concat_channels(a, b):
    ax = _channel_axis(a)
    if _channel_axis(b) != ax:
        raise DimensionError("concat operands must have the same rank")
    if a.shape[:ax] + a.shape[ax + 1:] != b.shape[:ax] + b.shape[ax + 1:]:
        raise DimensionError(
            f"concat operands must match outside the channel axis: {a.shape} vs {b.shape}")
    ca = a.shape[ax]
    out = Tensor(np.concatenate([a.data, b.data], axis=ax))

    def bwd(g):
        ga, gb = np.split(g, [ca], axis=ax)
        return ga, gb

    return record_op(out, [a, b], bwd)


def split_channels(x, at):
    """Split on the channel axis; exact inverse of concat_channels."""
    ax = _channel_axis(x)
    c = x.shape[ax]
    if not 0 < at < c:
        raise DimensionError(f"split point {at} outside (0, {c})")
    return channel_slice(x, 0, at), channel_slice(x, at, c)


def channel_slice(x, lo, hi):
    """Copy channels [lo, hi); empty ranges are allowed."""
    ax = _channel_axis(x)
    idx = [slice(None)] * x.data.ndim
    idx[ax] = slice(lo, hi)
    idx = tuple(idx)
    out = Tensor(x.data[idx].copy())
    shp, dt = x.shape, x.data.dtype

    def bwd(g):
        full = np.zeros(shp, dtype=dt)
        full[idx] = g
        return (full,)

    return record_op(out, [x], bwd)


def stack_leading(tensors):
    """Stack equal-shape tensors along a new leading (batch) axis."""
    if not tensors:
        raise ContractError("stack_leading needs at least one tensor")
    shp = tensors[0].shape
    for t in tensors:
        if t.shape != shp:
            raise DimensionError("stack_leading requires equal shapes")
    out = Tensor(np.stack([t.data for t in tensors], axis=0))
    return record_op(out, list(tensors), lambda g: tuple(g[i] for i in range(len(tensors))))


def take_leading(x, i):
    """Select item i from the leading axis."""
    n = x.shape[0]
    if not 0 <= i < n:
        raise ContractError(f"index {i} outside leading axis of length {n}")
    out = Tensor(x.data[i].copy())
    shp, dt = x.shape, x.data.dtype

    def bwd(g):
        full = np.zeros(shp, dtype=dt)
        full[i] = g
        return (full,)

    return record_op(out, [x], bwd)


def expand_leading(x, n):
    """Replicate a tensor n times along a new leading axis."""
    out = Tensor(np.broadcast_to(x.data[None], (n,) + x.shape).copy())
    return record_op(out, [x], lambda g: (g.sum(axis=0),))


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def conv2d(x, w, b=None, stride=(1, 1), pad=(0, 0)):
    """2-D cross-correlation with zero padding.

    x: (C_in, H, W) or (B, C_in, H, W); w: (C_out, C_in, kh, kw);
    b: (C_out,) or None. Output spatial dims follow the usual
    floor((H + 2p - k) / s) + 1 rule. Differentiable in x, w and b.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise DimensionError(f"conv2d input must be 3-D or 4-D, got {x.shape}")
    if w.data.ndim != 4:
        raise DimensionError(f"conv2d kernel must be 4-D, got {w.shape}")
    B, Cin, H, W = xd.shape
    Cout, CinW, kh, kw = w.data.shape
    if Cin != CinW:
        raise DimensionError(f"input has {Cin} channels but kernel expects {CinW}")
    sh, sw = stride
    ph, pw = pad
    if H + 2 * ph < kh or W + 2 * pw < kw:
        raise DimensionError("padded input smaller than the kernel")
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1

    if ph or pw:
        xp = np.zeros((B, Cin, H + 2 * ph, W + 2 * pw), dtype=xd.dtype)
        xp[:, :, ph:ph + H, pw:pw + W] = xd
    else:
        xp = xd

    # im2col: a few strided slice copies beat fancy indexing at these sizes
    def im2col(src, c, ho, wo):
        cols = np.empty((B, c, kh, kw, ho, wo), dtype=src.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = src[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
        return cols.reshape(B, c * kh * kw, ho * wo)

    w2 = w.data.reshape(Cout, Cin * kh * kw)
    out_d = np.matmul(w2, im2col(xp, Cin, Ho, Wo))  # (B, Cout, Ho*Wo)
    if b is not None:
        out_d += b.data.reshape(1, Cout, 1)
    out_d = out_d.reshape(B, Cout, Ho, Wo)
    out = Tensor(out_d[0] if squeeze else out_d)

    def bwd(g):
        # cols are rebuilt from the retained input; cheaper than keeping
        # the kh*kw-fold expansion alive on the tape
        g4 = g[None] if squeeze else g
        g2 = g4.reshape(B, Cout, Ho * Wo)
        cols2 = im2col(xp, Cin, Ho, Wo)
        grad_w = np.matmul(g2, cols2.transpose(0, 2, 1)).sum(axis=0)
        grad_w = grad_w.reshape(Cout, Cin, kh, kw)
        grad_b = g2.sum(axis=(0, 2)) if b is not None else None
        if sh == 1 and sw == 1 and ph < kh and pw < kw:
            # grad_x as a flipped-kernel convolution of g: one GEMM over
            # Cout*kh*kw columns instead of a Cin-sized scatter
            gp = np.zeros((B, Cout, Ho + 2 * (kh - 1 - ph), Wo + 2 * (kw - 1 - pw)),
                          dtype=g4.dtype)
            gp[:, :, kh - 1 - ph:kh - 1 - ph + Ho, kw - 1 - pw:kw - 1 - pw + Wo] = g4
            wf = np.ascontiguousarray(
                w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            ).reshape(Cin, Cout * kh * kw)
            gx = np.matmul(wf, im2col_g(gp)).reshape(B, Cin, H, W)
        else:
            gcols = np.matmul(w2.T, g2).reshape(B, Cin, kh, kw, Ho, Wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * Ho:sh, j:j + sw * Wo:sw] += gcols[:, :, i, j]
            gx = gxp[:, :, ph:ph + H, pw:pw + W] if (ph or pw) else gxp
        gx = gx[0] if squeeze else gx
        if b is not None:
            return gx, grad_w, grad_b
        return gx, grad_w

    def im2col_g(src):
        cols = np.empty((B, Cout, kh, kw, H, W), dtype=src.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = src[:, :, i:i + H, j:j + W]
        return cols.reshape(B, Cout * kh * kw, H * W)

    inputs = [x, w] if b is None else [x, w, b]
    return record_op(out, inputs, bwd)


def pool_avg(x, factor):
    """Non-overlapping average pooling by an integer factor (fh, fw)."""
    fh, fw = factor
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    B, C, H, W = xd.shape
    if H % fh or W % fw:
        raise DimensionError(f"spatial dims {H}x{W} not divisible by pool factor {factor}")
    Ho, Wo = H // fh, W // fw
    out_d = xd.reshape(B, C, Ho, fh, Wo, fw).mean(axis=(3, 5))
    out = Tensor(out_d[0] if squeeze else out_d)
    inv = 1.0 / (fh * fw)

    def bwd(g):
        g4 = g[None] if squeeze else g
        gx = np.broadcast_to(
            g4[:, :, :, None, :, None] * inv, (B, C, Ho, fh, Wo, fw)
        ).reshape(B, C, H, W)
        return (gx[0] if squeeze else gx.copy(),)

    return record_op(out, [x], bwd)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)


def adam_step(params, grads, state):
    """One Adam update with bias correction; mutates params in place."""
    if len(params) != len(grads):
        raise ContractError("params and grads length mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            raise ContractError("missing gradient for a parameter")
        if g.shape != p.data.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
    return params, state


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

class Module:
    """Bare-bones parameter registry with recursive traversal."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def gradcheck(fn, tensors, h=1e-6, rtol=1e-5, max_entries=None, seed=0):
    """Compare tape gradients of fn(*tensors) against central differences.

    All inputs must be float64. Every coordinate is probed unless
    max_entries caps the per-tensor sample (for expensive end-to-end
    functions). Returns the worst relative error seen; raises
    AssertionError when it exceeds rtol.
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ContractError("gradcheck requires float64 tensors")
        t.grad = None

    with Tape() as tape:
        loss = fn(*tensors)
    tape.backward(loss)
    analytic = [None if t.grad is None else t.grad.copy() for t in tensors]
    rng = np.random.default_rng(seed)

    worst = 0.0
    for t, an in zip(tensors, analytic):
        if an is None:
            an = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        an_flat = an.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            coords = rng.choice(flat.size, size=max_entries, replace=False)
        else:
            coords = range(flat.size)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*tensors).item()
            flat[i] = orig - h
            fm = fn(*tensors).item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            err = abs(an_flat[i] - num) / max(1.0, abs(an_flat[i]))
            worst = max(worst, err)
    if worst > rtol:
        raise AssertionError(f"gradcheck failed: relative error {worst:.3e} > {rtol:.1e}")
    return worst
