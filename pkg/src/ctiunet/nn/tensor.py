"""Reverse-mode autodiff over dense numpy arrays.

The carrier type is a rank-4 (batch, channel, height, width) array; biases and
normalization affines are rank-1 per-channel vectors, and reductions produce
rank-0 scalars. Every operation records a backward closure on a tape, so
calling ``backward()`` on a scalar result accumulates gradients into every
reachable :class:`Parameter`. Accumulation order is fixed (reverse topological
order of construction), which makes repeated runs bit-identical.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError

_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording (inference-only passes)."""

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
    """A numpy array plus the tape bookkeeping needed for backward passes."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        if _grad_enabled:
            self._parents = parents
            self._backward = backward
        else:
            self._parents = ()
            self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Run the tape backwards from this node.

        ``grad`` defaults to ones, which is the usual seeding for a scalar
        loss; an explicit output gradient is accepted for op-level tests.
        """
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        if grad is None:
            grad = np.ones_like(self.data)
        self._accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in topo:
            if isinstance(node, Parameter) and node.grad is not None:
                node.has_grad = True

    # -- elementwise arithmetic -------------------------------------------

    def _wrap(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._wrap(other)
        _check_same_shape("add", self, other)
        out = Tensor(self.data + other.data, parents=(self, other))
        if out._parents:
            def _bw(g, a=self, b=other):
                a._accumulate(g)
                b._accumulate(g)
            out._backward = _bw
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = self._wrap(other)
        _check_same_shape("mul", self, other)
        out = Tensor(self.data * other.data, parents=(self, other))
        if out._parents:
            def _bw(g, a=self, b=other):
                a._accumulate(g * b.data)
                b._accumulate(g * a.data)
            out._backward = _bw
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))
        if out._parents:
            def _bw(g, a=self):
                a._accumulate(-g)
            out._backward = _bw
        return out

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __truediv__(self, other):
        other = self._wrap(other)
        _check_same_shape("div", self, other)
        out = Tensor(self.data / other.data, parents=(self, other))
        if out._parents:
            def _bw(g, a=self, b=other, y=out.data):
                a._accumulate(g / b.data)
                b._accumulate(-g * y / b.data)
            out._backward = _bw
        return out

    # -- reductions and pointwise functions -------------------------------

    def sum(self):
        out = Tensor(np.asarray(self.data.sum(), dtype=self.data.dtype), parents=(self,))
        if out._parents:
            def _bw(g, a=self):
                a._accumulate(np.broadcast_to(g, a.data.shape))
            out._backward = _bw
        return out

    def mean(self):
        n = self.data.size
        out = Tensor(np.asarray(self.data.mean(), dtype=self.data.dtype), parents=(self,))
        if out._parents:
            def _bw(g, a=self, n=n):
                a._accumulate(np.broadcast_to(g / n, a.data.shape))
            out._backward = _bw
        return out

    def log(self):
        out = Tensor(np.log(self.data), parents=(self,))
        if out._parents:
            def _bw(g, a=self):
                a._accumulate(g / a.data)
            out._backward = _bw
        return out

    def clamp(self, lo, hi):
        """Clip values to [lo, hi]; gradient is zero where the clip engaged."""
        inside = (self.data >= lo) & (self.data <= hi)
        out = Tensor(np.clip(self.data, lo, hi), parents=(self,))
        if out._parents:
            def _bw(g, a=self, m=inside):
                a._accumulate(g * m)
            out._backward = _bw
        return out


class Parameter(Tensor):
    """A named, trainable tensor with a persistent gradient accumulator."""

    __slots__ = ("name", "has_grad")

    def __init__(self, data, name: str):
        super().__init__(np.array(data))
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.has_grad = False

    def zero_grad(self):
        self.grad[...] = 0
        self.has_grad = False


def _check_same_shape(opname, a, b):
    if a.data.shape != b.data.shape:
        raise ConfigurationError(
            f"{opname}: operand shapes {a.data.shape} and {b.data.shape} differ; "
            "implicit broadcasting is not allowed"
        )


def _check_rank4(opname, t):
    if t.data.ndim != 4:
        raise ConfigurationError(f"{opname}: expected a rank-4 (B,C,H,W) tensor, got rank {t.data.ndim}")


# -- activations -----------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, np.zeros((), dtype=x.data.dtype)), parents=(x,))
    if out._parents:
        def _bw(g, a=x, m=mask):
            a._accumulate(g * m)
        out._backward = _bw
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function computed in the overflow-free branch form."""
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    y[~pos] = e / (1.0 + e)
    out = Tensor(y, parents=(x,))
    if out._parents:
        def _bw(g, a=x, y=y):
            a._accumulate(g * y * (1.0 - y))
        out._backward = _bw
    return out


# -- convolution -----------------------------------------------------------


def _same_pad(extent, kernel, stride):
    out = -(-extent // stride)  # ceil division
    total = max((out - 1) * stride + kernel - extent, 0)
    return total // 2, total - total // 2


def _im2col(xp, kh, kw, sh, sw):
    # (B,C,Hp,Wp) -> columns (B,Ho,Wo,C*kh*kw)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]
    b, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho, wo, c * kh * kw)


def conv2d(x: Tensor, weight: Parameter, bias: Parameter, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2-D cross-correlation over (B,C,H,W) with per-output-channel bias.

    ``padding`` is a policy: "same" (output extent = ceil(extent/stride),
    asymmetric zero pad with the extra row/column at the far edge) or "valid".
    """
    _check_rank4("conv2d", x)
    if weight.data.ndim != 4:
        raise ConfigurationError(f"conv2d: weight must be rank-4 (Cout,Cin,kh,kw), got rank {weight.data.ndim}")
    b_, cin, h, w = x.data.shape
    cout, wcin, kh, kw = weight.data.shape
    if wcin != cin:
        raise ConfigurationError(
            f"conv2d: input has {cin} channels but weight expects {wcin}"
        )
    if bias.data.shape != (cout,):
        raise ConfigurationError(
            f"conv2d: bias shape {bias.data.shape} does not match {cout} output channels"
        )
    if padding == "same":
        pt, pb = _same_pad(h, kh, stride)
        pl, pr = _same_pad(w, kw, stride)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        raise ConfigurationError(f"conv2d: unknown padding policy {padding!r}")
    if h + pt + pb < kh or w + pl + pr < kw:
        raise ConfigurationError(
            f"conv2d: kernel {kh}x{kw} exceeds padded input extent {h + pt + pb}x{w + pl + pr}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = _im2col(xp, kh, kw, stride, stride)
    bsz, ho, wo, k = cols.shape
    wmat = weight.data.reshape(cout, k)
    y = cols.reshape(-1, k) @ wmat.T + bias.data
    out = Tensor(np.ascontiguousarray(y.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)),
                 parents=(x, weight, bias))
    if out._parents:
        def _bw(g, x=x, weight=weight, bias=bias, cols=cols, wmat=wmat,
                pads=(pt, pb, pl, pr), dims=(h, w, kh, kw, stride, bsz, ho, wo, cout, k)):
            h, w, kh, kw, s, bsz, ho, wo, cout, k = dims
            pt, pb, pl, pr = pads
            g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
            bias._accumulate(g2.sum(axis=0))
            weight._accumulate((g2.T @ cols.reshape(-1, k)).reshape(weight.data.shape))
            dcols = (g2 @ wmat).reshape(bsz, ho, wo, -1, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros((bsz, dcols.shape[1], h + pt + pb, w + pl + pr), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j]
            x._accumulate(dxp[:, :, pt:pt + h, pl:pl + w])
        out._backward = _bw
    return out


# -- spatial resampling ----------------------------------------------------


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; gradient routes to the argmax of each
    window, ties broken toward the first element in row-major scan order."""
    _check_rank4("maxpool2", x)
    b, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ConfigurationError(f"maxpool2: spatial extents must be even, got {h}x{w}")
    win = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = Tensor(np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], parents=(x,))
    if out._parents:
        def _bw(g, x=x, idx=idx, dims=(b, c, h, w)):
            b, c, h, w = dims
            dwin = np.zeros((b, c, h // 2, w // 2, 4), dtype=g.dtype)
            np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
            dx = dwin.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
            x._accumulate(dx)
        out._backward = _bw
    return out


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbor x2 upsampling; backward sums each 2x2 block."""
    _check_rank4("upsample_nearest2", x)
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3), parents=(x,))
    if out._parents:
        def _bw(g, x=x):
            b, c, h2, w2 = g.shape
            x._accumulate(g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))
        out._backward = _bw
    return out


# -- channel plumbing ------------------------------------------------------


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _check_rank4("concat_channels", a)
    _check_rank4("concat_channels", b)
    sa, sb = a.data.shape, b.data.shape
    if sa[0] != sb[0] or sa[2:] != sb[2:]:
        raise ConfigurationError(
            f"concat_channels: batch/spatial extents differ: {sa} vs {sb}"
        )
    out = Tensor(np.concatenate([a.data, b.data], axis=1), parents=(a, b))
    if out._parents:
        def _bw(g, a=a, b=b, ca=sa[1]):
            a._accumulate(g[:, :ca])
            b._accumulate(g[:, ca:])
        out._backward = _bw
    return out


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _check_rank4("slice_channels", x)
    out = Tensor(x.data[:, start:stop].copy(), parents=(x,))
    if out._parents:
        def _bw(g, x=x, start=start, stop=stop):
            dx = np.zeros_like(x.data)
            dx[:, start:stop] = g
            x._accumulate(dx)
        out._backward = _bw
    return out


# -- normalization ---------------------------------------------------------


def instance_norm(x: Tensor, scale: Parameter, shift: Parameter, eps: float = 1e-5) -> Tensor:
    """Standardize each (batch, channel) plane, then apply per-channel affine."""
    _check_rank4("instance_norm", x)
    if eps <= 0:
        raise ConfigurationError("instance_norm: eps must be positive")
    c = x.data.shape[1]
    if scale.data.shape != (c,) or shift.data.shape != (c,):
        raise ConfigurationError(
            f"instance_norm: affine shapes {scale.data.shape}/{shift.data.shape} "
            f"do not match {c} channels"
        )
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    var = x.data.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * scale.data[None, :, None, None] + shift.data[None, :, None, None],
                 parents=(x, scale, shift))
    if out._parents:
        def _bw(g, x=x, scale=scale, shift=shift, xhat=xhat, inv=inv):
            n = xhat.shape[2] * xhat.shape[3]
            shift._accumulate(g.sum(axis=(0, 2, 3)))
            scale._accumulate((g * xhat).sum(axis=(0, 2, 3)))
            gs = g * scale.data[None, :, None, None]
            m1 = gs.mean(axis=(2, 3), keepdims=True)
            m2 = (gs * xhat).mean(axis=(2, 3), keepdims=True)
            x._accumulate(inv * (gs - m1 - xhat * m2))
        out._backward = _bw
    return out


def assert_finite(t: Tensor, label: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"{label} contains non-finite values")
    return t
