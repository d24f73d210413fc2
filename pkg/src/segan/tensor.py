"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op builds a node holding its value, references to the parents that
require gradients, and a closure mapping the output gradient to parent
gradients. ``backward`` walks the graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels

_grad_enabled = True
# When a list, piecewise ops append their branch pattern so gradient checks
# can tell when a finite-difference step crossed a kink.
_kink_log: list | None = None


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A node in the differentiation graph.

    ``data`` is always a float64 ndarray. ``grad`` is filled by
    :meth:`backward` for leaves that require gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- graph construction -----------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        if _grad_enabled:
            live = tuple(p for p in parents if p.requires_grad)
            if live:
                mask = tuple(p.requires_grad for p in parents)

                def bw(g, _bw=backward, _mask=mask):
                    grads = _bw(g)
                    return tuple(gr for gr, m in zip(grads, _mask) if m)

                return Tensor(data, True, _parents=live, _backward=bw)
        return Tensor(data)

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        try:
            out = self.data + other.data
        except ValueError as exc:
            raise ValueError(f"add: incompatible shapes {self.shape} and {other.shape}") from exc
        sa, sb = self.shape, other.shape
        return Tensor._make(out, (self, other),
                            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    __radd__ = __add__

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        try:
            out = self.data - other.data
        except ValueError as exc:
            raise ValueError(f"sub: incompatible shapes {self.shape} and {other.shape}") from exc
        sa, sb = self.shape, other.shape
        return Tensor._make(out, (self, other),
                            lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

    def __rsub__(self, other):
        return Tensor(other) - self

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self.data, other.data
        try:
            out = a * b
        except ValueError as exc:
            raise ValueError(f"mul: incompatible shapes {self.shape} and {other.shape}") from exc
        return Tensor._make(out, (self, other),
                            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        a, b = self.data, other.data
        if np.any(b == 0):
            raise ZeroDivisionError("div: zero in denominator")
        out = a / b
        return Tensor._make(out, (self, other),
                            lambda g: (_unbroadcast(g / b, a.shape),
                                       _unbroadcast(-g * a / (b * b), b.shape)))

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, p: float):
        if isinstance(p, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        return Tensor._make(a ** p, (self,), lambda g: (g * p * a ** (p - 1),))

    def __matmul__(self, other):
        a, b = self.data, other.data
        out = a @ b

        def bw(g):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor._make(out, (self, other), bw)

    def __getitem__(self, idx):
        shape = self.shape

        def bw(g):
            full = np.zeros(shape)
            full[idx] = g
            return (full,)

        return Tensor._make(np.array(self.data[idx]), (self,), bw)

    # -- elementwise ------------------------------------------------------
    def square(self):
        a = self.data
        return Tensor._make(a * a, (self,), lambda g: (2.0 * g * a,))

    def sqrt(self):
        if np.any(self.data <= 0):
            raise ValueError("sqrt: input must be strictly positive")
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), lambda g: (0.5 * g / out,))

    def log(self):
        if np.any(self.data <= 0):
            raise ValueError("log: input must be strictly positive")
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,))

    def exp(self):
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def sigmoid(self):
        a = self.data
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        return Tensor._make(out, (self,), lambda g: (g * out * (1.0 - out),))

    def leaky_relu(self, slope: float = 0.2):
        a = self.data
        scale = np.where(a >= 0, 1.0, slope)
        if _kink_log is not None:
            _kink_log.append(a >= 0)
        return Tensor._make(a * scale, (self,), lambda g: (g * scale,))

    def clip(self, lo: float, hi: float):
        a = self.data
        inside = (a >= lo) & (a <= hi)
        if _kink_log is not None:
            _kink_log.append(inside)
        return Tensor._make(np.clip(a, lo, hi), (self,), lambda g: (g * inside,))

    # -- reductions / shape -----------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(out, (self,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return Tensor._make(np.ascontiguousarray(self.data.transpose(axes)), (self,),
                            lambda g: (g.transpose(inv),))

    def swap_last(self):
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(axes)

    # -- differentiation --------------------------------------------------
    def backward(self) -> dict:
        """Reverse-mode sweep from this scalar node.

        Sets ``.grad`` on every leaf that requires gradients (overwriting any
        previous value) and returns ``{name: grad}`` for named leaves.
        """
        if self.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {self.shape}")
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        named = {}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g
                if node.name is not None:
                    named[node.name] = g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return named


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


class Parameter(Tensor):
    """A named leaf tensor owned by a model."""

    __slots__ = ("trainable",)

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(data, requires_grad=trainable, name=name)
        self.trainable = trainable


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def backward(root: Tensor) -> dict:
    return root.backward()


# -- network ops -------------------------------------------------------------

def same_padding(k: int) -> tuple:
    """(top, bottom, left, right) keeping spatial size at stride 1; extra pixel bottom/right."""
    lo = (k - 1) // 2
    hi = k - 1 - lo
    return (lo, hi, lo, hi)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding=0) -> Tensor:
    """2-D cross-correlation.

    ``x`` is [B, C_in, H, W] or [C_in, H, W]; ``w`` is [C_out, C_in, kh, kw].
    ``padding`` is an int, a (top, bottom, left, right) tuple, or ``"same"``.
    """
    squeeze = x.ndim == 3
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d: input has {x.shape[1]} channels but kernel expects {w.shape[1]}")
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    kh, kw = w.shape[2], w.shape[3]
    if padding == "same":
        if kh != kw:
            raise ValueError("conv2d: 'same' padding needs a square kernel")
        pad = same_padding(kh)
    elif isinstance(padding, int):
        pad = (padding,) * 4
    else:
        pad = tuple(padding)
    if min(pad) < 0:
        raise ValueError("conv2d: padding must be non-negative")
    xd = x.data
    if any(pad):
        xd = np.pad(xd, ((0, 0), (0, 0), (pad[0], pad[1]), (pad[2], pad[3])))
    hp, wp = xd.shape[2], xd.shape[3]
    if hp < kh or wp < kw:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    xd = np.ascontiguousarray(xd)
    wd = np.ascontiguousarray(w.data)
    out = _kernels.conv2d_forward(xd, wd, stride)
    if out.size == 0:
        raise ValueError("conv2d: zero-sized output")
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)
    H, W = x.shape[2], x.shape[3]

    def bw(g):
        g = np.ascontiguousarray(g)
        gx, gw = _kernels.conv2d_backward(xd, wd, g, stride)
        gx = gx[:, :, pad[0]:pad[0] + H, pad[2]:pad[2] + W]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    y = Tensor._make(out, parents, bw)
    return y.reshape(y.shape[1:]) if squeeze else y


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: incompatible shapes {[d.shape for d in datas]}") from exc
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out, tuple(tensors), bw)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=1)


def nearest_upsample(x: Tensor) -> Tensor:
    """x2 nearest-neighbour upsampling of [B, C, H, W]."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    B, C, H, W = x.shape
    return Tensor._make(out, (x,), lambda g: (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),))


def avg_pool(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2 on [B, C, H, W] (H, W even)."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"avg_pool: spatial size {H}x{W} not divisible by 2")
    out = x.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return Tensor._make(out, (x,), bw)


# functional aliases
def add(a, b): return a + b
def sub(a, b): return a - b
def mul(a, b): return a * b
def square(a): return a.square()
def sqrt(a): return a.sqrt()
def log(a): return a.log()
def sigmoid(a): return a.sigmoid()
def leaky_relu(a, slope=0.2): return a.leaky_relu(slope)
def mean(a, axis=None): return a.mean(axis)
def sum(a, axis=None): return a.sum(axis)  # noqa: A001


# -- gradient checking -------------------------------------------------------

@dataclass
class GradCheckReport:
    """Per-parameter results. ``max_rel_error`` is the worst per-coordinate
    ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``; ``norm_error`` is the same
    ratio taken normwise over the checked coordinates (diagnostic only)."""
    max_rel_error: dict = field(default_factory=dict)
    norm_error: dict = field(default_factory=dict)
    n_checked: dict = field(default_factory=dict)
    nonfinite: list = field(default_factory=list)
    skipped: dict = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def merge(self, other: "GradCheckReport", prefix: str = "") -> None:
        for k in other.max_rel_error:
            self.max_rel_error[prefix + k] = other.max_rel_error[k]
            self.norm_error[prefix + k] = other.norm_error[k]
            self.n_checked[prefix + k] = other.n_checked[k]
            self.skipped[prefix + k] = other.skipped.get(k, 0)
        self.nonfinite += [prefix + k for k in other.nonfinite]

    def ok(self, tol: float = 1e-5) -> bool:
        return not self.nonfinite and self.worst < tol and all(
            self.n_checked[k] > 0 for k in self.n_checked)

    def lines(self) -> list:
        out = [f"{name}: max rel err {err:.3e} over {self.n_checked[name]} coords"
               + (f" ({self.skipped[name]} skipped at kinks)" if self.skipped.get(name) else "")
               for name, err in self.max_rel_error.items()]
        out += [f"{name}: non-finite loss at perturbed point" for name in self.nonfinite]
        return out


def relative_error(g_ad, g_fd):
    """Elementwise ``|a - b| / max(1e-8, |a| + |b|)``."""
    return np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))


def norm_relative_error(g_ad, g_fd) -> float:
    a = np.asarray(g_ad, dtype=np.float64).ravel()
    b = np.asarray(g_fd, dtype=np.float64).ravel()
    return float(np.linalg.norm(a - b) / max(1e-8, np.linalg.norm(a) + np.linalg.norm(b)))


def _traced(loss_fn) -> tuple:
    """Loss value plus the branch pattern of every piecewise op it ran."""
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        with no_grad():
            val = loss_fn().item()
        return val, _kink_log
    finally:
        _kink_log = prev


def _same_branches(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_check(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5,
               max_coords: int | None = None, seed: int = 0, stencil: int = 3) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    ``loss_fn`` rebuilds the graph from the current parameter values. With
    ``max_coords`` set, that many coordinates per parameter are checked,
    chosen deterministically from ``seed``. A coordinate whose +/-eps
    evaluations take a different branch of a leaky ReLU or clip than the
    base point is skipped (the difference quotient is not a derivative
    there); the step is shrunk tenfold up to twice before the coordinate is
    given up and the next candidate used instead.

    ``stencil=5`` uses the fourth-order central difference
    ``(-f(+2h) + 8 f(+h) - 8 f(-h) + f(-2h)) / 12h``, which tolerates a larger
    step and hence less cancellation error on small gradient components.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if stencil not in (3, 5):
        raise ValueError("stencil must be 3 or 5")
    offsets, coefs = ((1, -1), (0.5, -0.5)) if stencil == 3 else \
        ((2, 1, -1, -2), (-1 / 12, 8 / 12, -8 / 12, 1 / 12))
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    _, base = _traced(loss_fn)
    report = GradCheckReport()
    rng = np.random.default_rng(seed)
    for k, p in enumerate(params):
        name = p.name or f"param{k}"
        g_ad = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
        flat = p.data.reshape(-1)
        order = np.arange(flat.size)
        want = flat.size
        if max_coords is not None and flat.size > max_coords:
            order = rng.permutation(flat.size)
            want = max_coords
        ad, fd, skipped, bad = [], [], 0, False
        for i in order:
            if len(fd) >= want:
                break
            orig = flat[i]
            g_fd = None
            for h in (eps, eps / 10, eps / 100):
                vals, same = [], True
                for o in offsets:
                    flat[i] = orig + o * h
                    v, br = _traced(loss_fn)
                    vals.append(v)
                    same = same and _same_branches(base, br)
                flat[i] = orig
                if not np.all(np.isfinite(vals)):
                    bad = True
                    break
                if same:
                    g_fd = float(np.dot(coefs, vals)) / h
                    break
            if g_fd is None:
                skipped += not bad
                continue
            ad.append(g_ad[i])
            fd.append(g_fd)
        ad, fd = np.array(ad), np.array(fd)
        report.max_rel_error[name] = float(relative_error(ad, fd).max()) if len(fd) else 0.0
        report.norm_error[name] = norm_relative_error(ad, fd)
        report.n_checked[name] = len(fd)
        report.skipped[name] = skipped
        if bad:
            report.nonfinite.append(name)
    return report
