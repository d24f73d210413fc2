"""Patch-pair correlation functions used inside PCR.

Each function works on a batch of flattened patches ``P`` of shape
[B, N, D] and returns the differentiable [B, N, N] matrix of pairwise values.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

EPS_VAR = 1e-8


class CorrelationFunction:
    kind = "abstract"

    def pairwise(self, P: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, p, q) -> Tensor:
        return corr(self, p, q)

    def bound_M(self, data_range=(0.0, 1.0)) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class Pearson(CorrelationFunction):
    """Pearson coefficient; the denominator is sqrt(var_p * var_q + EPS_VAR**2),
    so a constant patch correlates to 0 and the function stays smooth."""

    kind = "pearson"

    def pairwise(self, P: Tensor) -> Tensor:
        C = P - P.mean(axis=-1, keepdims=True)
        cov = C @ C.swap_last()
        var = C.square().sum(axis=-1)
        B, N = var.shape
        prod = var.reshape(B, N, 1) * var.reshape(B, 1, N)
        return cov / (prod + EPS_VAR * EPS_VAR).sqrt()

    def bound_M(self, data_range=(0.0, 1.0)) -> float:
        return 1.0

    def spec(self) -> str:
        return "pearson"


@dataclass(frozen=True)
class GaussianKernel(CorrelationFunction):
    sigma: float = 1.0
    kind = "gaussian"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"gaussian kernel sigma must be > 0, got {self.sigma}")

    def pairwise(self, P: Tensor) -> Tensor:
        B, N, D = P.shape
        diff = P.reshape(B, N, 1, D) - P.reshape(B, 1, N, D)
        d2 = diff.square().sum(axis=-1)
        return (d2 * (-1.0 / (2.0 * self.sigma ** 2))).exp()

    def bound_M(self, data_range=(0.0, 1.0)) -> float:
        return 1.0

    def spec(self) -> str:
        return f"gaussian({self.sigma!r})"


@dataclass(frozen=True)
class Polynomial(CorrelationFunction):
    """(scale * <p, q> / D + offset) ** degree, D the patch size."""

    degree: int = 2
    offset: float = 1.0
    scale: float = 1.0
    kind = "polynomial"

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError(f"polynomial degree must be an integer >= 1, got {self.degree}")

    def pairwise(self, P: Tensor) -> Tensor:
        D = P.shape[-1]
        gram = P @ P.swap_last()
        base = gram * (self.scale / D) + self.offset
        return base ** int(self.degree) if self.degree != 1 else base

    def bound_M(self, data_range=(0.0, 1.0)) -> float:
        lo, hi = data_range
        prods = [lo * lo, lo * hi, hi * hi]
        ends = [self.scale * v + self.offset for v in (min(prods), max(prods))]
        return max(abs(e) for e in ends) ** int(self.degree)

    def spec(self) -> str:
        return f"polynomial({int(self.degree)}, {self.offset!r}, {self.scale!r})"


@dataclass(frozen=True)
class LinearCombination(CorrelationFunction):
    weights: tuple
    members: tuple
    kind = "combo"

    def __post_init__(self):
        if len(self.weights) != len(self.members) or not self.members:
            raise ValueError("combination needs one weight per member")
        if any(isinstance(m, LinearCombination) for m in self.members):
            raise ValueError("combinations cannot be nested")
        if not all(np.isfinite(w) for w in self.weights):
            raise ValueError("combination weights must be finite")

    def pairwise(self, P: Tensor) -> Tensor:
        total = None
        for u, f in zip(self.weights, self.members):
            term = f.pairwise(P) * u
            total = term if total is None else total + term
        return total

    def bound_M(self, data_range=(0.0, 1.0)) -> float:
        return sum(abs(u) * f.bound_M(data_range) for u, f in zip(self.weights, self.members))

    def spec(self) -> str:
        return "combo(" + ", ".join(f"{u!r}*{f.spec()}" for u, f in zip(self.weights, self.members)) + ")"


def corr(f: CorrelationFunction, p, q) -> Tensor:
    """Correlation of a single patch pair as a differentiable scalar."""
    p = p if isinstance(p, Tensor) else Tensor(p)
    q = q if isinstance(q, Tensor) else Tensor(q)
    if p.shape != q.shape:
        raise ValueError(f"corr: patch shapes differ: {p.shape} vs {q.shape}")
    from .tensor import concat
    D = p.size
    P = concat([p.reshape(1, 1, D), q.reshape(1, 1, D)], axis=1)
    return f.pairwise(P)[0, 0, 1]


def bound_M(f: CorrelationFunction, data_range=(0.0, 1.0)) -> float:
    return f.bound_M(data_range)


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def _split_top(s: str) -> list:
    parts, depth, cur = [], 0, ""
    for ch in s:
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    parts.append(cur)
    return [p.strip() for p in parts if p.strip()]


def parse_corr(text: str) -> CorrelationFunction:
    """Parse ``pearson``, ``gaussian(s)``, ``polynomial(d, c, s)`` or
    ``combo(u1*f1, u2*f2, ...)``."""
    s = text.strip()
    m = re.fullmatch(r"(\w+)\s*(?:\((.*)\))?", s, flags=re.S)
    if not m:
        raise ValueError(f"cannot parse correlation function {text!r}")
    name, args = m.group(1).lower(), m.group(2)
    args = _split_top(args) if args else []
    if name == "pearson" and not args:
        return Pearson()
    if name in ("gaussian", "gauss"):
        return GaussianKernel(*(float(a) for a in args))
    if name in ("polynomial", "poly"):
        vals = [float(a) for a in args]
        if vals:
            if vals[0] != int(vals[0]):
                raise ValueError(f"polynomial degree must be an integer, got {args[0]!r}")
            vals[0] = int(vals[0])
        return Polynomial(*vals)
    if name == "combo":
        weights, members = [], []
        for a in args:
            mm = re.fullmatch(rf"({_NUM})\s*\*\s*(.+)", a)
            if not mm:
                raise ValueError(f"combo member {a!r} must look like '<weight>*<function>'")
            weights.append(float(mm.group(1)))
            members.append(parse_corr(mm.group(2)))
        return LinearCombination(tuple(weights), tuple(members))
    raise ValueError(f"unknown correlation function {text!r}")
