"""Gram-level checks of the splitting isometry on spans of kernel sections."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .kernel import KernelSystem, iter_pushforward
from .tree import words


@dataclass(frozen=True, eq=False)
class SectionVector:
    """``f = sum_a c_a k_{s_a}`` with ``k_s = K_inf(., s)``."""

    support: tuple
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=complex))
        if c.shape != (len(self.support),):
            raise ValueError("one coefficient per support point is required")
        object.__setattr__(self, "support", tuple(self.support))
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def section(cls, s) -> "SectionVector":
        return cls((s,), [1.0])

    @classmethod
    def zero(cls) -> "SectionVector":
        return cls((), [])

    def gram(self, K: Callable) -> np.ndarray:
        pts = self.support
        return np.array([[K(a, b) for b in pts] for a in pts], dtype=complex).reshape(len(pts), len(pts))

    def norm2(self, K: Callable) -> float:
        """<f, f> = c* G c with ``G[b, a] = K(s_b, s_a)``."""
        if not self.support:
            return 0.0
        c = self.coeffs
        return float(np.real(np.conj(c) @ self.gram(K) @ c))

    def evaluate(self, K: Callable, x) -> complex:
        return complex(sum(c * K(x, s) for c, s in zip(self.coeffs, self.support)))

    def inner(self, other: "SectionVector", K: Callable) -> complex:
        """<self, other> = sum_{a,b} c_a conj(d_b) K(t_b, s_a)."""
        return complex(
            sum(
                c * np.conj(d) * K(t, s)
                for c, s in zip(self.coeffs, self.support)
                for d, t in zip(other.coeffs, other.support)
            )
        )

    def __add__(self, other: "SectionVector") -> "SectionVector":
        return SectionVector(self.support + other.support, np.concatenate([self.coeffs, other.coeffs]))

    def __mul__(self, a: complex) -> "SectionVector":
        return SectionVector(self.support, self.coeffs * a)

    __rmul__ = __mul__


def level_invariance_residual(sys: KernelSystem, est, s, t, n: int) -> tuple[float, float]:
    """Relative gap in ``sum_{W_n} K_inf(phi_w s, phi_w t) = K_inf(s, t)`` and its tail allowance."""
    total, allow = [], est.tail(s, t)
    for j, level in enumerate(iter_pushforward(sys, [s, t], n)):
        if j == n:
            for (x, y), count in level.values():
                total.append(count * est(x, y))
                allow += count * est.tail(x, y)
    lhs = complex(math.fsum(v.real for v in total), math.fsum(v.imag for v in total))
    ref = est(s, t)
    scale = max(1.0, abs(ref))
    return abs(lhs - ref) / scale, allow / scale


def word_operator_apply(sys: KernelSystem, w, f: SectionVector) -> SectionVector:
    """S_w: k_s -> k_{phi_w s}, coefficients unchanged."""
    return SectionVector(tuple(sys.phi(w, s) for s in f.support), f.coeffs.copy())


def parseval_sum(sys: KernelSystem, est, f: SectionVector, n: int) -> float:
    """sum_{w in W_n} ||S_w f||**2, collapsed over pushed support tuples."""
    if not f.support:
        return 0.0
    out = []
    for j, level in enumerate(iter_pushforward(sys, f.support, n)):
        if j == n:
            for pts, count in level.values():
                out.append(count * SectionVector(pts, f.coeffs).norm2(est))
    return math.fsum(out)


def parseval_sum_enum(sys: KernelSystem, est, f: SectionVector, n: int) -> float:
    """Oracle: the same sum over all ``m**n`` words."""
    return math.fsum(word_operator_apply(sys, w, f).norm2(est) for w in words(sys.m, n))


def parseval_residual(sys: KernelSystem, est, f: SectionVector, n: int, method: str = "dp") -> float:
    """|sum_w ||S_w f||**2 - ||f||**2| / max(1, ||f||**2)."""
    total = parseval_sum(sys, est, f, n) if method == "dp" else parseval_sum_enum(sys, est, f, n)
    ref = f.norm2(est)
    return abs(total - ref) / max(1.0, abs(ref))


def vstar_apply(sys: KernelSystem, fs: Sequence[Callable], s) -> complex:
    """(V* f)(s) = sum_i f_i(phi_i s)."""
    if len(fs) != sys.m:
        raise ValueError(f"need {sys.m} component functions")
    return complex(sum(f(sys.branch(i, s)) for i, f in enumerate(fs)))


def adjoint_residual(sys: KernelSystem, est, fs: Sequence[SectionVector], s) -> float:
    """|<V* f, k_s> - <f, V k_s>|, the right side expanded through Gram entries."""
    lhs = vstar_apply(sys, [lambda x, g=g: g.evaluate(est, x) for g in fs], s)
    rhs = sum(g.inner(SectionVector.section(sys.branch(i, s)), est) for i, g in enumerate(fs))
    return abs(lhs - rhs) / max(1.0, abs(rhs))


def isometry_gram_residual(sys: KernelSystem, est, points: Sequence, n: int) -> float:
    """max entry gap between ``[sum_w K_inf(phi_w s_i, phi_w s_j)]`` and ``[K_inf(s_i, s_j)]``."""
    pts = tuple(points)
    r = len(pts)
    lhs = np.zeros((r, r), dtype=complex)
    for j, level in enumerate(iter_pushforward(sys, pts, n)):
        if j == n:
            for pushed, count in level.values():
                lhs += count * np.array([[est(a, b) for b in pushed] for a in pushed], dtype=complex)
    ref = np.array([[est(a, b) for b in pts] for a in pts], dtype=complex)
    return float(np.max(np.abs(lhs - ref)) / max(1.0, float(np.max(np.abs(ref)))))
