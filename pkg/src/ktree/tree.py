"""The canonical conductance network on the word tree."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator

from .kernel import (
    CLIP_TOL,
    DEFAULT_BUDGET,
    DepthOverflowError,
    KernelSystem,
    SubinvarianceError,
    TowerCache,
    iter_pushforward,
)

ENUM_LIMIT = 8


def words(m: int, n: int) -> Iterator[tuple]:
    """All words of length ``n`` over ``range(m)`` in lexicographic order."""
    return itertools.product(range(m), repeat=n)


def word_index(word, m: int) -> int:
    """Base-``m`` value of the word, first letter most significant."""
    idx = 0
    for i in word:
        if not 0 <= i < m:
            raise ValueError(f"letter {i} outside 0..{m - 1}")
        idx = idx * m + i
    return idx


def word_from_index(idx: int, m: int, n: int) -> tuple:
    out = []
    for _ in range(n):
        idx, r = divmod(idx, m)
        out.append(r)
    return tuple(reversed(out))


def increment(sys: KernelSystem, cache: TowerCache, s, w) -> float:
    """a_s(w) = u_{|w|+1}(phi_w s) - u_{|w|}(phi_w s)."""
    return cache.increment(sys.phi(w, s), len(w))


@dataclass
class EdgeWeighting:
    """Increments and conductances of the tree rooted at ``s``."""

    sys: KernelSystem
    cache: TowerCache
    s: object

    def a(self, w) -> float:
        return increment(self.sys, self.cache, self.s, w)

    def c(self, w, i: int) -> float:
        """Conductance of the edge ``(w, wi)``."""
        if not 0 <= i < self.sys.m:
            raise ValueError(f"letter {i} outside 0..{self.sys.m - 1}")
        return self.a(w) / self.sys.m ** (len(w) + 1)


def level_classes(sys: KernelSystem, s, k: int, budget: int = DEFAULT_BUDGET) -> list[tuple]:
    """``[(point, count)]`` for the level-k image of ``s`` (counts are exact)."""
    for j, level in enumerate(iter_pushforward(sys, [s], k, budget)):
        if j == k:
            return [(pts[0], count) for pts, count in level.values()]
    raise AssertionError("unreachable")


def level_increment_sum(sys: KernelSystem, cache: TowerCache, s, k: int) -> float:
    """sum_{w in W_k} a_s(w), collapsed over reachable point classes."""
    terms = [count * cache.increment(y, k) for y, count in level_classes(sys, s, k, cache.budget)]
    return math.fsum(terms)


def level_increment_sum_enum(sys: KernelSystem, cache: TowerCache, s, k: int) -> float:
    """Brute-force oracle over all m**k words."""
    if sys.m**k > cache.budget:
        raise DepthOverflowError(f"m**k = {sys.m ** k} words exceeds the budget")
    return math.fsum(increment(sys, cache, s, w) for w in words(sys.m, k))


def cutset_conductance(sys: KernelSystem, cache: TowerCache, s, k: int, method: str = "dp") -> float:
    """C_k(s) = m**-k sum_{w in W_k} a_s(w)."""
    if k < 0:
        raise ValueError("level must be >= 0")
    if method == "dp":
        total = level_increment_sum(sys, cache, s, k)
    elif method == "enum":
        total = level_increment_sum_enum(sys, cache, s, k)
    else:
        raise ValueError(f"unknown method {method!r}")
    return total / sys.m**k


def telescoping_check(sys: KernelSystem, cache: TowerCache, s, k: int, method: str = "dp") -> float:
    """Relative gap between the level-k increment mass and ``u_{2k+1} - u_{2k}``."""
    if method == "dp":
        mass = level_increment_sum(sys, cache, s, k)
    else:
        mass = level_increment_sum_enum(sys, cache, s, k)
    u = cache.diagonals(s, 2 * k + 1)
    return abs(mass - (u[2 * k + 1] - u[2 * k])) / max(1.0, abs(u[2 * k + 1]))


def one_step_defect(sys: KernelSystem, y) -> float:
    """delta(y) = (LK - K)(y, y) = u_1(y) - u_0(y), clipped at round-off."""
    up = math.fsum(sys.seed(c, c).real for c in sys.children(y))
    d = up - sys.seed(y, y).real
    if d < 0:
        if d >= -CLIP_TOL * max(1.0, abs(up)):
            return 0.0
        raise SubinvarianceError(f"negative one-step defect {d:.3e}")
    return d


class IncrementTable:
    """Increments ``g_l(y) = u_{l+1}(y) - u_l(y)`` for the tree rooted at ``s``.

    Built bottom-up from ``g_0 = delta`` by ``g_l(y) = sum_i g_{l-1}(phi_i y)``,
    so no differences of large numbers are ever taken.  Each row ``l`` is
    stored normalised to max 1 together with its scale ``mant * 2**exp``;
    this keeps the table finite when ``u_n`` leaves the double range.

    Row ``l`` is available at every class first reached at level
    ``<= 2 * (depth - 1) - l``, which covers ``g_j`` on level ``j`` for
    ``j < depth`` and ``g_{2k}`` at the root for ``k < depth``.
    """

    def __init__(self, sys: KernelSystem, s, depth: int, budget: int = DEFAULT_BUDGET):
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.sys, self.s, self.depth = sys, s, depth
        J = 2 * (depth - 1)
        self.levels: list[dict] = []
        first: dict = {}
        points: dict = {}
        for j, level in enumerate(iter_pushforward(sys, [s], J, budget)):
            cls = {}
            for pts, count in level.values():
                k = sys.key(pts[0])
                cls[k] = (pts[0], count)
                first.setdefault(k, j)
                points.setdefault(k, pts[0])
            self.levels.append(cls)
        self.root = sys.key(s)
        children = {
            k: [sys.key(c) for c in sys.children(y)] for k, y in points.items() if first[k] < J
        }
        base = {k: one_step_defect(sys, y) for k, y in points.items()}
        self.rows: list[dict] = []
        self.ratio: list[float] = []
        self.mant: list[float] = []
        self.exp: list[int] = []
        mant, ex = 1.0, 0
        prev = base
        for l in range(J + 1):
            if l == 0:
                raw = base
            else:
                raw = {
                    k: math.fsum(prev[c] for c in children[k]) for k, j in first.items() if j <= J - l
                }
            top = max(raw.values(), default=0.0)
            n = top if top > 0 else 1.0
            row = {k: v / n for k, v in raw.items()}
            mant, e2 = math.frexp(mant * n)
            ex += e2
            self.rows.append(row)
            self.ratio.append(n)
            self.mant.append(mant)
            self.exp.append(ex)
            prev = row

    def classes(self, j: int) -> list[tuple]:
        """``[(key, point, count)]`` reached at level ``j``."""
        return [(k, y, c) for k, (y, c) in self.levels[j].items()]

    def g_hat(self, l: int, key) -> float:
        return self.rows[l][key]

    def g(self, l: int, key) -> float:
        """Unscaled increment (may overflow to inf)."""
        v = self.rows[l][key]
        if v == 0:
            return 0.0
        try:
            return math.ldexp(self.mant[l] * v, self.exp[l])
        except OverflowError:
            return math.inf

    def scale_ratio(self, num: int, l: int) -> float:
        """``num / scale_l`` for a (possibly huge) integer ``num``."""
        e = self.exp[l]
        try:
            q = num / (1 << e) if e >= 0 else float(num << -e)
        except OverflowError:
            return math.inf
        return q / self.mant[l]

    def level_mass(self, k: int) -> float:
        """u_{2k+1}(s) - u_{2k}(s) = g_{2k}(s)."""
        return self.g(2 * k, self.root)
