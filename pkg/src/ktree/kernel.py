"""Kernel systems, the pullback operator L, the monotone tower and PSD checks.

A system is a point universe with ``m`` branch maps, a seed kernel and a key
function.  Points are arbitrary Python objects; ``key`` must map points that
behave identically (under every branch map and the seed) to the same hashable
value, which is what lets the ``m**n`` word tree collapse to reachable points.

Letters are 0-based: a word is a tuple over ``range(m)`` and
``phi_w = phi_{i_n} o ... o phi_{i_1}`` (the first letter is applied first).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Iterator, Sequence

import numpy as np

DEFAULT_PSD_TOL = 1e-9
HERMITIAN_TOL = 1e-12
DEFAULT_BUDGET = 2**20
CLIP_TOL = 1e-12


class KtreeError(Exception):
    """Base class for errors raised by this package."""


class DepthOverflowError(KtreeError):
    """The word enumeration exceeded its budget without collapsing."""


class NotHermitianError(KtreeError, ValueError):
    pass


class SubinvarianceError(KtreeError):
    """A diagonal increment is negative beyond round-off."""


class PreconditionError(KtreeError, ValueError):
    pass


def _identity(x):
    return x


@dataclass(frozen=True, eq=False)
class KernelSystem:
    """The data ``(X, phi_1..phi_m, K)`` plus a memoization key.

    ``branch(i, x)`` applies the map with 0-based index ``i``.  ``seed(s, t)``
    must be Hermitian.  ``finite`` carries the matrix form when the universe
    is ``{0, ..., p-1}``.
    """

    m: int
    branch: Callable[[int, Any], Any]
    seed: Callable[[Any, Any], complex]
    key: Callable[[Any], Hashable] = _identity
    name: str = "system"
    parse_point: Callable[[str], Any] = float
    finite: Any = None
    sample_points: tuple = ()
    closed_forms: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"branching count must be an integer >= 1, got {self.m!r}")

    def phi(self, word: Iterable[int], x):
        for i in word:
            x = self.branch(i, x)
        return x

    def children(self, x) -> list:
        return [self.branch(i, x) for i in range(self.m)]


def apply_L(sys: KernelSystem, J: Callable[[Any, Any], complex], s, t) -> complex:
    """(LJ)(s, t) = sum_i J(phi_i s, phi_i t)."""
    return sum(J(sys.branch(i, s), sys.branch(i, t)) for i in range(sys.m))


def iter_pushforward(
    sys: KernelSystem, roots: Sequence, n: int | None = None, budget: int = DEFAULT_BUDGET
) -> Iterator[dict]:
    """Yield the level-j image of ``roots`` under all words of length j.

    Each level is a dict ``key-tuple -> [points-tuple, count]`` where ``count``
    is the (exact, integer) number of words w with ``phi_w(roots) = points``.
    Runs forever when ``n`` is None.  ``budget`` bounds the number of branch
    evaluations.
    """
    roots = tuple(roots)
    level = {tuple(sys.key(r) for r in roots): [roots, 1]}
    yield level
    work = 0
    j = 0
    while n is None or j < n:
        nxt: dict = {}
        for pts, count in level.values():
            for i in range(sys.m):
                child = tuple(sys.branch(i, x) for x in pts)
                k = tuple(sys.key(x) for x in child)
                slot = nxt.get(k)
                if slot is None:
                    nxt[k] = [child, count]
                else:
                    slot[1] += count
            work += sys.m
            if work > budget:
                raise DepthOverflowError(
                    f"word enumeration exceeded budget {budget} at level {j + 1}; "
                    "supply a key function whose reachable set is finite"
                )
        level = nxt
        j += 1
        yield level


def pushforward(sys: KernelSystem, roots: Sequence, n: int, budget: int = DEFAULT_BUDGET) -> list[dict]:
    return list(iter_pushforward(sys, roots, n, budget))


def _csum(values: Iterable[complex]) -> complex:
    vals = list(values)
    re = math.fsum(v.real for v in vals)
    im = math.fsum(v.imag for v in vals)
    return complex(re, im)


class TowerCache:
    """Memo of ``K_n(s, t)`` keyed by ``(key(s), key(t))`` and level.

    Values are computed by the word sum ``K_n(s,t) = sum_{w in W_n} K(phi_w s, phi_w t)``
    over the collapsed pushforward, so every level up to ``n`` comes out of a
    single pass.  The frontier is kept so deeper requests resume instead of
    restarting.
    """

    def __init__(self, sys: KernelSystem, budget: int = DEFAULT_BUDGET):
        self.sys = sys
        self.budget = budget
        self.clipped = 0
        self._store: dict = {}

    def _extend(self, s, t, n: int) -> list[complex]:
        sys = self.sys
        k = (sys.key(s), sys.key(t))
        entry = self._store.get(k)
        if entry is None:
            frontier = {k: [(s, t), 1]}
            entry = self._store[k] = [[_csum([complex(sys.seed(s, t))])], frontier, 0, (s, t)]
        values, frontier, work, _ = entry
        while len(values) <= n:
            nxt: dict = {}
            for (x, y), count in frontier.values():
                for i in range(sys.m):
                    cx, cy = sys.branch(i, x), sys.branch(i, y)
                    ck = (sys.key(cx), sys.key(cy))
                    slot = nxt.get(ck)
                    if slot is None:
                        nxt[ck] = [(cx, cy), count]
                    else:
                        slot[1] += count
                work += sys.m
                if work > self.budget:
                    raise DepthOverflowError(
                        f"tower enumeration exceeded budget {self.budget} at level {len(values)}"
                    )
            frontier = nxt
            values.append(_csum(count * complex(sys.seed(x, y)) for (x, y), count in frontier.values()))
        entry[1], entry[2] = frontier, work
        return values

    def values(self, s, t, n: int) -> list[complex]:
        """K_0(s,t), ..., K_n(s,t)."""
        if n < 0:
            raise ValueError("level must be >= 0")
        return self._extend(s, t, n)[: n + 1]

    def tower(self, s, t, n: int) -> complex:
        if n < 0:
            raise ValueError("level must be >= 0")
        return self._extend(s, t, n)[n]

    def diagonals(self, s, n: int) -> np.ndarray:
        """u_0(s), ..., u_n(s) as a real array."""
        return np.array([v.real for v in self.values(s, s, n)])

    def diagonal(self, s, n: int) -> float:
        return self.tower(s, s, n).real

    def increment(self, x, k: int) -> float:
        """u_{k+1}(x) - u_k(x), with round-off negatives clipped to zero."""
        u = self.diagonals(x, k + 1)
        d = u[k + 1] - u[k]
        if d < 0:
            if d >= -CLIP_TOL * max(1.0, abs(u[k + 1])):
                self.clipped += 1
                return 0.0
            raise SubinvarianceError(
                f"negative diagonal increment {d:.3e} at level {k}: seed is not PSD or LK >= K fails"
            )
        return float(d)

    def check_invariants(self, rtol: float = 1e-10) -> list[str]:
        """Re-verify monotonicity and ``u_{n+1}(x) = sum_i u_n(phi_i x)`` on cached diagonals."""
        problems = []
        for k, (values, _, _, (x, y)) in list(self._store.items()):
            if k[0] != k[1]:
                continue
            u = [v.real for v in values]
            for n in range(len(u) - 1):
                if u[n + 1] < u[n] - 1e-12 * max(1.0, abs(u[n + 1])):
                    problems.append(f"monotonicity fails at {x!r}, level {n}")
                rec = math.fsum(self.diagonal(c, n) for c in self.sys.children(x))
                if abs(rec - u[n + 1]) > rtol * max(1.0, abs(rec)):
                    problems.append(f"recursion fails at {x!r}, level {n}")
        return problems


def tower_value(sys: KernelSystem, cache: TowerCache, n: int, s, t) -> complex:
    """K_n(s, t) = (L^n K)(s, t)."""
    return cache.tower(s, t, n)


def diagonal(sys: KernelSystem, cache: TowerCache, n: int, s) -> float:
    """u_n(s) = K_n(s, s)."""
    v = cache.tower(s, s, n)
    u = v.real
    if u < -CLIP_TOL * max(1.0, abs(u)):
        raise SubinvarianceError(f"negative diagonal u_{n} = {u:.3e}: seed is not PSD")
    return max(u, 0.0)


# ---------------------------------------------------------------- PSD machinery


@dataclass(frozen=True, eq=False)
class GramMatrix:
    points: tuple
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=complex)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"Gram matrix must be square, got shape {e.shape}")
        if e.shape[0] != len(self.points):
            raise ValueError("Gram dimension does not match the number of points")
        if e.size and np.max(np.abs(e - e.conj().T)) > HERMITIAN_TOL * max(1.0, float(np.max(np.abs(e)))):
            raise NotHermitianError("Gram matrix is not Hermitian within 1e-12")
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "points", tuple(self.points))

    def __sub__(self, other: "GramMatrix") -> "GramMatrix":
        _check_same_points(self, other)
        return GramMatrix(self.points, self.entries - other.entries)

    def __len__(self):
        return len(self.points)


def gram(J: Callable[[Any, Any], complex], points: Sequence) -> GramMatrix:
    """Gram matrix ``[J(s_i, s_j)]``, symmetrized from the upper triangle."""
    pts = tuple(points)
    r = len(pts)
    G = np.zeros((r, r), dtype=complex)
    for i in range(r):
        for j in range(i, r):
            G[i, j] = J(pts[i], pts[j])
            if j != i:
                G[j, i] = np.conj(G[i, j])
        G[i, i] = G[i, i].real
    return GramMatrix(pts, G)


@dataclass(frozen=True)
class PSDReport:
    ok: bool
    lam_min: float
    lam_max: float
    tol: float

    def __bool__(self):
        return self.ok


def is_psd(G: GramMatrix | np.ndarray, tol: float = DEFAULT_PSD_TOL) -> PSDReport:
    """PSD test relative to the spectral scale: ``lam_min >= -tol * max(1, lam_max)``."""
    A = G.entries if isinstance(G, GramMatrix) else np.asarray(G, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if A.size == 0:
        return PSDReport(True, 0.0, 0.0, tol)
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.conj().T)) > HERMITIAN_TOL * scale:
        raise NotHermitianError("matrix is not Hermitian within 1e-12")
    lam = np.linalg.eigvalsh((A + A.conj().T) / 2)
    lam_min, lam_max = float(lam[0]), float(lam[-1])
    return PSDReport(lam_min >= -tol * max(1.0, lam_max), lam_min, lam_max, tol)


def _check_same_points(A: GramMatrix, B: GramMatrix):
    if len(A.points) != len(B.points) or any(a != b for a, b in zip(A.points, B.points)):
        raise ValueError("Gram matrices are built on different point lists")


def loewner_geq(A: GramMatrix, B: GramMatrix, tol: float = DEFAULT_PSD_TOL) -> bool:
    """A >= B in the Loewner order."""
    _check_same_points(A, B)
    return is_psd(A.entries - B.entries, tol).ok


@dataclass(frozen=True)
class SubinvarianceReport:
    ok: bool
    lam_min: float
    gram: GramMatrix

    def __bool__(self):
        return self.ok


def verify_subinvariance(sys: KernelSystem, sample: Sequence, tol: float = DEFAULT_PSD_TOL) -> SubinvarianceReport:
    """Check Gram(LK - K) >= 0 on a sample (a necessary condition only)."""
    if len(sample) == 0:
        raise ValueError("sample must be nonempty")
    D = gram(lambda s, t: apply_L(sys, sys.seed, s, t) - sys.seed(s, t), sample)
    rep = is_psd(D, tol)
    return SubinvarianceReport(rep.ok, rep.lam_min, D)
