"""Unit flows, effective resistance, the cutset and uniform-flow bounds, and the series S."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .kernel import DEFAULT_BUDGET, DepthOverflowError, KernelSystem, TowerCache, iter_pushforward
from .tree import EdgeWeighting, IncrementTable, increment, one_step_defect, words

INF = math.inf
ORACLE_NODE_BUDGET = 2**14
DIVERGENCE_THRESHOLD = 1e12
TAIL_RTOL = 1e-9
RATIO_CAP = 0.99
WINDOW = 5
PLATEAU_RTOL = 1e-6


# ---------------------------------------------------------------- extended nonnegative reals


def ext(x: float) -> float:
    """Validate an element of [0, inf]."""
    x = float(x)
    if math.isnan(x) or x < 0:
        raise ValueError(f"{x!r} is not in [0, inf]")
    return x


def ext_inv(x: float) -> float:
    """1/0 = inf and 1/inf = 0."""
    x = ext(x)
    if x == 0:
        return INF
    if x == INF:
        return 0.0
    return 1.0 / x


def ext_series(*xs: float) -> float:
    return math.fsum(ext(x) for x in xs) if INF not in xs else INF


def ext_parallel(rs) -> float:
    """Parallel sum; an infinite resistance is an open circuit."""
    conductance = math.fsum(ext_inv(r) for r in rs)
    return ext_inv(conductance)


# ---------------------------------------------------------------- flows


class InvalidFlowError(ValueError):
    pass


@dataclass
class FlowAssignment:
    """Explicit unit flow: ``theta[wi]`` is the flow on the edge ``(w, wi)``."""

    m: int
    depth: int
    theta: dict

    def __post_init__(self):
        if self.depth < 1:
            raise InvalidFlowError("flow depth must be >= 1")
        for e, v in self.theta.items():
            if not 1 <= len(e) <= self.depth:
                raise InvalidFlowError(f"edge {e} outside depth {self.depth}")
            if v < 0:
                raise InvalidFlowError(f"negative flow on edge {e}")
        root = math.fsum(self.theta.get((i,), 0.0) for i in range(self.m))
        if abs(root - 1.0) > 1e-12:
            raise InvalidFlowError(f"root normalization fails: outflow {root!r}")
        for n in range(1, self.depth):
            for w in words(self.m, n):
                inflow = self.theta.get(w, 0.0)
                out = math.fsum(self.theta.get(w + (i,), 0.0) for i in range(self.m))
                if abs(inflow - out) > 1e-12:
                    raise InvalidFlowError(f"conservation fails at vertex {w}")


def uniform_flow(m: int, depth: int) -> FlowAssignment:
    """theta(w, wi) = m**-(|w|+1)."""
    theta = {w: float(m) ** -n for n in range(1, depth + 1) for w in words(m, n)}
    return FlowAssignment(m, depth, theta)


def flow_energy(weights: EdgeWeighting, flow: FlowAssignment) -> float:
    """sum_e theta(e)**2 / c(e), with 0/0 = 0 and theta > 0 on c = 0 giving inf."""
    if flow.m != weights.sys.m:
        raise InvalidFlowError("flow and network have different branching")
    terms = []
    for e, th in flow.theta.items():
        if th == 0:
            continue
        c = weights.c(e[:-1], e[-1])
        if c == 0:
            return INF
        terms.append(th * th / c)
    return math.fsum(terms)


def uniform_flow_energy_formula(sys: KernelSystem, cache: TowerCache, s, depth: int) -> float:
    """sum_{k<N} m**-k sum_{w in W_k} 1/a_s(w), by enumeration."""
    total = []
    for k in range(depth):
        inv = [ext_inv(increment(sys, cache, s, w)) for w in words(sys.m, k)]
        if INF in inv:
            return INF
        total.append(math.fsum(inv) / sys.m**k)
    return math.fsum(total)


# ---------------------------------------------------------------- resistance


@dataclass
class LevelInfo:
    k: int
    C_k: float
    lambda_k: float | None


@dataclass
class ResistanceReport:
    N: int
    R_N: float
    S_N: float
    lam: float
    cap_N: float
    upper: float | None
    per_level: list = field(default_factory=list)

    @property
    def sandwich_ok(self) -> bool:
        lo = self.S_N <= self.R_N * (1 + 1e-12) or self.S_N == self.R_N
        if self.upper is None:
            return lo
        return lo and (self.R_N <= self.upper * (1 + 1e-12) or self.R_N == self.upper)

    def to_dict(self) -> dict:
        return {
            "R_N": self.R_N,
            "S_N": self.S_N,
            "lambda": self.lam,
            "cap_N": self.cap_N,
            "upper_bound": self.upper,
            "per_level": [
                {"k": p.k, "C_k": p.C_k, "lambda_k": INF if p.lambda_k is None else p.lambda_k}
                for p in self.per_level
            ],
        }


def _level_lambda(table: IncrementTable, k: int) -> float | None:
    """(sum a)(sum 1/a) / m**2k over W_k; None for a zero-mass level."""
    m = table.sys.m
    cls = table.classes(k)
    if all(table.g_hat(k, key) == 0 for key, _, _ in cls):
        return None
    if any(table.g_hat(k, key) == 0 for key, _, _ in cls):
        return INF
    top = max(c for _, _, c in cls)
    a = math.fsum((c / top) * table.g_hat(k, key) for key, _, c in cls)
    b = math.fsum((c / top) / table.g_hat(k, key) for key, _, c in cls)
    f = top / m**k
    return a * b * f * f


def _level_conductance(table: IncrementTable, k: int) -> float:
    m = table.sys.m
    mass = math.fsum((c / m**k) * table.g_hat(k, key) for key, _, c in table.classes(k))
    if mass == 0:
        return 0.0
    try:
        return math.ldexp(table.mant[k] * mass, table.exp[k])
    except OverflowError:
        return INF


def _series_term(table: IncrementTable, k: int) -> float:
    """m**k / (u_{2k+1}(s) - u_{2k}(s))."""
    gh = table.g_hat(2 * k, table.root)
    if gh == 0:
        return INF
    return table.scale_ratio(table.sys.m**k, 2 * k) / gh


def _recursion(table: IncrementTable, N: int) -> float:
    """Series-parallel reduction rho(x, j) on (class, level), scaled per level.

    With ``sigma_j = m**(j+1) / scale_j`` the stored value is ``rho / sigma_j``;
    consecutive levels differ by ``m / ratio_{j+1}``.
    """
    m = table.sys.m
    sys = table.sys
    below: dict = {}
    for j in range(N - 1, -1, -1):
        factor = m / table.ratio[j + 1] if j + 1 < N else 0.0
        here = {}
        for key, y, _ in table.classes(j):
            gh = table.g_hat(j, key)
            r_edge = INF if gh == 0 else 1.0 / gh
            branches = []
            for c in sys.children(y):
                rest = below[sys.key(c)] if j + 1 < N else 0.0
                branches.append(ext_series(r_edge, factor * rest if rest != INF else INF))
            here[key] = ext_parallel(branches)
        below = here
    rho0 = below[table.root]
    if rho0 == INF:
        return INF
    return table.scale_ratio(m, 0) * rho0


def effective_resistance(
    sys: KernelSystem,
    cache: TowerCache | None,
    s,
    N: int,
    table: IncrementTable | None = None,
    budget: int = DEFAULT_BUDGET,
) -> ResistanceReport:
    """Exact R_N(s) on the depth-N tree with the S_N and Lambda bounds."""
    if N < 1:
        raise ValueError("depth N must be >= 1")
    if table is None or table.depth < N:
        table = IncrementTable(sys, s, N, budget if cache is None else cache.budget)
    R = _recursion(table, N)
    S = ext_series(*(_series_term(table, k) for k in range(N)))
    per_level, lam = [], 1.0
    for k in range(N):
        lk = _level_lambda(table, k)
        per_level.append(LevelInfo(k, _level_conductance(table, k), lk))
        lam = INF if lk is None else max(lam, lk)
    upper = lam * S if lam != INF else None
    return ResistanceReport(N, R, S, lam, ext_inv(R), upper, per_level)


def resistance_oracle(sys: KernelSystem, cache: TowerCache, s, N: int, node_budget: int = ORACLE_NODE_BUDGET) -> float:
    """Dirichlet solve on the explicit depth-N tree with level N shorted to one terminal.

    Uses ``cache.increment`` (differences of word sums) for the conductances,
    an independent route from the increment table.
    """
    if N < 1:
        raise ValueError("depth N must be >= 1")
    m = sys.m
    internal = sum(m**j for j in range(N))
    if internal > node_budget:
        raise DepthOverflowError(f"oracle tree has {internal} internal vertices (budget {node_budget})")
    index = {(): 0}
    point = {(): s}
    edges = []
    terminal = internal
    for j in range(N):
        for w in words(m, j):
            x = point[w]
            c = cache.increment(x, j) / m ** (j + 1)
            for i in range(m):
                child = w + (i,)
                if j + 1 < N:
                    index[child] = len(index)
                    point[child] = sys.branch(i, x)
                    tgt = index[child]
                else:
                    tgt = terminal
                if c > 0:
                    edges.append((index[w], tgt, c))
    n = internal + 1
    adj = [[] for _ in range(n)]
    for a, b, c in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for u in adj[v]:
            if u not in seen:
                seen.add(u)
                stack.append(u)
    if terminal not in seen:
        return INF
    free = sorted(v for v in seen if v not in (0, terminal))
    pos = {v: i for i, v in enumerate(free)}
    rows, cols, vals = [], [], []
    rhs = np.zeros(len(free))
    for a, b, c in edges:
        if a not in seen:
            continue
        for x, y in ((a, b), (b, a)):
            if x in pos:
                rows.append(pos[x])
                cols.append(pos[x])
                vals.append(c)
                if y in pos:
                    rows.append(pos[x])
                    cols.append(pos[y])
                    vals.append(-c)
                elif y == 0:
                    rhs[pos[x]] += c
    if free:
        Lap = sp.csr_matrix((vals, (rows, cols)), shape=(len(free), len(free)))
        v = spla.spsolve(Lap.tocsc(), rhs)
        v = np.atleast_1d(v)
    else:
        v = np.zeros(0)
    potential = {0: 1.0, terminal: 0.0}
    potential.update({x: float(v[pos[x]]) for x in free})
    current = math.fsum(c * (1.0 - potential[b]) for a, b, c in edges if a == 0)
    return ext_inv(current)


@dataclass
class LambdaReport:
    per_level: list
    lam_max: float

    @property
    def degenerate_levels(self) -> list[int]:
        return [k for k, v in self.per_level if v is None]


def concentration_lambda(sys: KernelSystem, cache: TowerCache | None, s, k_max: int, budget: int = DEFAULT_BUDGET) -> LambdaReport:
    """Lambda_k for k <= k_max; zero-mass levels are reported as None."""
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    table = IncrementTable(sys, s, k_max + 1, budget if cache is None else cache.budget)
    levels = [(k, _level_lambda(table, k)) for k in range(k_max + 1)]
    lam = 1.0
    for _, v in levels:
        lam = INF if v is None else max(lam, v)
    return LambdaReport(levels, lam)


# ---------------------------------------------------------------- capacity series


@dataclass
class CapacityReport:
    S_N: float
    terms: list
    levels: int
    verdict: str
    basis: str
    tail_bound: float | None
    ratio: float | None
    lam: float | None = None
    R_bounds: tuple | None = None
    threshold: float = DIVERGENCE_THRESHOLD

    def to_dict(self) -> dict:
        return {
            "S_N": self.S_N,
            "levels": self.levels,
            "verdict": self.verdict,
            "basis": self.basis,
            "tail_bound": self.tail_bound,
            "ratio": self.ratio,
            "lambda": self.lam,
            "R_bounds": list(self.R_bounds) if self.R_bounds else None,
            "divergence_threshold": self.threshold,
            "certificate": "geometric ratio window of 5 levels, ratio cap 0.99",
        }


POSITIVE = "Cap_inf > 0"
ZERO = "Cap_inf = 0"
INCONCLUSIVE = "inconclusive"


def _window_ratio(terms: list) -> float | None:
    """Largest successive ratio over the last WINDOW steps, or None."""
    if len(terms) < WINDOW + 1:
        return None
    tail = terms[-(WINDOW + 1):]
    rs = []
    for a, b in zip(tail, tail[1:]):
        if b == 0:
            rs.append(0.0)
        elif a == 0:
            return None
        else:
            rs.append(b / a)
    return max(rs)


def capacity_series(
    sys: KernelSystem,
    cache: TowerCache | None,
    s,
    N: int = 4096,
    budget: int = DEFAULT_BUDGET * 8,
) -> CapacityReport:
    """Partial sums of ``S = sum_k m**k / (u_{2k+1} - u_{2k})`` with a verdict.

    Level masses are streamed as ``sum_y count(y) * delta(y)`` over the
    level-2k image of ``s`` with exact integer counts.  The verdict is
    positive when the tail is certified and either Lambda is finite over the
    levels used or the exact resistance has plateaued.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    m = sys.m
    delta: dict = {}
    terms: list[float] = []
    S = 0.0
    verdict, basis, tail, ratio = INCONCLUSIVE, "series not certified within N levels", None, None
    for j, level in enumerate(iter_pushforward(sys, [s], 2 * (N - 1), budget)):
        if j % 2:
            continue
        k = j // 2
        top = 0
        parts = []
        for pts, count in level.values():
            key = sys.key(pts[0])
            if key not in delta:
                delta[key] = one_step_defect(sys, pts[0])
            parts.append((count, delta[key]))
            top = max(top, count)
        mass = math.fsum((c / top) * d for c, d in parts)
        if mass == 0:
            terms.append(INF)
            return CapacityReport(INF, terms, k + 1, ZERO, f"zero level mass at k={k}", None, None)
        t = (m**k / top) / mass
        terms.append(t)
        S += t
        if S > DIVERGENCE_THRESHOLD:
            return CapacityReport(S, terms, k + 1, ZERO, "partial sum exceeded the divergence threshold", None, None)
        r = _window_ratio(terms)
        if r is not None and r <= RATIO_CAP:
            est = t * r / (1 - r)
            if est < TAIL_RTOL * max(1.0, S):
                tail, ratio = est, r
                basis = "tail certified"
                break
    levels = len(terms)
    if tail is None:
        return CapacityReport(S, terms, levels, verdict, basis, None, None)

    table = IncrementTable(sys, s, levels, budget)
    lam = 1.0
    for k in range(levels):
        lk = _level_lambda(table, k)
        lam = INF if lk is None else max(lam, lk)
    if lam != INF:
        return CapacityReport(S, terms, levels, POSITIVE, "tail certified and Lambda finite", tail, ratio, lam, (S, lam * (S + tail)))
    R1 = _recursion(table, levels)
    R2 = _recursion(IncrementTable(sys, s, 2 * levels, budget), 2 * levels)
    if R2 != INF and abs(R2 - R1) <= PLATEAU_RTOL * R2:
        return CapacityReport(S, terms, levels, POSITIVE, "tail certified and resistance plateau (Lambda infinite)", tail, ratio, lam, (S, R2))
    return CapacityReport(S, terms, levels, INCONCLUSIVE, "tail certified but Lambda infinite and no resistance plateau", tail, ratio, lam, None)
