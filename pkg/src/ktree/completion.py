"""X_fin detection and the invariant completion K_inf with certified tail bounds."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kernel import (
    CLIP_TOL,
    DEFAULT_PSD_TOL,
    KernelSystem,
    PreconditionError,
    TowerCache,
    apply_L,
    gram,
    is_psd,
    loewner_geq,
)
from .systems import FINITE_WARNING
from .tree import level_classes

DIVERGENCE_U = 1e15
RATIO_CAP = 0.99
WINDOW = 5
# increments below ROUNDOFF * u, or below m**n subnormal quanta at level n, are float noise
ROUNDOFF = 64 * np.finfo(float).eps
SUBNORMAL_NOISE = 8 * math.ulp(0.0)
CERTIFICATE_NOTE = "u_hat is an empirical geometric-window bound, not a proof"

IN, OUT, INCONCLUSIVE = "in", "out", "inconclusive"


@dataclass(frozen=True)
class ProbeResult:
    verdict: str
    N: int
    u_N: float
    u_hat: float
    ratio: float | None
    last_increment: float

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "N": self.N,
            "u_N": self.u_N,
            "u_hat": self.u_hat,
            "ratio": self.ratio,
            "last_increment": self.last_increment,
            "note": CERTIFICATE_NOTE,
        }


def _increments(u: np.ndarray, m: int = 1) -> list[float]:
    out = []
    for n, (a, b) in enumerate(zip(u, u[1:])):
        d = float(b - a)
        if abs(d) <= ROUNDOFF * max(abs(float(a)), abs(float(b))) + SUBNORMAL_NOISE * float(m) ** (n + 1):
            d = 0.0
        if d < 0:
            if d < -CLIP_TOL * max(1.0, abs(float(b))):
                raise PreconditionError(f"diagonal tower decreases by {d:.3e}: subinvariance fails")
            d = 0.0
        out.append(d)
    return out


def _ratios(ds: Sequence[float]) -> list[float]:
    rs = []
    for a, b in zip(ds, ds[1:]):
        if b == 0:
            rs.append(0.0)
        elif a == 0:
            rs.append(math.inf)
        else:
            rs.append(b / a)
    return rs


def xfin_probe(sys: KernelSystem, cache: TowerCache, s, N_max: int = 64, stall_tol: float = 1e-12) -> ProbeResult:
    """Classify ``s`` as in or out of X_fin from the first ``N_max`` diagonals.

    ``in``: the last increment is below ``stall_tol * max(1, u_N)`` and the
    last five increment ratios are at most ``r <= 0.99``; then
    ``u_hat = u_N + d * r / (1 - r)``.  ``out``: ``u_N > 1e15`` or the window
    increments are positive and nondecreasing.
    """
    if N_max < 2:
        raise ValueError("N_max must be >= 2")
    u = cache.diagonals(s, N_max)
    for n, v in enumerate(u):
        if v > DIVERGENCE_U:
            return ProbeResult(OUT, n, float(v), math.inf, None, math.inf)
    ds = _increments(u, sys.m)
    uN = float(u[-1])
    last = ds[-1]
    window = ds[-(WINDOW + 1):]
    rs = _ratios(window)
    r = max(rs) if rs else None
    if r is not None and last <= stall_tol * max(1.0, uN) and r <= RATIO_CAP:
        return ProbeResult(IN, N_max, uN, uN + last * r / (1 - r), r, last)
    if all(d > 0 for d in window) and r is not None and min(rs) >= 1.0:
        return ProbeResult(OUT, N_max, uN, math.inf, r, last)
    return ProbeResult(INCONCLUSIVE, N_max, uN, math.inf, r, last)


@dataclass(frozen=True)
class CompletionEstimate:
    N_used: int
    value: complex
    tail_bound: float
    converged: bool
    u_hat: tuple = ()

    def to_dict(self) -> dict:
        return {
            "N_used": self.N_used,
            "value": self.value,
            "tail_bound": self.tail_bound,
            "converged": self.converged,
            "note": CERTIFICATE_NOTE,
        }


class InvariantCompletion:
    """Evaluator for K_inf on X_fin, cached by point keys.

    ``est(s, t)`` returns the depth-``N_max`` value; ``est.tail(s, t)`` the
    certified bound on ``|K_inf(s,t) - K_N(s,t)|``.
    """

    def __init__(self, sys: KernelSystem, cache: TowerCache | None = None, N_max: int = 64, stall_tol: float = 1e-12, warn: bool = True):
        self.sys = sys
        self.cache = cache if cache is not None else TowerCache(sys)
        self.N_max = N_max
        self.stall_tol = stall_tol
        self._probes: dict = {}
        self._values: dict = {}
        if warn and sys.finite is not None and sys.m >= 2:
            warnings.warn(FINITE_WARNING, stacklevel=2)

    def probe(self, s) -> ProbeResult:
        k = self.sys.key(s)
        res = self._probes.get(k)
        if res is None:
            res = self._probes[k] = xfin_probe(self.sys, self.cache, s, self.N_max, self.stall_tol)
        return res

    def in_xfin(self, s) -> bool:
        return self.probe(s).verdict == IN

    def _require(self, s) -> ProbeResult:
        pr = self.probe(s)
        if pr.verdict != IN:
            raise PreconditionError(f"point {s!r} is not certified in X_fin (probe: {pr.verdict})")
        return pr

    def estimate(self, s, t) -> CompletionEstimate:
        k = (self.sys.key(s), self.sys.key(t))
        est = self._values.get(k)
        if est is None:
            ps, pt = self._require(s), self._require(t)
            value = self.cache.tower(s, t, self.N_max)
            tail = math.sqrt(max(ps.u_hat - ps.u_N, 0.0)) * math.sqrt(max(pt.u_hat - pt.u_N, 0.0))
            est = self._values[k] = CompletionEstimate(self.N_max, value, tail, True, (ps.u_hat, pt.u_hat))
        return est

    def __call__(self, s, t) -> complex:
        return self.estimate(s, t).value

    def tail(self, s, t) -> float:
        return self.estimate(s, t).tail_bound

    def u_inf(self, s) -> float:
        return max(self._require(s).u_N, 0.0)

    def u_hat(self, s) -> float:
        return self._require(s).u_hat


def complete_kernel(sys: KernelSystem, cache: TowerCache, s, t, N_max: int = 64, stall_tol: float = 1e-12) -> CompletionEstimate:
    """K_N(s,t) with the Cauchy-Schwarz tail ``sqrt(u_hat(s) - u_N(s)) sqrt(u_hat(t) - u_N(t))``."""
    return InvariantCompletion(sys, cache, N_max, stall_tol, warn=False).estimate(s, t)


@dataclass
class InvarianceReport:
    residual: float
    allowance: float
    pairs: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.residual <= self.allowance + 1e-12


def invariance_residual(sys: KernelSystem, est: InvariantCompletion, sample: Sequence) -> InvarianceReport:
    """max |L K_inf - K_inf| over sample pairs, with the summed tail allowance per pair."""
    pairs, worst, allow = [], 0.0, 0.0
    for a in sample:
        for b in sample:
            lhs = apply_L(sys, est, a, b)
            r = abs(lhs - est(a, b))
            tails = est.tail(a, b) + sum(est.tail(x, y) for x, y in zip(sys.children(a), sys.children(b)))
            pairs.append((a, b, r, tails))
            if r - tails > worst - allow:
                worst, allow = r, tails
    return InvarianceReport(worst, allow, pairs)


PASS, PRECONDITION, VIOLATION = "pass", "precondition-failed", "violation"


@dataclass
class MinimalityReport:
    verdict: str
    detail: str
    levels_checked: int = 0


def minimality_check(
    sys: KernelSystem,
    J: Callable,
    sample: Sequence,
    N: int,
    cache: TowerCache | None = None,
    tol: float = DEFAULT_PSD_TOL,
    inv_tol: float = 1e-10,
) -> MinimalityReport:
    """Falsification test: a kernel with ``J >= K`` and ``LJ = J`` must dominate every K_n.

    The candidate's own properties are checked first; failing them is a
    precondition failure, not a counterexample to minimality.
    """
    cache = cache if cache is not None else TowerCache(sys)
    GJ = gram(J, sample)
    if not loewner_geq(GJ, gram(sys.seed, sample), tol):
        return MinimalityReport(PRECONDITION, "candidate does not dominate the seed on the sample")
    for a in sample:
        for b in sample:
            lj = apply_L(sys, J, a, b)
            if abs(lj - J(a, b)) > inv_tol * max(1.0, abs(J(a, b))):
                return MinimalityReport(PRECONDITION, f"candidate is not L-invariant at ({a!r}, {b!r})")
    for n in range(N + 1):
        Kn = gram(lambda x, y: cache.tower(x, y, n), sample)
        if not loewner_geq(GJ, Kn, tol):
            return MinimalityReport(VIOLATION, f"Gram(J) - Gram(K_{n}) is not PSD", n)
    return MinimalityReport(PASS, f"Gram(J) dominates K_0..K_{N}", N)


@dataclass
class LevelMassReport:
    delta: list
    telescoping_residual: float
    A: list
    q: float
    verdict: str
    bound: float | None
    ratio: float | None


def levelmass_criterion(sys: KernelSystem, cache: TowerCache, s, k_max: int, q: float = 2.0) -> LevelMassReport:
    """Level masses Delta_k and the Hoelder majorants

    ``A_k = m**(k(1 - 1/q)) (sum_{W_k} a**q)**(1/q)`` (``m**k max a`` for q = inf).
    The verdict is ``in X_fin`` when ``sum A_k`` passes the geometric window
    test, with ``u_inf <= u_0 + sum A_k``.
    """
    if not (q > 1):
        raise ValueError("q must lie in (1, inf]")
    m = sys.m
    deltas, A = [], []
    resid = 0.0
    u = cache.diagonals(s, 2 * k_max + 1)
    for k in range(k_max + 1):
        cls = [(count, cache.increment(y, k)) for y, count in level_classes(sys, s, k, cache.budget)]
        d = math.fsum(c * a for c, a in cls)
        deltas.append(d)
        ref = u[2 * k + 1] - u[2 * k]
        resid = max(resid, abs(d - ref) / max(1.0, abs(u[2 * k + 1])))
        if q == math.inf:
            A.append(float(m**k) * max(a for _, a in cls))
        else:
            top = max(a for _, a in cls)
            if top == 0:
                A.append(0.0)
            else:
                inner = math.fsum(c * (a / top) ** q for c, a in cls)
                A.append(float(m) ** (k * (1 - 1 / q)) * top * inner ** (1 / q))
    rs = _ratios(A[-(WINDOW + 1):]) if len(A) >= WINDOW + 1 else []
    r = max(rs) if rs else None
    total = math.fsum(A)
    if r is not None and r <= RATIO_CAP:
        tail = A[-1] * r / (1 - r)
        return LevelMassReport(deltas, resid, A, q, "in X_fin", float(u[0]) + total + tail, r)
    return LevelMassReport(deltas, resid, A, q, "no certificate", None, r)
