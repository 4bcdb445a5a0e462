"""Boundary martingale, L2 functional B, shift cocycles and boundary factors."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernel import DEFAULT_PSD_TOL, KernelSystem, PreconditionError, is_psd, iter_pushforward
from .tree import words

BLOCK = 64
WINDOW = 5
PLATEAU_RTOL = 1e-9


class BoundaryPath:
    """A uniform random infinite word, drawn lazily from a counter-based generator.

    Letters are produced in blocks of 64, so ``prefix(n)`` never changes once
    drawn and a path is reproduced exactly from its seed.
    """

    def __init__(self, seed: int, m: int):
        if m < 1:
            raise ValueError("m must be >= 1")
        self.seed = int(seed)
        self.m = m
        self._gen = np.random.Generator(np.random.Philox(self.seed))
        self._letters: list[int] = []

    def prefix(self, n: int) -> tuple:
        while len(self._letters) < n:
            self._letters.extend(int(v) for v in self._gen.integers(0, self.m, size=BLOCK))
        return tuple(self._letters[:n])


def path_seed(seed: int, index: int) -> int:
    """Per-path seed derived from the run seed and the path index."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def martingale_value(sys: KernelSystem, est, s, t, word) -> complex:
    """M_n(s, t; omega) = m**n K_inf(phi_w s, phi_w t) with ``w = omega|n``."""
    n = len(word)
    return sys.m**n * est(sys.phi(word, s), sys.phi(word, t))


def martingale_step_check(sys: KernelSystem, est, s, t, n: int, w) -> tuple[float, float]:
    """|(1/m) sum_i M_{n+1}(wi) - M_n(w)| and the tail allowance ``m**n`` x tails."""
    w = tuple(w)
    if len(w) != n:
        raise ValueError("prefix length must equal n")
    m = sys.m
    x, y = sys.phi(w, s), sys.phi(w, t)
    avg = sum(martingale_value(sys, est, s, t, w + (i,)) for i in range(m)) / m
    res = abs(avg - martingale_value(sys, est, s, t, w))
    allow = m**n * (est.tail(x, y) + sum(est.tail(a, b) for a, b in zip(sys.children(x), sys.children(y))))
    return res, allow


def step_check_all(sys: KernelSystem, est, s, t, n_max: int) -> float:
    """Largest relative excess of the one-step residual over its allowance, all prefixes up to ``n_max``."""
    worst = 0.0
    for n in range(n_max + 1):
        for w in words(sys.m, n):
            res, allow = martingale_step_check(sys, est, s, t, n, w)
            scale = max(1.0, abs(martingale_value(sys, est, s, t, w)))
            worst = max(worst, (res - allow) / scale)
    return worst


def mean_enumerated(sys: KernelSystem, est, s, t, n: int) -> complex:
    """E[M_n] by summing over all of W_n."""
    tot = [martingale_value(sys, est, s, t, w) for w in words(sys.m, n)]
    return complex(math.fsum(v.real for v in tot), math.fsum(v.imag for v in tot)) / sys.m**n


def second_moment_enumerated(sys: KernelSystem, est, s, t, n: int) -> float:
    """E|M_n(s,t)|**2 by summing over all of W_n."""
    return math.fsum(abs(martingale_value(sys, est, s, t, w)) ** 2 for w in words(sys.m, n)) / sys.m**n


@dataclass
class BReport:
    levels: list
    upper_levels: list
    sup: float
    certified: bool
    gamma: list

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "upper_levels": self.upper_levels,
            "B": self.sup if self.certified else math.inf,
            "sup_observed": self.sup,
            "certified": self.certified,
            "gamma": self.gamma,
            "certificate": "last 5 levels nonincreasing (rel 1e-9); u_inf replaced by its certified upper bound",
        }


def _levels(sys: KernelSystem, s, n_max: int):
    for j, level in enumerate(iter_pushforward(sys, [s], n_max)):
        yield j, [(pts[0], count) for pts, count in level.values()]


def b_functional(sys: KernelSystem, est, s, n_max: int = 16) -> BReport:
    """Levels ``m**n sum_{W_n} u_inf(phi_w s)**2`` and their supremum.

    The supremum is certified when the last five levels (evaluated with the
    certified upper bound ``u_hat``) do not increase.
    """
    est.u_inf(s)
    m = sys.m
    levels, upper, gamma = [], [], []
    for n, cls in _levels(sys, s, n_max):
        us = [(est.u_inf(y), est.u_hat(y), c) for y, c in cls]
        levels.append(m**n * math.fsum(c * u * u for u, _, c in us))
        upper.append(m**n * math.fsum(c * h * h for _, h, c in us))
        lo, hi = min(u for u, _, _ in us), max(u for u, _, _ in us)
        gamma.append(1.0 if hi == 0 else (math.inf if lo == 0 else hi / lo))
    tail = upper[-(WINDOW + 1):]
    ok = len(upper) >= WINDOW + 1 and all(b <= a * (1 + PLATEAU_RTOL) for a, b in zip(tail, tail[1:]))
    return BReport(levels, upper, max(upper), ok, gamma)


def gamma_comparability(sys: KernelSystem, est, s, n_max: int = 16) -> dict:
    """Gamma_n = max/min of u_inf over the level-n image, and the bound ``B <= Gamma u_inf(s)**2``."""
    rep = b_functional(sys, est, s, n_max)
    u = est.u_inf(s)
    g = max(rep.gamma)
    bound = g * u * u if g != math.inf else math.inf
    holds = all(b <= gi * u * u * (1 + 1e-12) + 1e-300 for b, gi in zip(rep.levels, rep.gamma) if gi != math.inf)
    return {"gamma": rep.gamma, "gamma_max": g, "bound": bound, "bound_holds": holds}


@dataclass
class BoundaryRun:
    s: object
    t: object
    N: int
    seed: int
    path_seeds: list
    samples: np.ndarray
    K_inf: complex
    B_s: float
    B_t: float
    summary: dict = field(default_factory=dict)


def sample_martingale(sys: KernelSystem, est, s, t, N: int, paths: int, seed: int) -> tuple[list, np.ndarray]:
    """Path seeds and the ``(paths, N+1)`` array of ``M_0..M_N``; no L2 certificate required."""
    m = sys.m
    seeds = [path_seed(seed, j) for j in range(paths)]
    out = np.zeros((paths, N + 1), dtype=complex)
    for j, ps in enumerate(seeds):
        w = BoundaryPath(ps, m).prefix(N)
        x, y = s, t
        for n in range(N + 1):
            out[j, n] = m**n * est(x, y)
            if n < N:
                x, y = sys.branch(w[n], x), sys.branch(w[n], y)
    return seeds, out


def simulate_boundary(sys: KernelSystem, est, s, t, N: int, paths: int, seed: int, b_levels: int = 16) -> BoundaryRun:
    """Sample ``M_0..M_N`` along ``paths`` random words and summarise.

    Refuses unless B is certified finite at both points.
    """
    if N < 0 or paths < 1:
        raise ValueError("need N >= 0 and paths >= 1")
    Bs, Bt = b_functional(sys, est, s, b_levels), b_functional(sys, est, t, b_levels)
    for name, rep in (("s", Bs), ("t", Bt)):
        if not rep.certified:
            raise PreconditionError(
                f"B({name}) is not certified finite, so the martingale need not be L2-bounded; "
                "choose points where the level square sums stop growing, or raise --depth for the B check"
            )
    seeds, out = sample_martingale(sys, est, s, t, N, paths, seed)
    K = est(s, t)
    last = out[:, -1]
    mean = complex(np.mean(last))
    se = float(np.std(last, ddof=1) / math.sqrt(paths)) if paths > 1 else math.inf
    gap = abs(mean - K)
    if gap <= 1e-12 * max(1.0, abs(K)):
        z = 0.0
    else:
        z = gap / se if se > 0 else math.inf
    window = out[:, max(0, N - WINDOW):]
    cauchy = float(np.max(np.abs(np.diff(window, axis=1)))) if window.shape[1] > 1 else 0.0
    second = float(np.mean(np.abs(last) ** 2))
    bound = math.sqrt(Bs.sup * Bt.sup)
    run = BoundaryRun(s, t, N, seed, seeds, out, K, Bs.sup, Bt.sup)
    run.summary = {
        "mean_M_N": mean,
        "std_error": se,
        "K_inf": K,
        "z_score": z,
        "mean_within_5se": bool(z <= 5),
        "second_moment_M_N": second,
        "L2_bound": bound,
        "L2_bound_ok": bool(second <= bound * (1 + 1e-9) + 1e-12),
        "cauchy_window_max": cauchy,
        "M_inf_estimate": "M_N at the last level; see cauchy_window_max",
    }
    return run


def samples_csv(run: BoundaryRun) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path_seed", "n", "Re", "Im"])
    for ps, row in zip(run.path_seeds, run.samples):
        for n, v in enumerate(row):
            w.writerow([ps, n, format(v.real, ".17g"), format(v.imag, ".17g")])
    return buf.getvalue()


def square_function_exact(sys: KernelSystem, est, s, t, n_exact: int) -> dict:
    """E|D_n|**2 for n < n_exact by enumeration and the partial identity.

    ``sum_{n<N} E|D_n|**2 = E|M_N|**2 - |K_inf(s,t)|**2`` with ``N = n_exact``.
    """
    m = sys.m
    ED = []
    for n in range(n_exact):
        tot = []
        for w in words(m, n + 1):
            d = martingale_value(sys, est, s, t, w) - martingale_value(sys, est, s, t, w[:-1])
            tot.append(abs(d) ** 2)
        ED.append(math.fsum(tot) / m ** (n + 1))
    lhs = math.fsum(ED)
    rhs = second_moment_enumerated(sys, est, s, t, n_exact) - abs(est(s, t)) ** 2
    return {"E_D2": ED, "lhs": lhs, "rhs": rhs, "residual": abs(lhs - rhs) / max(1.0, abs(rhs))}


def square_function_mc(run: BoundaryRun) -> dict:
    """Monte-Carlo sum of E|D_n|**2 against E|M_N|**2 - |K_inf|**2 and the B bound."""
    D = np.diff(run.samples, axis=1)
    series = float(np.sum(np.mean(np.abs(D) ** 2, axis=0)))
    var = float(np.mean(np.abs(run.samples[:, -1]) ** 2)) - abs(run.K_inf) ** 2
    bound = math.sqrt(run.B_s * run.B_t) - abs(run.K_inf) ** 2
    return {"series": series, "variance": var, "bound": bound, "bound_ok": bool(series <= bound * (1 + 1e-9) + 1e-12)}


def cocycle_check(sys: KernelSystem, est, s, t, n: int, i: int, prefix) -> dict:
    """Residuals of the finite-depth cocycle, its shift form and the h-cocycle.

    ``M_{n+1}(s,t; i w) = m M_n(phi_i s, phi_i t; w)``; the left side follows
    the full word from ``(s, t)``, the right side restarts at the image points.
    """
    prefix = tuple(prefix)
    if len(prefix) < n:
        raise ValueError("prefix shorter than n")
    m = sys.m
    w = prefix[:n]
    lhs = martingale_value(sys, est, s, t, (i,) + w)
    rhs = m * martingale_value(sys, est, sys.branch(i, s), sys.branch(i, t), w)
    r1 = abs(lhs - rhs) / max(1.0, abs(lhs))
    full = (i,) + w
    j = full[0]
    shift = abs(martingale_value(sys, est, s, t, full) - m * martingale_value(sys, est, sys.branch(j, s), sys.branch(j, t), full[1:]))
    h_l = martingale_value(sys, est, s, s, full)
    h_r = m * martingale_value(sys, est, sys.branch(j, s), sys.branch(j, s), full[1:])
    return {
        "cocycle": r1,
        "shift_form": shift / max(1.0, abs(lhs)),
        "h_cocycle": abs(h_l - h_r) / max(1.0, abs(h_l)),
    }


def domination_and_normalize(M_st: complex, h_s: float, h_t: float, tol: float = 1e-10) -> tuple[bool, complex]:
    """Check ``|M(s,t)|**2 <= h(s) h(t)`` and return the normalized value (0 when h vanishes)."""
    hs, ht = float(np.real(h_s)), float(np.real(h_t))
    ok = abs(M_st) ** 2 <= hs * ht + tol * max(1.0, hs * ht)
    if hs <= 0 or ht <= 0:
        return ok, 0j
    return ok, complex(M_st) / math.sqrt(hs * ht)


def path_gram(sys: KernelSystem, est, points: Sequence, word) -> np.ndarray:
    """``[M_N(s_i, s_j; omega)]`` along one path prefix."""
    pushed = [sys.phi(word, x) for x in points]
    scale = sys.m ** len(word)
    return np.array([[scale * est(a, b) for b in pushed] for a in pushed], dtype=complex)


def path_checks(sys: KernelSystem, est, points: Sequence, N: int, paths: int, seed: int, tol: float = DEFAULT_PSD_TOL) -> dict:
    """Per-path domination, normalization bounds and Gram PSD at depth N."""
    pts = list(points)
    fails_dom, fails_psd, fails_norm = 0, 0, 0
    lam_min = math.inf
    for j in range(paths):
        w = BoundaryPath(path_seed(seed, j), sys.m).prefix(N)
        G = path_gram(sys, est, pts, w)
        rep = is_psd(G, tol)
        lam_min = min(lam_min, rep.lam_min / max(1.0, rep.lam_max))
        fails_psd += not rep.ok
        for a in range(len(pts)):
            ok, kt = domination_and_normalize(G[a, a], G[a, a].real, G[a, a].real)
            if G[a, a].real > 0 and abs(kt - 1) > 1e-12:
                fails_norm += 1
            for b in range(len(pts)):
                ok, kt = domination_and_normalize(G[a, b], G[a, a].real, G[b, b].real)
                fails_dom += not ok
                fails_norm += abs(kt) > 1 + 1e-9
    return {
        "paths": paths,
        "domination_failures": fails_dom,
        "psd_failures": fails_psd,
        "normalization_failures": fails_norm,
        "min_relative_eigenvalue": lam_min,
    }
