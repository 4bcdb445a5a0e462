"""Cylinder weights on the boundary and the weighted kernels J_f.

A depth-r cylinder weight depends on the first r letters only.  For such f

    J_f(s, t) = int f M_inf dmu = sum_{w in W_r} f(w) K_inf(phi_w s, phi_w t),

because ``E[1_[w] M_n] = m**-r M_r(w)`` for every ``n >= r``.  The shift
``(f o sigma)(i w) = f(w)`` is a depth-(r+1) cylinder, and
``f* = sup_n f o sigma^n`` equals ``max f`` almost surely: under the uniform
product measure every finite word occurs in the tail of almost every path, so
``f o sigma^n`` visits the largest table entry infinitely often.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .boundary import BoundaryPath, martingale_value
from .kernel import DEFAULT_PSD_TOL, KernelSystem, PreconditionError, apply_L, gram, is_psd
from .systems import ConfigError
from .tree import word_index, words


@dataclass(frozen=True, eq=False)
class CylinderWeight:
    """``f(omega) = table[index(omega|r)]``, index base m with the first letter most significant."""

    m: int
    depth: int
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float).ravel()
        if self.depth < 0 or t.shape != (self.m**self.depth,):
            raise ValueError(f"a depth-{self.depth} weight needs {self.m ** self.depth} entries")
        if np.any(~np.isfinite(t)) or np.any(t < 0):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "table", t)

    @classmethod
    def constant(cls, m: int, c: float) -> "CylinderWeight":
        return cls(m, 0, [c])

    @classmethod
    def from_json(cls, doc: dict, m: int) -> "CylinderWeight":
        if not isinstance(doc, dict) or "depth" not in doc or "table" not in doc:
            raise ConfigError('schema violation: weight document needs "depth" and "table"')
        r, table = doc["depth"], doc["table"]
        if not isinstance(r, int) or isinstance(r, bool) or r < 0:
            raise ConfigError("schema violation: depth must be an integer >= 0")
        if not isinstance(table, list) or len(table) != m**r:
            raise ConfigError(f"schema violation: table must hold m**depth = {m ** r} numbers")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in table):
            raise ConfigError("schema violation: table entries must be numbers")
        try:
            return cls(m, r, table)
        except ValueError as exc:
            raise ConfigError(f"schema violation: {exc}") from None

    @classmethod
    def load(cls, path, m: int) -> "CylinderWeight":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"schema violation: invalid JSON ({exc})") from None
        return cls.from_json(doc, m)

    def __call__(self, word) -> float:
        if len(word) < self.depth:
            raise ValueError("word shorter than the weight depth")
        return float(self.table[word_index(word[: self.depth], self.m)])

    def shift(self) -> "CylinderWeight":
        """f o sigma: ignores the first letter."""
        return CylinderWeight(self.m, self.depth + 1, np.tile(self.table, self.m))

    def shift_n(self, n: int) -> "CylinderWeight":
        f = self
        for _ in range(n):
            f = f.shift()
        return f

    def lift(self, depth: int) -> "CylinderWeight":
        """The same function written at a larger depth."""
        if depth < self.depth:
            raise ValueError("cannot lift to a smaller depth")
        return CylinderWeight(self.m, depth, np.repeat(self.table, self.m ** (depth - self.depth)))

    def star(self) -> "CylinderWeight":
        """f* = sup_n f o sigma^n, which is a.s. the constant max f."""
        return CylinderWeight.constant(self.m, float(self.table.max()))

    def __le__(self, other: "CylinderWeight") -> bool:
        d = max(self.depth, other.depth)
        return bool(np.all(self.lift(d).table <= other.lift(d).table))

    def to_json(self) -> dict:
        return {"depth": self.depth, "table": [float(v) for v in self.table]}


def domain_sum(sys: KernelSystem, est, f: CylinderWeight, s) -> float:
    """sum_w f(w) u_inf(phi_w s) = int f h(s; .) dmu for a cylinder f."""
    return math.fsum(f.table[word_index(w, sys.m)] * est.u_inf(sys.phi(w, s)) for w in words(sys.m, f.depth))


class WeightedKernel:
    """J_f as a kernel evaluator."""

    def __init__(self, sys: KernelSystem, est, f: CylinderWeight):
        if f.m != sys.m:
            raise ValueError("weight and system have different branching")
        self.sys, self.est, self.f = sys, est, f
        self._ws = [(w, f.table[word_index(w, sys.m)]) for w in words(sys.m, f.depth)]

    def __call__(self, s, t) -> complex:
        for x in (s, t):
            if not math.isfinite(domain_sum(self.sys, self.est, self.f, x)):
                raise PreconditionError(f"point {x!r} is outside the weight domain")
        vals = [c * self.est(self.sys.phi(w, s), self.sys.phi(w, t)) for w, c in self._ws if c != 0]
        return complex(math.fsum(v.real for v in vals), math.fsum(v.imag for v in vals))


def weighted_kernel(sys: KernelSystem, est, f: CylinderWeight, s, t) -> complex:
    return WeightedKernel(sys, est, f)(s, t)


def integral_oracle(sys: KernelSystem, est, f: CylinderWeight, s, t, n: int) -> complex:
    """int f M_n dmu by enumerating W_n (n >= depth)."""
    if n < f.depth:
        raise ValueError("n must be at least the weight depth")
    vals = [f(w) * martingale_value(sys, est, s, t, w) for w in words(sys.m, n)]
    tot = complex(math.fsum(v.real for v in vals), math.fsum(v.imag for v in vals))
    return tot / sys.m**n


def shift_identity_check(sys: KernelSystem, est, f: CylinderWeight, sample: Sequence) -> float:
    """max over sample pairs of |L J_f - J_{f o sigma}|, relative to max(1, |J|)."""
    J = WeightedKernel(sys, est, f)
    Js = WeightedKernel(sys, est, f.shift())
    worst = 0.0
    for a in sample:
        for b in sample:
            lhs = apply_L(sys, J, a, b)
            rhs = Js(a, b)
            worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
    return worst


def iterated_shift_check(sys: KernelSystem, est, f: CylinderWeight, sample: Sequence, n: int) -> float:
    """L^n J_f by repeated application of L against J_{f o sigma^n}."""
    J = WeightedKernel(sys, est, f)

    def Ln(k):
        if k == 0:
            return J
        inner = Ln(k - 1)
        return lambda a, b: apply_L(sys, inner, a, b)

    lhs = Ln(n)
    rhs = WeightedKernel(sys, est, f.shift_n(n))
    return max(abs(lhs(a, b) - rhs(a, b)) / max(1.0, abs(rhs(a, b))) for a in sample for b in sample)


@dataclass
class MonotonicityReport:
    ok: bool
    lam_min: float


def monotonicity_check(sys: KernelSystem, est, f: CylinderWeight, g: CylinderWeight, sample: Sequence, tol: float = DEFAULT_PSD_TOL) -> MonotonicityReport:
    """Gram(J_g - J_f) PSD on the sample; requires f <= g."""
    if not f <= g:
        raise PreconditionError("monotonicity needs f <= g entrywise")
    Jf, Jg = WeightedKernel(sys, est, f), WeightedKernel(sys, est, g)
    rep = is_psd(gram(lambda a, b: Jg(a, b) - Jf(a, b), sample), tol)
    return MonotonicityReport(rep.ok, rep.lam_min)


def star_weight_majorant(sys: KernelSystem, est, f: CylinderWeight, n_max: int, sample: Sequence, tol: float = DEFAULT_PSD_TOL) -> dict:
    """Check ``L^n J_f <= J_{f*}`` for n <= n_max and ``L J_{f*} <= J_{f*}`` on the sample."""
    fs = f.star()
    Jstar = WeightedKernel(sys, est, fs)
    Gstar = gram(Jstar, sample)
    orbit = []
    for n in range(n_max + 1):
        Jn = WeightedKernel(sys, est, f.shift_n(n))
        rep = is_psd(Gstar.entries - gram(Jn, sample).entries, tol)
        orbit.append({"n": n, "ok": rep.ok, "lam_min": rep.lam_min})
    LJ = gram(lambda a, b: apply_L(sys, Jstar, a, b), sample)
    sup = is_psd(Gstar.entries - LJ.entries, tol)
    closed = max(
        abs(Jstar(a, b) - fs.table[0] * est(a, b)) / max(1.0, abs(Jstar(a, b))) for a in sample for b in sample
    )
    return {
        "f_star": float(fs.table[0]),
        "orbit": orbit,
        "orbit_ok": all(o["ok"] for o in orbit),
        "superharmonic_ok": sup.ok,
        "superharmonic_lam_min": sup.lam_min,
        "closed_form_residual": closed,
    }


def occupancy_check(m: int, r: int, steps: int = 10**6, seed: int = 0, skip: int = 0) -> dict:
    """Does every word of length r occur in ``steps`` letters of a sampled tail?"""
    path = BoundaryPath(seed, m)
    letters = np.array(path.prefix(skip + steps)[skip:], dtype=np.int64)
    if r == 0:
        return {"words": 1, "seen": 1, "ok": True}
    codes = np.zeros(len(letters) - r + 1, dtype=np.int64)
    for j in range(r):
        codes = codes * m + letters[j : len(letters) - r + 1 + j]
    seen = np.unique(codes).size
    return {"words": m**r, "seen": int(seen), "ok": bool(seen == m**r)}
