"""Shipped fixtures, the finite-system format and the eigen-seed generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from sys import float_info
from typing import Sequence

import numpy as np

from .kernel import (
    HERMITIAN_TOL,
    KernelSystem,
    KtreeError,
    PreconditionError,
    is_psd,
)

PSD_LOAD_TOL = 1e-9
FINITE_WARNING = (
    "finite system: the completion can be nonzero, but for m >= 2 the boundary "
    "L2 functional B(s) is infinite wherever u_inf(s) > 0, so boundary statistics "
    "only exist at points where the completion vanishes"
)


class ConfigError(KtreeError, ValueError):
    """Invalid system or weight document."""


@dataclass(frozen=True, eq=False)
class FiniteSystem:
    """Maps ``phi_i`` on ``{0..p-1}`` stored as an ``(m, p)`` integer array.

    ``kernel`` may be None while a seed is being generated.
    """

    maps: np.ndarray
    kernel: np.ndarray | None = None
    name: str = "finite"
    sample_points: tuple = ()

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.int64)
        if maps.ndim != 2 or maps.shape[0] < 1 or maps.shape[1] < 1:
            raise ConfigError("schema violation: maps must be a nonempty m x p array")
        if maps.min() < 0 or maps.max() >= maps.shape[1]:
            raise ConfigError("map index out of range")
        object.__setattr__(self, "maps", maps)
        if self.kernel is not None:
            K = np.asarray(self.kernel, dtype=complex)
            if K.shape != (self.p, self.p):
                raise ConfigError(f"schema violation: kernel must be {self.p} x {self.p}")
            object.__setattr__(self, "kernel", K)

    @property
    def m(self) -> int:
        return self.maps.shape[0]

    @property
    def p(self) -> int:
        return self.maps.shape[1]

    def count_matrix(self) -> np.ndarray:
        """``A[x, y] = #{i : phi_i(x) = y}``."""
        A = np.zeros((self.p, self.p))
        for i in range(self.m):
            np.add.at(A, (np.arange(self.p), self.maps[i]), 1.0)
        return A

    def pullback(self, J: np.ndarray) -> np.ndarray:
        """Matrix form of L: ``(LJ)[x, y] = sum_i J[phi_i x, phi_i y]``."""
        J = np.asarray(J)
        return sum(J[np.ix_(self.maps[i], self.maps[i])] for i in range(self.m))

    def with_kernel(self, kernel) -> "FiniteSystem":
        return FiniteSystem(self.maps, kernel, self.name, self.sample_points)

    def system(self) -> KernelSystem:
        if self.kernel is None:
            raise PreconditionError("finite system has no kernel")
        rows = [[complex(v) for v in row] for row in self.kernel]
        maps = [[int(v) for v in row] for row in self.maps]
        p = self.p

        def parse(text: str) -> int:
            x = int(text)
            if not 0 <= x < p:
                raise ValueError(f"point {x} outside 0..{p - 1}")
            return x

        return KernelSystem(
            m=self.m,
            branch=lambda i, x: maps[i][x],
            seed=lambda s, t: rows[s][t],
            name=self.name,
            parse_point=parse,
            finite=self,
            sample_points=tuple(self.sample_points) or tuple(range(p)),
        )


# ---------------------------------------------------------------- fixtures


def fixture_E1(m: int = 2) -> KernelSystem:
    """One point fixed by all ``m`` maps, seed 1: ``u_n = m**n``."""
    if int(m) != m or m < 2:
        raise ValueError("E1 needs an integer m >= 2")
    m = int(m)

    def parse(text: str) -> int:
        if int(text) != 0:
            raise ValueError("E1 has the single point 0")
        return 0

    closed = {
        "u": lambda n: float(m**n),
        "increment": lambda k: float((m - 1) * m**k),
        "C": lambda k: float((m - 1) * m**k),
        "R": lambda N: m * (1.0 - float(m) ** -N) / (m - 1) ** 2,
        "R_inf": m / (m - 1) ** 2,
    }
    return KernelSystem(
        m=m,
        branch=lambda i, x: 0,
        seed=lambda s, t: 1 + 0j,
        key=lambda x: 0,
        name=f"E1(m={m})",
        parse_point=parse,
        sample_points=(0,),
        closed_forms=closed,
    )


def _unit_interval(text: str) -> float:
    x = float(text)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"point {x} outside [0, 1]")
    return x


def _geo_mean(s: float, t: float) -> float:
    p = s * t
    # below the normal range the product loses digits; split the root instead
    return math.sqrt(p) if p >= float_info.min else math.sqrt(s) * math.sqrt(t)


def fixture_E2() -> KernelSystem:
    """``X = [0, 1]``, both maps ``x/2``, seed ``sqrt(st)``; exactly invariant."""
    closed = {
        "K": _geo_mean,
        "u_inf": lambda s: s,
        "B": lambda s: s * s,
    }
    return KernelSystem(
        m=2,
        branch=lambda i, x: x / 2,
        seed=lambda s, t: complex(_geo_mean(s, t)),
        key=float,
        name="E2",
        parse_point=_unit_interval,
        sample_points=(0.1, 0.5, 0.9),
        closed_forms=closed,
    )


# ---------------------------------------------------------------- eigen seeds


@dataclass(frozen=True, eq=False)
class EigenSeed:
    system: FiniteSystem
    rho: float
    residual: float
    converged: bool
    support: tuple


def forward_closure(fin: FiniteSystem, start: Sequence[int]) -> set:
    seen = set(int(x) for x in start)
    stack = list(seen)
    while stack:
        x = stack.pop()
        for i in range(fin.m):
            y = int(fin.maps[i, x])
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return seen


def eigen_seed(
    fin: FiniteSystem,
    iters: int = 2**40,
    tol: float = 1e-10,
    support: Sequence[int] | None = None,
) -> EigenSeed:
    """Leading PSD eigen-kernel ``V`` of L, with ``trace V = 1``.

    With ``support`` the iteration runs on the face of kernels carried by
    ``support x support``; the complement must be forward invariant so the
    face is L-invariant.  ``iters`` power steps are realised by repeated
    squaring of the shifted operator ``L + I`` (the shift removes periodic
    peripheral eigenvalues), followed by a PSD projection and a few plain
    polishing steps.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    p, m = fin.p, fin.m
    U = sorted(range(p)) if support is None else sorted(set(int(x) for x in support))
    if not U or U[0] < 0 or U[-1] >= p:
        raise PreconditionError("support must be a nonempty subset of the points")
    inside = np.zeros(p, dtype=bool)
    inside[U] = True
    for i in range(m):
        if np.any(inside[fin.maps[i][~inside]]):
            raise PreconditionError("support complement is not forward invariant")

    idx = [x * p + y for x in U for y in U]
    M = np.zeros((p * p, p * p))
    for i in range(m):
        S = np.zeros((p, p))
        S[np.arange(p), fin.maps[i]] = 1.0
        M += np.kron(S, S)
    B = M[np.ix_(idx, idx)] + np.eye(len(idx))

    P = B / B.max()
    for _ in range(max(0, math.ceil(math.log2(iters)))):
        P = P @ P
        top = P.max()
        if top == 0:
            break
        P /= top
    start = np.zeros((p, p))
    start[U, U] = 1.0
    v = P @ start[np.ix_(U, U)].ravel()
    if not np.any(v):
        v = start[np.ix_(U, U)].ravel()

    block = np.ix_(U, U)

    def project(W):
        # clip on the face block only so entries off the face stay exactly zero
        Wb = (W[block] + W[block].T) / 2
        lam, Q = np.linalg.eigh(Wb)
        Wb = (Q * np.clip(lam, 0, None)) @ Q.T
        out = np.zeros((p, p))
        tr = np.trace(Wb)
        out[block] = Wb / tr if tr > 0 else Wb
        return out

    full = np.zeros((p, p))
    full[np.ix_(U, U)] = v.reshape(len(U), len(U))
    V = project(full)
    for _ in range(min(iters, 64)):
        V = project(fin.pullback(V) + V)
    LV = fin.pullback(V)
    nv = float(np.linalg.norm(V))
    rho = float(np.sum(V * LV) / nv**2) if nv > 0 else 0.0
    residual = float(np.linalg.norm(LV - rho * V) / nv) if nv > 0 else math.inf
    if rho < 1 - 1e-12:
        raise PreconditionError(f"leading eigenvalue {rho:.6g} < 1: the seed would not be subinvariant")
    out = FiniteSystem(fin.maps, V, fin.name, fin.sample_points)
    return EigenSeed(out, rho, residual, residual <= tol, tuple(U))


def random_maps(p: int, m: int, rng: np.random.Generator) -> FiniteSystem:
    return FiniteSystem(rng.integers(0, p, size=(m, p)), None, f"random(p={p},m={m})")


def random_face(fin: FiniteSystem, rng: np.random.Generator) -> list[int]:
    """Complement of the forward closure of one random point (possibly empty)."""
    C = forward_closure(fin, [int(rng.integers(fin.p))])
    return [x for x in range(fin.p) if x not in C]


def random_eigen_seed(p: int, m: int, seed: int, **kw) -> EigenSeed:
    """Full-cone eigen-seed on random maps (``rho = m``)."""
    rng = np.random.default_rng(seed)
    return eigen_seed(random_maps(p, m, rng), **kw)


def phase_sweep(count: int = 20, seed: int = 0, margin: float = 0.05, max_trials: int = 20000) -> list[dict]:
    """Face eigen-seeds with ``1 < rho < m`` and ``rho**2`` at least ``margin`` away from ``m``.

    Returns about half above and half below the threshold.  Each record holds
    the seed, ``rho``, the threshold side and a base point with ``V_ss > 0``.
    """
    rng = np.random.default_rng(seed)
    above, below = [], []
    want_hi = count - count // 2
    want_lo = count // 2
    for _ in range(max_trials):
        if len(above) >= want_hi and len(below) >= want_lo:
            break
        m = int(rng.choice([2, 3]))
        p = int(rng.integers(3, 9))
        fin = random_maps(p, m, rng)
        U = random_face(fin, rng)
        if not U:
            continue
        try:
            es = eigen_seed(fin, support=U)
        except PreconditionError:
            continue
        if not es.converged or abs(es.rho**2 - m) <= margin or not 1 + 1e-6 < es.rho < m - 1e-6:
            continue
        diag = np.real(np.diag(es.system.kernel))
        s = int(np.argmax(diag))
        if diag[s] <= 0:
            continue
        rec = {"seed": es, "m": m, "p": p, "rho": es.rho, "s": s, "positive": es.rho**2 > m}
        bucket, want = (above, want_hi) if rec["positive"] else (below, want_lo)
        if len(bucket) < want:
            bucket.append(rec)
    out = above + below
    if len(out) < count:
        raise RuntimeError("phase sweep did not find enough systems")
    return out


# ---------------------------------------------------------------- config documents


def _number(v):
    if isinstance(v, bool):
        raise ConfigError("schema violation: booleans are not numbers")
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, dict) and set(v) <= {"re", "im"}:
        return complex(float(v.get("re", 0.0)), float(v.get("im", 0.0)))
    raise ConfigError(f"schema violation: expected a number, got {v!r}")


def load_system(doc: dict) -> KernelSystem:
    """Validate a system document and build the system.

    Accepted forms::

        {"type": "fixture", "name": "E1"|"E2", "m": int}
        {"type": "finite", "p": int, "maps": [[int]*p]*m, "kernel": [[number]*p]*p}

    Fixture and finite fields may also be nested under a ``"fixture"`` or
    ``"finite"`` key.  Complex entries are written ``{"re": x, "im": y}``.
    An optional ``"sample_points"`` list overrides the default sample.
    """
    if not isinstance(doc, dict):
        raise ConfigError("schema violation: document must be a JSON object")
    kind = doc.get("type")
    body = dict(doc)
    if isinstance(doc.get(kind), dict):
        body.update(doc[kind])
    samples = body.get("sample_points")
    if samples is not None and not isinstance(samples, list):
        raise ConfigError("schema violation: sample_points must be a list")

    if kind == "fixture":
        name = body.get("name")
        if name == "E1":
            m = body.get("m", 2)
            if not isinstance(m, int) or isinstance(m, bool) or m < 2:
                raise ConfigError("schema violation: E1 needs an integer m >= 2")
            sys = fixture_E1(m)
        elif name == "E2":
            if body.get("m", 2) != 2:
                raise ConfigError("schema violation: E2 has m = 2")
            sys = fixture_E2()
        else:
            raise ConfigError(f"schema violation: unknown fixture {name!r}")
        if samples:
            try:
                pts = tuple(sys.parse_point(str(x)) for x in samples)
            except ValueError as exc:
                raise ConfigError(f"schema violation: {exc}") from None
            sys = _replace_samples(sys, pts)
        return sys

    if kind == "finite":
        p, maps, kernel = body.get("p"), body.get("maps"), body.get("kernel")
        if not isinstance(p, int) or isinstance(p, bool) or p < 1:
            raise ConfigError("schema violation: p must be a positive integer")
        if (
            not isinstance(maps, list)
            or not maps
            or not all(isinstance(r, list) and len(r) == p for r in maps)
            or not all(isinstance(v, int) and not isinstance(v, bool) for r in maps for v in r)
        ):
            raise ConfigError("schema violation: maps must be a nonempty list of integer lists of length p")
        if any(not 0 <= v < p for r in maps for v in r):
            raise ConfigError("map index out of range")
        if not isinstance(kernel, list) or len(kernel) != p or not all(
            isinstance(r, list) and len(r) == p for r in kernel
        ):
            raise ConfigError("schema violation: kernel must be a p x p list of numbers")
        K = np.array([[_number(v) for v in r] for r in kernel], dtype=complex)
        scale = max(1.0, float(np.max(np.abs(K))))
        if np.max(np.abs(K - K.conj().T)) > HERMITIAN_TOL * scale:
            raise ConfigError("kernel not Hermitian")
        if not is_psd(K, PSD_LOAD_TOL).ok:
            raise ConfigError("kernel not PSD")
        pts = ()
        if samples:
            if not all(isinstance(x, int) and 0 <= x < p for x in samples):
                raise ConfigError("schema violation: finite sample points are indices in 0..p-1")
            pts = tuple(samples)
        fin = FiniteSystem(maps, K, str(body.get("name", "finite")), pts)
        return fin.system()

    raise ConfigError(f"schema violation: unknown system type {kind!r}")


def _replace_samples(sys: KernelSystem, pts: tuple) -> KernelSystem:
    from dataclasses import replace

    return replace(sys, sample_points=pts)


def load_system_file(path: str | Path) -> KernelSystem:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"schema violation: invalid JSON ({exc})") from None
    return load_system(doc)


def finite_document(fin: FiniteSystem) -> dict:
    """Inverse of ``load_system`` for finite systems (real kernels stay real)."""
    K = fin.kernel
    if np.all(K.imag == 0):
        kernel = [[float(v) for v in row] for row in K.real]
    else:
        kernel = [[{"re": float(v.real), "im": float(v.imag)} for v in row] for row in K]
    doc = {"type": "finite", "p": fin.p, "maps": fin.maps.tolist(), "kernel": kernel}
    if fin.sample_points:
        doc["sample_points"] = list(fin.sample_points)
    return doc


# ---------------------------------------------------------------- fixture search


def search_fixtures(trials: int = 200, seed: int = 0, p_max: int = 5, m: int = 2) -> list[dict]:
    """Random finite systems probed for strict subinvariance with bounded diagonals.

    The seed is a random rank-one kernel on a random face.  Each record says
    whether ``LK - K`` is PSD and nonzero, which points have an eventually
    constant diagonal tower, and whether any of them also has ``u_inf > 0``
    with a finite boundary functional.  On finite systems the last property
    never holds (see ``FINITE_WARNING``); the utility reports what it sees.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        p = int(rng.integers(2, p_max + 1))
        fin = random_maps(p, m, rng)
        U = random_face(fin, rng) or list(range(p))
        v = np.zeros(p)
        v[U] = rng.uniform(0.1, 1.0, size=len(U))
        K = np.outer(v, v)
        D = fin.pullback(K) - K
        rep = is_psd(D, 1e-10)
        strict = bool(rep.ok and np.max(np.abs(D)) > 1e-12)
        bounded = []
        u = np.diag(K).copy()
        W = K.copy()
        for _ in range(4 * p):
            W = fin.pullback(W)
        u_a = np.real(np.diag(W))
        u_b = np.real(np.diag(fin.pullback(W)))
        for x in range(p):
            if abs(u_b[x] - u_a[x]) <= 1e-9 * max(1.0, u_a[x]):
                bounded.append(x)
        nontrivial = [x for x in bounded if u_a[x] > 0]
        out.append(
            {
                "maps": fin.maps.tolist(),
                "kernel": K.tolist(),
                "subinvariant": bool(rep.ok),
                "strict": strict,
                "bounded_points": bounded,
                "positive_bounded_points": nontrivial,
                "boundary_L2": False if m >= 2 and nontrivial else None,
                "u0": u.tolist(),
            }
        )
    return out
