"""Acceptance criteria 1-9, each reported as one PASS/FAIL line."""

import contextlib
import io
import math
import time
from pathlib import Path

import numpy as np

from ktree.boundary import (
    b_functional,
    cocycle_check,
    mean_enumerated,
    path_checks,
    second_moment_enumerated,
    square_function_exact,
    step_check_all,
)
from ktree.cli import main
from ktree.completion import PASS, PRECONDITION, invariance_residual, minimality_check
from ktree.kernel import TowerCache, gram, is_psd
from ktree.resistance import POSITIVE, capacity_series, effective_resistance, resistance_oracle
from ktree.splitting import SectionVector, isometry_gram_residual, parseval_residual
from ktree.systems import fixture_E1, fixture_E2, load_system, phase_sweep
from ktree.tree import level_increment_sum, level_increment_sum_enum, telescoping_check
from ktree.weights import (
    CylinderWeight,
    WeightedKernel,
    integral_oracle,
    monotonicity_check,
    shift_identity_check,
    star_weight_majorant,
    weighted_kernel,
)

from conftest import UNEVEN, completion_of, diagonal_fixtures, in_xfin_fixtures, sweep_seeds

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_criterion_1_e1_resistance(criterion):
    t0 = time.perf_counter()
    sys = fixture_E1(2)
    cache = TowerCache(sys)
    closed = max(abs(effective_resistance(sys, None, 0, N).R_N - 2 * (1 - 2.0**-N)) / (2 * (1 - 2.0**-N)) for N in range(1, 21))
    oracle = max(
        abs(effective_resistance(sys, None, 0, N).R_N - resistance_oracle(sys, cache, 0, N)) / resistance_oracle(sys, cache, 0, N)
        for N in range(1, 9)
    )
    cap = capacity_series(sys, None, 0)
    lo, hi = cap.R_bounds
    r_inf = max(abs(lo - 2), abs(hi - 2)) / 2
    elapsed = time.perf_counter() - t0
    ok = closed <= 1e-12 and oracle <= 1e-9 and cap.verdict == POSITIVE and r_inf <= 1e-8 and elapsed < 1
    criterion(1, "E1 resistance", ok, f"closed {closed:.1e}, oracle {oracle:.1e}, R_inf in [{lo:.12g}, {hi:.12g}], {elapsed:.2f}s")
    assert ok


def test_criterion_2_telescoping(criterion):
    t0 = time.perf_counter()
    cases = [(fixture_E1(2), [0]), (fixture_E1(3), [0]), (fixture_E2(), [0.1, 0.5, 1.0])]
    seeds = sweep_seeds(20, seed=0)
    cases += [(es.system.system(), list(range(es.system.p))[:2]) for es in seeds]
    worst = 0.0
    for sys, pts in cases:
        cache = TowerCache(sys)
        for s in pts:
            for k in range(7):
                worst = max(worst, telescoping_check(sys, cache, s, k), telescoping_check(sys, cache, s, k, method="enum"))
                dp, en = level_increment_sum(sys, cache, s, k), level_increment_sum_enum(sys, cache, s, k)
                worst = max(worst, abs(dp - en) / max(1.0, abs(en)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 5 and all(es.system.p <= 6 and es.system.m in (2, 3) for es in seeds)
    criterion(2, "telescoping identity", ok, f"max residual {worst:.1e} over {len(cases)} systems, {elapsed:.2f}s")
    assert ok


def test_criterion_3_sandwich(criterion):
    systems = [fixture_E1(2), fixture_E1(3), load_system(UNEVEN)] + diagonal_fixtures(15)
    systems += [es.system.system() for es in sweep_seeds(10, seed=1)]
    failures, lam_max = 0, 1.0
    for sys in systems:
        for N in range(1, 7):
            rep = effective_resistance(sys, None, 0, N)
            if rep.lam == math.inf:
                continue
            lam_max = max(lam_max, rep.lam)
            failures += not rep.sandwich_ok
    eq = 0.0
    for N in range(1, 7):
        rep = effective_resistance(fixture_E1(2), None, 0, N)
        eq = max(eq, abs(rep.R_N - rep.S_N) / rep.R_N, abs(rep.upper - rep.R_N) / rep.R_N)
    ok = failures == 0 and eq <= 1e-12 and lam_max > 1
    criterion(3, "sandwich bounds", ok, f"{failures} failures on {len(systems)} systems, largest Lambda {lam_max:.4g}, E1 gap {eq:.1e}")
    assert ok


def test_criterion_4_capacity_phase(criterion):
    t0 = time.perf_counter()
    recs = phase_sweep(20, seed=0, margin=0.05)
    wrong = 0
    for r in recs:
        rep = capacity_series(r["seed"].system.system(), None, r["s"])
        wrong += (rep.verdict == POSITIVE) != (r["rho"] ** 2 > r["m"])
    above = sum(r["rho"] ** 2 > r["m"] for r in recs)
    elapsed = time.perf_counter() - t0
    ok = wrong == 0 and len(recs) == 20 and 0 < above < 20 and elapsed < 10
    criterion(4, "capacity phase", ok, f"{wrong} mismatches, {above} above / {20 - above} below, {elapsed:.2f}s")
    assert ok


def test_criterion_5_completion_e2(criterion):
    sys = fixture_E2()
    est = completion_of(sys)
    rng = np.random.default_rng(5)
    exact = 0.0
    for s, t in rng.uniform(0, 1, (200, 2)):
        e = est.estimate(s, t)
        exact = max(exact, abs(e.value - math.sqrt(s * t)), e.tail_bound)
    inv = invariance_residual(sys, est, [0.2, 0.5, 1.0]).residual
    psd = all(is_psd(gram(est, list(rng.uniform(0, 1, 5)))).ok for _ in range(50))
    sample = [0.1, 0.4, 0.7, 1.0]
    K = sys.seed
    mins = [
        minimality_check(sys, K, sample, 8).verdict,
        minimality_check(sys, lambda s, t: 2 * K(s, t), sample, 8).verdict,
        minimality_check(sys, lambda s, t: 0.5 * K(s, t), sample, 8).verdict,
    ]
    ok = exact <= 1e-15 and inv <= 1e-12 and psd and mins == [PASS, PASS, PRECONDITION]
    criterion(5, "completion on E2", ok, f"|K_inf - K| and tail {exact:.1e}, invariance {inv:.1e}, minimality {mins}")
    assert ok


def test_criterion_6_parseval(criterion):
    sys = fixture_E2()
    est = completion_of(sys)
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(40):
        k = int(rng.integers(1, 5))
        f = SectionVector(tuple(rng.uniform(0, 1, k)), rng.normal(size=k) + 1j * rng.normal(size=k))
        for n in range(9):
            worst = max(worst, parseval_residual(sys, est, f, n))
        worst = max(worst, parseval_residual(sys, est, f, 3, method="enum"))
    for n in range(9):
        worst = max(worst, isometry_gram_residual(sys, est, [0.1, 0.3, 0.6, 0.9], n))
    ok = worst <= 1e-10
    criterion(6, "Parseval and isometry", ok, f"max residual {worst:.1e}")
    assert ok


def test_criterion_7_martingale(criterion):
    t0 = time.perf_counter()
    fixtures = in_xfin_fixtures()
    step = mean = b_gap = sq = 0.0
    for sys, est, pts in fixtures:
        for s in pts:
            for t in pts:
                step = max(step, step_check_all(sys, est, s, t, 6))
                for n in range(6):
                    K = est(s, t)
                    mean = max(mean, abs(mean_enumerated(sys, est, s, t, n) - K) / max(1.0, abs(K)))
                sq = max(sq, square_function_exact(sys, est, s, t, 4)["residual"])
            rep = b_functional(sys, est, s, n_max=5)
            sup = max(second_moment_enumerated(sys, est, s, s, n) for n in range(6))
            b_gap = max(b_gap, abs(rep.sup - sup) / max(1.0, sup))
    e2, e2_est, _ = fixtures[0]
    rng = np.random.default_rng(7)
    coc = 0.0
    for _ in range(200):
        n = int(rng.integers(0, 11))
        s, t = rng.uniform(0, 1, 2)
        res = cocycle_check(e2, e2_est, s, t, n, int(rng.integers(2)), tuple(int(v) for v in rng.integers(0, 2, n)))
        coc = max(coc, *res.values())
    dom = psd = 0
    for sys, est, pts in fixtures:
        rep = path_checks(sys, est, pts, 8, 1000, seed=7)
        dom += rep["domination_failures"]
        psd += rep["psd_failures"]
    b_e2 = b_functional(e2, e2_est, 0.5).sup
    elapsed = time.perf_counter() - t0
    ok = (
        step <= 1e-10 and mean <= 1e-10 and b_gap <= 1e-12 and sq <= 1e-10 and coc <= 1e-12
        and dom == 0 and psd == 0 and abs(b_e2 - 0.25) <= 1e-15 and elapsed < 30
    )
    criterion(
        7,
        "martingale suite",
        ok,
        f"step {step:.1e}, mean {mean:.1e}, B {b_gap:.1e}, square {sq:.1e}, cocycle {coc:.1e}, "
        f"domination/PSD failures {dom}/{psd} over 3000 paths, {elapsed:.2f}s",
    )
    assert ok


def test_criterion_8_weights(criterion):
    sys = fixture_E2()
    est = completion_of(sys)
    sample = (0.2, 0.6, 1.0)
    one = CylinderWeight.constant(2, 1)
    j1 = max(abs(weighted_kernel(sys, est, one, s, t) - est(s, t)) for s in sample for t in sample)
    rng = np.random.default_rng(8)
    shift = max(shift_identity_check(sys, est, CylinderWeight(2, 2, rng.uniform(0, 5, 4)), sample) for _ in range(50))
    mono_ok = True
    for _ in range(50):
        f = CylinderWeight(2, 2, rng.uniform(0, 2, 4))
        g = CylinderWeight(2, 2, f.table + rng.uniform(0, 2, 4))
        rep = monotonicity_check(sys, est, f, g, list(rng.uniform(0, 1, 4)))
        mono_ok &= rep.ok and rep.lam_min >= -1e-10
    star_ok, closed = True, 0.0
    for _ in range(10):
        f = CylinderWeight(2, 2, rng.uniform(0, 3, 4))
        rep = star_weight_majorant(sys, est, f, 4, sample)
        star_ok &= rep["orbit_ok"] and rep["superharmonic_ok"]
        Jstar = WeightedKernel(sys, est, f.star())
        closed = max(closed, rep["closed_form_residual"], *(abs(Jstar(s, t) - f.table.max() * est(s, t)) for s in sample for t in sample))
    oracle = 0.0
    for r in (0, 1, 2):
        f = CylinderWeight(2, r, rng.uniform(0, 3, 2**r))
        for n in (r, r + 1, r + 2):
            for s in sample:
                for t in sample:
                    J = weighted_kernel(sys, est, f, s, t)
                    oracle = max(oracle, abs(J - integral_oracle(sys, est, f, s, t, n)) / max(1.0, abs(J)))
    ok = j1 <= 1e-12 and shift <= 1e-10 and mono_ok and star_ok and closed <= 1e-12 and oracle <= 1e-12
    criterion(8, "weights suite", ok, f"J_1 {j1:.1e}, shift {shift:.1e}, star closed form {closed:.1e}, oracle {oracle:.1e}")
    assert ok


def test_criterion_9_determinism(criterion):
    cfg = lambda name: str(CONFIGS / name)
    commands = [
        ["martingale", "--system", cfg("e2.json"), "--seed", "17", "--paths", "500", "--depth", "10"],
        ["martingale", "--system", cfg("e2.json"), "--seed", "17", "--paths", "100", "--depth", "6", "--format", "csv"],
        ["martingale", "--system", cfg("absorbing.json"), "--seed", "17", "--s", "0"],
        ["weights", "--system", cfg("e2.json"), "--weight", cfg("weight_depth2.json"), "--seed", "17"],
        ["eigenseed", "--p", "6", "--m", "3", "--seed", "17"],
    ]
    same = 0
    for argv in commands:
        outs = []
        for _ in range(2):
            buf = io.StringIO()
            with contextlib.redirect_stdout(buf), contextlib.redirect_stderr(io.StringIO()):
                main(argv)
            outs.append(buf.getvalue().encode())
        same += outs[0] == outs[1] and len(outs[0]) > 0
    ok = same == len(commands)
    criterion(9, "determinism", ok, f"{same}/{len(commands)} sampling commands byte-identical")
    assert ok
