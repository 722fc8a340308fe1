"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` (or ``python3 tests/test_acceptance.py``)
to see the summary lines.
"""
import json
import time
from fractions import Fraction as Fr
from functools import lru_cache

import numpy as np
import pytest

from considerkf import (
    CkfState,
    KfState,
    Scenario,
    SdkfState,
    SensitivityWeight,
    SmckfState,
    builtin_fixture,
    ckf_measurement_update,
    ckf_time_update,
    desensitized_cost,
    desensitized_cost_gradient,
    kf_measurement_update,
    kf_time_update,
    random_stable,
    relative_deviation,
    run_equivalence,
    run_monte_carlo,
    sdkf_gain,
    sdkf_measurement_update,
    sdkf_time_update,
    simulate,
    smckf_measurement_update,
    smckf_time_update,
)
from considerkf.bridge import covariance_hygiene
from considerkf.cli import EXIT_OK, EXIT_TOLERANCE, main
from considerkf.sim import FilterTracker, measurements_of
from oracles import SCALAR_1, SCALAR_2, central_difference, scalar_ckf_step, scalar_desensitized_step

# worst hygiene seen by any criterion; criterion 8 reads it
HYGIENE = {"asymmetry": 0.0, "min_eig_ratio": np.inf, "covariances": 0}


def verdict(number, ok, detail):
    print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def note_hygiene(asym, eig_ratio, count=1):
    HYGIENE["asymmetry"] = max(HYGIENE["asymmetry"], asym)
    HYGIENE["min_eig_ratio"] = min(HYGIENE["min_eig_ratio"], eig_ratio)
    HYGIENE["covariances"] += count


def note_cov(p):
    note_hygiene(*covariance_hygiene(p))


# -- 1 -------------------------------------------------------------------------

def _one_cycle(sc, z):
    mats, prior = sc.model.at(0), sc.prior
    ckf = ckf_measurement_update(ckf_time_update(CkfState(sc.x0_hat, sc.p0, sc.c0), mats, prior), z, mats, prior)
    sm = smckf_measurement_update(smckf_time_update(SmckfState(sc.x0_hat, sc.p0, sc.s0), mats, prior), z, mats, prior)
    return ckf, sm


def test_criterion_1_scalar_oracle():
    s1, s2 = builtin_fixture("SCALAR-1"), builtin_fixture("SCALAR-2")
    z = 1.7
    _one_cycle(s1, [z])  # warm caches before timing
    t0 = time.perf_counter()
    ckf1, sm1 = _one_cycle(s1, [z])
    ckf2, sm2 = _one_cycle(s2, [z])
    elapsed = time.perf_counter() - t0

    # exact rational references, frozen by the independent oracle
    zf = Fr(z)
    o1 = scalar_ckf_step(Fr(0), Fr(1), Fr(0), zf, **SCALAR_1, p_pp=Fr(1))
    o2 = scalar_ckf_step(Fr(0), Fr(1), Fr(0), zf, **SCALAR_2, p_pp=Fr(1))
    d1 = scalar_desensitized_step(Fr(0), Fr(1), Fr(0), zf, **SCALAR_1, w=Fr(1))
    d2 = scalar_desensitized_step(Fr(0), Fr(1), Fr(0), zf, **SCALAR_2, w=Fr(1))
    assert (o1["k"], o1["x"], o1["p"], o1["c"]) == (Fr(2, 3), Fr(2, 3) * zf, Fr(2, 3), Fr(1, 3))
    assert (o2["k"], o2["p"], o2["c"], d2["s"]) == (Fr(1, 3), Fr(2, 3), Fr(-1, 3), Fr(-1, 3))
    assert (d1["s"], d1["p"], d1["p"] + d1["s"] ** 2) == (Fr(1, 3), Fr(5, 9), Fr(2, 3))

    pairs = [
        (ckf1.gain[0, 0], 2 / 3), (ckf1.state.x_hat[0], 2 / 3 * z), (ckf1.state.p[0, 0], 2 / 3),
        (ckf1.state.c[0, 0], 1 / 3), (sm1.state.gamma[0, 0], 5 / 9), (sm1.state.s[0, 0], 1 / 3),
        (sm1.full_cov[0, 0], 2 / 3),
        (ckf2.gain[0, 0], 1 / 3), (ckf2.state.p[0, 0], 2 / 3), (ckf2.state.c[0, 0], -1 / 3),
        (sm2.state.s[0, 0], -1 / 3),
    ]
    err = max(abs(a - b) for a, b in pairs)
    for out in (ckf1, ckf2):
        note_cov(out.state.p)
    for out in (sm1, sm2):
        note_cov(out.state.gamma)
        note_cov(out.full_cov)
    verdict(1, err <= 1e-14 and elapsed < 1e-3,
            f"max abs error {err:.1e} (tol 1e-14), runtime {elapsed * 1e3:.3f} ms (limit 1 ms)")


# -- 2, 3 ----------------------------------------------------------------------

DIMS_N, DIMS_M, DIMS_L = (2, 4, 6), (1, 2, 3), (1, 2, 3)


def equivalence_cases():
    # 20 seeds walk the dimension grid in mixed radix, covering every value of n, m and l
    cases = []
    for seed in range(20):
        n = DIMS_N[seed % 3]
        m = DIMS_M[(seed // 3) % 3]
        l = DIMS_L[(seed // 9) % 3]
        cases.append(random_stable(seed, n, m, l, steps=1000))
    return cases


@lru_cache(maxsize=None)
def equivalence_runs():
    cases = equivalence_cases()
    t0 = time.perf_counter()
    data = [measurements_of(simulate(sc)) for sc in cases]
    t1 = time.perf_counter()
    reports = [run_equivalence(sc, z) for sc, z in zip(cases, data)]
    # the budget covers the filter comparison; truth simulation is reported alongside
    return reports, time.perf_counter() - t1, t1 - t0


def test_criterion_2_equivalence():
    reports, elapsed, sim_time = equivalence_runs()
    dev_state = max(r.max_rel_dev_state for r in reports)
    dev_gain = max(r.max_rel_dev_gain for r in reports)
    for r in reports:
        note_hygiene(r.max_asymmetry, r.min_eig_ratio, 6 * r.steps)
    ok = dev_state <= 1e-8 and dev_gain <= 1e-8 and elapsed < 5.0
    verdict(2, ok, f"20 runs x 1000 steps: state dev {dev_state:.1e}, gain dev {dev_gain:.1e} (tol 1e-8), "
                   f"runtime {elapsed:.2f} s (limit 5 s; measurement simulation {sim_time:.2f} s extra)")


def test_criterion_3_identities():
    reports = equivalence_runs()[0]
    cross = max(r.max_rel_dev_cross for r in reports)
    cov = max(r.max_rel_dev_cov for r in reports)
    reduced = max(r.max_rel_dev_reduced_cov for r in reports)
    worst = max(cross, cov, reduced)
    verdict(3, worst <= 1e-10, f"C = S Ppp dev {cross:.1e}, P = Gamma + S Ppp S^T dev {max(cov, reduced):.1e} "
                               f"(tol 1e-10)")


# -- 4 -------------------------------------------------------------------------

def _random_case(rng):
    n, m, l = (int(v) for v in (rng.integers(1, 7), rng.integers(1, 4), rng.integers(1, 4)))
    mats = random_stable(int(rng.integers(0, 2**31)), n, m, l).model.at(0)
    a = rng.standard_normal((n, n))
    p = a @ a.T + 0.1 * np.eye(n)
    s = rng.standard_normal((n, l))
    b = rng.standard_normal((l, l))
    return p, s, mats, SensitivityWeight(b @ b.T), rng.standard_normal((n, m))


def test_criterion_4_gradient_and_optimality():
    rng = np.random.default_rng(20240615)
    fd_err = stat = 0.0
    decreases = 0
    for _ in range(100):
        p, s, mats, w, k = _random_case(rng)
        grad = desensitized_cost_gradient(p, s, k, mats, w)
        fd = central_difference(lambda kk: desensitized_cost(p, s, kk, mats, w), k, 1e-6)
        fd_err = max(fd_err, np.max(np.abs(grad - fd)) / max(np.max(np.abs(grad)), 1.0))

        k_star = sdkf_gain(SdkfState(np.zeros(p.shape[0]), p, s), mats, w)
        scale = np.max(np.abs(p)) + np.max(np.abs(mats.r)) + np.max(np.abs(s)) ** 2 * np.max(np.abs(w.w))
        stat = max(stat, np.linalg.norm(desensitized_cost_gradient(p, s, k_star, mats, w)) / scale)
        j_star = desensitized_cost(p, s, k_star, mats, w)
        for _ in range(20):
            dk = rng.standard_normal(k_star.shape)
            dk *= 1e-3 / np.linalg.norm(dk)
            decreases += desensitized_cost(p, s, k_star + dk, mats, w) < j_star
    ok = fd_err <= 1e-6 and stat <= 1e-10 and decreases == 0
    verdict(4, ok, f"FD rel err {fd_err:.1e} (tol 1e-6), stationarity {stat:.1e} x scale (tol 1e-10), "
                   f"{decreases} of 2000 perturbations decreased J")


# -- 5 -------------------------------------------------------------------------

def _reduction_scenarios():
    rs = random_stable(5, 4, 2, 3, steps=1000)
    rs_off = Scenario(rs.model.replace_parameter_coupling(psi=np.zeros((4, 3)), nmat=np.zeros((2, 3))),
                      rs.prior, rs.x0_hat, rs.p0, steps=1000, seed=5, name="RANDOM-STABLE decoupled")
    return [builtin_fixture("KF-REDUCTION").with_steps(1000), rs_off]


def test_criterion_5_kf_reduction():
    worst = 0.0
    for sc in _reduction_scenarios():
        z = measurements_of(simulate(sc))
        prior, l = sc.prior, sc.prior.l
        kf = KfState(sc.x0_hat, sc.p0)
        ckf = CkfState(sc.x0_hat, sc.p0, sc.c0)
        sm = SmckfState(sc.x0_hat, sc.p0, sc.s0)
        weights = (SensitivityWeight(prior.p_pp), SensitivityWeight(np.zeros((l, l))))
        sd = [SdkfState(sc.x0_hat, sc.p0, sc.s0) for _ in weights]
        for k in range(sc.steps):
            mats = sc.model.at(k)
            ref = kf_measurement_update(kf_time_update(kf, mats), z[k], mats)
            kf = ref.state
            outs = [ckf_measurement_update(ckf_time_update(ckf, mats, prior), z[k], mats, prior),
                    smckf_measurement_update(smckf_time_update(sm, mats, prior), z[k], mats, prior)]
            outs += [sdkf_measurement_update(sdkf_time_update(st, mats, prior), z[k], mats, prior, w)
                     for st, w in zip(sd, weights)]
            ckf, sm, sd = outs[0].state, outs[1].state, [o.state for o in outs[2:]]
            note_cov(ref.state.p)
            for out in outs:
                cov = out.full_cov if out.full_cov is not None else out.state.p
                note_cov(cov)
                worst = max(worst, relative_deviation(out.state.x_hat, ref.state.x_hat),
                            relative_deviation(out.gain, ref.gain), relative_deviation(cov, ref.state.p))
    verdict(5, worst <= 1e-12, f"CKF, SMCKF, SDKF(W=Ppp), SDKF(W=0) vs KF over 1000 steps: "
                               f"max rel dev {worst:.1e} (tol 1e-12)")


# -- 6 -------------------------------------------------------------------------

def test_criterion_6_monte_carlo(tmp_path):
    config = {"scenario": "SCALAR-1", "command": "montecarlo", "steps": 50, "seed": 0, "runs": 2000,
              "filters": ["CKF"], "output": {"format": "csv"}}
    path = tmp_path / "mc.json"
    path.write_text(json.dumps(config))
    t0 = time.perf_counter()
    report = run_monte_carlo(builtin_fixture("SCALAR-1").with_steps(50), 2000, ["CKF"])
    codes = [main(["run", "--config", str(path), "--output", str(tmp_path / f"{i}.csv")]) for i in range(2)]
    elapsed = time.perf_counter() - t0
    identical = (tmp_path / "0.csv").read_bytes() == (tmp_path / "1.csv").read_bytes()
    avg = report.filters["CKF"].avg_nees

    sc = builtin_fixture("SCALAR-1").with_steps(50)
    tracker = FilterTracker("CKF", sc, sc.x0_hat, SensitivityWeight(sc.prior.p_pp))
    for k, rec in enumerate(simulate(sc)):
        note_cov(tracker.step(rec.z, sc.model.at(k)))

    ok = 0.85 <= avg <= 1.15 and identical and codes == [EXIT_OK, EXIT_OK] and elapsed < 30.0
    verdict(6, ok, f"CKF average NEES {avg:.4f} (band [0.85, 1.15]), rerun byte-identical: {identical}, "
                   f"runtime {elapsed:.2f} s (limit 30 s)")


# -- 7 -------------------------------------------------------------------------

def test_criterion_7_negative_control(tmp_path):
    sc = builtin_fixture("SCALAR-1")
    mats, prior = sc.model.at(0), sc.prior
    ckf_gain = ckf_measurement_update(ckf_time_update(CkfState(sc.x0_hat, sc.p0, sc.c0), mats, prior),
                                      [0.0], mats, prior).gain
    sd_gain = sdkf_gain(sdkf_time_update(SdkfState(sc.x0_hat, sc.p0, sc.s0), mats, prior), mats,
                        SensitivityWeight([[2.0]]))
    oracle = scalar_desensitized_step(Fr(0), Fr(1), Fr(0), Fr(0), **SCALAR_1, w=Fr(2))["k"]
    assert oracle == Fr(3, 4)
    gap = abs(sd_gain[0, 0] - ckf_gain[0, 0])

    path = tmp_path / "neg.json"
    path.write_text(json.dumps({"scenario": "SCALAR-1", "command": "equivalence", "steps": 100, "seed": 0,
                                "weight": [[2.0]]}))
    code = main(["run", "--config", str(path), "--output", str(tmp_path / "neg.out")])
    ok = abs(gap - 1 / 12) <= 1e-14 and code == EXIT_TOLERANCE
    verdict(7, ok, f"step-1 gain gap {gap:.15f} (expected 1/12), equivalence exit status {code} "
                   f"(expected {EXIT_TOLERANCE})")


# -- 8 -------------------------------------------------------------------------

def test_criterion_8_hygiene():
    if not HYGIENE["covariances"]:
        pytest.skip("run together with criteria 1 to 7")
    asym, eig = HYGIENE["asymmetry"], HYGIENE["min_eig_ratio"]
    ok = asym <= 1e-9 and eig >= -1e-9
    verdict(8, ok, f"{HYGIENE['covariances']} covariances: max asymmetry {asym:.1e} (tol 1e-9), "
                   f"min eigenvalue / trace {eig:.1e} (floor -1e-9)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-s", "-q"]))
