"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed together at the end
of the pytest run (see ``conftest.py``). Run this module alone with

    pytest tests/test_acceptance.py
"""
import itertools
import time

import numpy as np
import pytest
from scipy import stats

from treemed.mixture import (NullProportions, bh_select, grenander, jin_cai_pi0, mixture_pvalue,
                             simes_global)
from treemed.models import Design
from treemed.permutation import PermConfig, alpha_resampler, beta_resampler, perm_pvalue
from treemed.pipeline import emit, run
from treemed.simulate import SimDesign, evaluate, paired_superiority_p, synthetic_basis

from .conftest import write_dataset
from .oracles import bh_oracle, lcm_oracle, simes_oracle

RESULTS: list[str] = []
REPLICATES = 500
GRID = [k / 20 for k in range(1, 21)]


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
    RESULTS.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def basis():
    return synthetic_basis()


@pytest.fixture(scope="module")
def alternatives(basis):
    """Alternative designs shared by the power and FDR criteria."""
    designs = [
        SimDesign(name="complete-3", n=200, n_alpha=3, n_beta=3, overlap="complete",
                  replicates=REPLICATES, seed=501),
        SimDesign(name="complete-6", n=200, n_alpha=6, n_beta=6, overlap="complete",
                  replicates=REPLICATES, seed=502),
        SimDesign(name="partial-6", n=200, n_alpha=6, n_beta=6, overlap="partial",
                  replicates=REPLICATES, seed=503),
    ]
    return {d.name: evaluate(d, basis=basis) for d in designs}


def test_criterion_1_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(2023)
    n_vectors = 0
    mismatches = []
    for length in range(1, 7):
        for combo in itertools.combinations_with_replacement(GRID, length):
            p = [float(x) for x in rng.permutation(combo)]
            n_vectors += 1
            if abs(simes_global(p) - simes_oracle(p)) > 1e-15:
                mismatches.append(("simes", p))
            res = bh_select(p, 0.05)
            sel, adj = bh_oracle(p, 0.05)
            if res.selected.tolist() != sel or not np.allclose(res.qvalues, adj, rtol=1e-14,
                                                               atol=0):
                mismatches.append(("bh", p))
    for _ in range(1000):
        size = int(rng.integers(1, 9))
        on_grid = rng.choice(GRID, size)
        off_grid = rng.uniform(1e-4, 1.0, size)
        p = np.where(rng.uniform(size=size) < 0.5, on_grid, off_grid)
        g = grenander(p)
        knots, slopes = lcm_oracle(p)
        if (g.knots.shape != knots.shape or not np.array_equal(g.knots, knots)
                or not np.allclose(g.heights, slopes, rtol=1e-12, atol=1e-12)):
            mismatches.append(("grenander", p.tolist()))
    elapsed = time.perf_counter() - start
    ok = not mismatches and elapsed < 60
    record(1, "Simes/BH/Grenander match brute-force oracles", ok,
           f"{n_vectors} Simes/BH vectors + 1000 Grenander inputs, "
           f"{len(mismatches)} mismatches, {elapsed:.1f}s")
    assert not mismatches, mismatches[:5]
    assert elapsed < 60


def test_criterion_2_mixture_formula():
    def props(a, b, c):
        return NullProportions(a, b, c, np.nan, np.nan)

    hand = 0.7347 * 0.05 ** 2 + 0.1837 * 0.05 + 0.0816 * 0.05
    value = mixture_pvalue(0.05, props(0.7347, 0.1837, 0.0816), 1, 1)
    checks = {"hand value": abs(value - hand)}
    grid = np.linspace(1e-4, 1, 101)
    checks["(1,0,0) -> p^2"] = np.max(np.abs(mixture_pvalue(grid, props(1, 0, 0), 1, 1)
                                             - grid ** 2))
    checks["(0,1,0), F=1 -> p"] = np.max(np.abs(mixture_pvalue(grid, props(0, 1, 0), 1, 0.3)
                                                - grid))
    ok = all(v <= 1e-9 for v in checks.values()) and round(value, 5) == 0.01510
    record(2, "mixture p-value formula", ok,
           f"value {value:.8f}; " + ", ".join(f"{k}: err {v:.1e}" for k, v in checks.items()))
    assert ok


def test_criterion_3_jin_cai_calibration():
    start = time.perf_counter()
    null_est, mix_est = [], []
    for rep in range(20):
        rng = np.random.default_rng(3000 + rep)
        null_est.append(jin_cai_pi0(rng.standard_normal(10_000)))
        mix_est.append(jin_cai_pi0(np.r_[rng.standard_normal(7000), rng.normal(3, 1, 3000)]))
    elapsed = time.perf_counter() - start
    null_ok = all(0.9 <= v <= 1.0 for v in null_est)
    mix_ok = all(abs(v - 0.7) <= 0.1 for v in mix_est)
    ok = null_ok and mix_ok and elapsed < 120
    record(3, "Jin-Cai null proportion", ok,
           f"null range [{min(null_est):.3f}, {max(null_est):.3f}], "
           f"70/30 range [{min(mix_est):.3f}, {max(mix_est):.3f}], {elapsed:.0f}s")
    assert ok


def test_criterion_4_global_null_calibration(basis):
    rates = {}
    for n in (50, 200):
        for k, (a, b) in enumerate([(0, 0), (3, 0), (0, 3)]):
            d = SimDesign(name=f"null-{a}{b}-n{n}", n=n, n_alpha=a, n_beta=b,
                          replicates=REPLICATES, seed=400 + 10 * k + n, max_perms=10_000)
            rates[d.name] = evaluate(d, basis=basis, methods=("phylomed",)).rate(
                "phylomed", "global_rejection")
    ok = all(0.01 <= r <= 0.07 for r in rates.values())
    record(4, "global-null rejection in [0.01, 0.07]", ok,
           ", ".join(f"{k}: {v:.3f}" for k, v in rates.items()))
    assert ok


def test_criterion_5_mrca_power(alternatives):
    res = alternatives["complete-3"].per_replicate
    rate = {m: g.mrca_rate.to_numpy() for m, g in res.groupby("method")}
    p_joint = paired_superiority_p(rate["phylomed"], rate["joint"])
    p_sobel = paired_superiority_p(rate["phylomed"], rate["sobel"])
    ok = p_joint < 0.05 and p_sobel < 0.05
    record(5, "MRCA discovery: mixture test beats joint and Sobel", ok,
           f"rates phylomed {rate['phylomed'].mean():.3f}, joint {rate['joint'].mean():.3f}, "
           f"sobel {rate['sobel'].mean():.3f}; sign-test p {p_joint:.2g} / {p_sobel:.2g}")
    assert ok


def test_criterion_6_detection_fdr(alternatives):
    fdr = {name: r.rate("phylomed", "fdr") for name, r in alternatives.items()}
    ok = all(v <= 0.10 for v in fdr.values())
    others = {name: (r.rate("joint", "fdr"), r.rate("sobel", "fdr"))
              for name, r in alternatives.items()}
    # diagnostic only: false discoveries counted against nodes with both signals below them
    local = {name: r.rate("phylomed", "fdr_local_signal") for name, r in alternatives.items()}
    record(6, "mixture-test node-selection FDR <= 0.10 at q = 0.05", ok,
           ", ".join(f"{k}: {v:.3f} (joint {others[k][0]:.3f}, sobel {others[k][1]:.3f}; "
                     f"local-signal truth {local[k]:.3f})" for k, v in fdr.items()))
    assert ok


def test_criterion_7_permutation_validity():
    n, reps = 50, 1000
    rng = np.random.default_rng(77)
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    T = rng.permutation(np.repeat([0.0, 1.0], n // 2))
    cfg = PermConfig(max_perms=10_000, seed=7)
    pa, pb = np.empty(reps), np.empty(reps)
    for k in range(reps):
        # alpha null: log-ratio unrelated to treatment; beta null: outcome unrelated to it
        L = 0.8 * X[:, 1] + rng.standard_normal(n)
        Y = 0.5 * T + X[:, 1] + rng.standard_normal(n)
        d = Design(X, T, Y)
        pa[k] = perm_pvalue(d.alpha_stats(L)[0], alpha_resampler(d, L), cfg, k, "alpha").p
        L2 = 1.0 * T + L
        pb[k] = perm_pvalue(d.beta_stats(L2)[0], beta_resampler(d, L2), cfg, k, "beta").p
    u = np.array([0.01, 0.05, 0.1])
    ecdf_a = (pa[:, None] <= u).mean(axis=0)
    ecdf_b = (pb[:, None] <= u).mean(axis=0)
    valid = bool(np.all(ecdf_a <= u + 0.02) and np.all(ecdf_b <= u + 0.02))

    # adaptive against a fixed budget of 10^5 permutations on the same data
    fixed_cfg = PermConfig(max_perms=100_000, target_exceedances=100_000, batch=5000, seed=8)
    agree = 0
    cases = 0
    for k in range(12):
        L = 0.8 * X[:, 1] + rng.standard_normal(n) + 0.12 * k * T
        d = Design(X, T, 0.5 * T + rng.standard_normal(n))
        draw = alpha_resampler(d, L)
        obs = d.alpha_stats(L)[0]
        ad = perm_pvalue(obs, draw, PermConfig(seed=9), k, "alpha")
        fx = perm_pvalue(obs, draw, fixed_cfg, k, "alpha")
        x = round(ad.p * (ad.perms_used + 1)) - 1
        ci = stats.binomtest(x, ad.perms_used).proportion_ci(0.99)
        fixed_est = (fx.p * (fx.perms_used + 1) - 1) / fx.perms_used
        cases += 1
        agree += ci.low <= fixed_est <= ci.high
    ok = valid and agree == cases
    record(7, "permutation p-values valid; adaptive agrees with fixed budget", ok,
           f"alpha ECDF at {u.tolist()}: {np.round(ecdf_a, 3).tolist()}, "
           f"beta: {np.round(ecdf_b, 3).tolist()}; {agree}/{cases} within 99% CI")
    assert ok


def test_criterion_8_determinism(tmp_path):
    from treemed.pipeline import RunConfig

    paths = write_dataset(tmp_path / "data", n=48, seed=11)
    outs = []
    for k, threads in enumerate((1, 4)):
        cfg = RunConfig(str(paths["tree"]), str(paths["counts"]), str(paths["meta"]),
                        "treatment", "outcome", ["age", "sex"], seed=42, max_perms=10_000,
                        threads=threads)
        outs.append(emit(run(cfg), tmp_path / f"run{k}"))
    same = {key: outs[0][key].read_bytes() == outs[1][key].read_bytes()
            for key in ("nodes", "global", "tree")}
    ok = all(same.values())
    record(8, "byte-identical outputs across thread counts", ok,
           ", ".join(f"{k}: {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
