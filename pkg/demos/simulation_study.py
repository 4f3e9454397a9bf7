"""A small power and type I error study.

Compares node detection by the mixture test with joint significance and the
Sobel test on one null and one clustered alternative design. Uses few
replicates so it finishes in well under a minute; the acceptance suite runs
the full-size version.
"""

from treemed.simulate import SimDesign, evaluate, paired_superiority_p, synthetic_basis

basis = synthetic_basis()
designs = [
    SimDesign(name="null", n=200, n_alpha=3, n_beta=0, replicates=60, seed=1),
    SimDesign(name="complete-3", n=200, n_alpha=3, n_beta=3, overlap="complete",
              replicates=60, seed=2),
]
for d in designs:
    res = evaluate(d, basis=basis)
    print(f"\n== {d.name} ({d.replicates} replicates, n={d.n}) ==")
    print(res.summary.pivot(index="metric", columns="method", values="value").round(3))
    if not d.is_null:
        per = {m: g.mrca_rate.to_numpy() for m, g in res.per_replicate.groupby("method")}
        for other in ("joint", "sobel"):
            p = paired_superiority_p(per["phylomed"], per[other])
            print(f"MRCA discovery, phylomed vs {other}: sign-test p = {p:.3g}")
