"""Simulation harness for type I error, power and FDR of node-wise mediation tests.

A replicate draws ``n`` subjects from a basis count table, splits them into two
equal treatment arms, boosts the treatment-associated taxa in the treated arm
by ``Binomial(N_i, A f_k)`` extra reads, and generates the outcome from a
log-contrast model on the outcome-associated taxa. The pipeline, Sobel's test
and the joint-significance test are then applied to the same data.

When no basis table is supplied, a synthetic one is generated: a random
binary tree plus a log-normal abundance profile with multinomial sampling.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import pandas as pd
from scipy import special, stats

from .composition import CountTable, aggregate_matrix, read_counts_tsv
from .mixture import bh_select, simes_global
from .models import Design, sobel_pvalue, wald_alpha, wald_beta
from .permutation import PermConfig
from .pipeline import analyze
from .tree import PhyloTree, binarize, parse_newick, read_newick

__all__ = [
    "SimDesign",
    "BasisConfig",
    "SelectedTaxa",
    "SimResult",
    "random_tree",
    "synthetic_basis",
    "load_basis",
    "three_leaf_clades",
    "select_taxa",
    "perturb_counts",
    "gen_outcome",
    "simulate_replicate",
    "evaluate",
    "load_designs",
    "paired_superiority_p",
]

METHODS = ("phylomed", "joint", "sobel")
OVERLAPS = ("complete", "partial", "disjoint")


@dataclass(frozen=True)
class BasisConfig:
    """Basis data for simulation.

    If ``tree_path`` and ``counts_path`` are set the basis is read from files;
    otherwise a synthetic one is drawn: taxon log-abundances ``~ N(0,
    profile_sigma^2)``, per-subject log-normal noise with sd ``sample_sigma``,
    and multinomial reads with depths uniform on ``[depth_min, depth_max]``.
    """

    n_taxa: int = 100
    pool_size: int = 900
    depth_min: int = 10_000
    depth_max: int = 100_000
    profile_sigma: float = 2.5
    sample_sigma: float = 1.5
    seed: int = 0
    tree_path: str | None = None
    counts_path: str | None = None


@dataclass(frozen=True)
class SimDesign:
    """One simulation scenario.

    ``n_alpha`` and ``n_beta`` count treatment- and outcome-associated taxa.
    With ``overlap='complete'`` both sets are the same ``n_alpha`` taxa; with
    ``'partial'`` each 3-taxon group contributes one mediating taxon shared by
    both sets plus one taxon exclusive to each; ``'disjoint'`` gives a null
    scenario with non-overlapping sets.
    """

    name: str = "design"
    n: int = 200
    n_alpha: int = 0
    n_beta: int = 0
    overlap: str = "disjoint"
    clustered: bool = True
    A: float = 1.0
    B: float = 1.0
    outcome_kind: str = "continuous"
    replicates: int = 500
    seed: int = 0
    pvalue_mode: str | None = None
    pi_method: str = "jin_cai"
    max_perms: int = 10_000
    fdr_q: float = 0.05
    level: float = 0.05
    pseudocount: float = 0.5

    def __post_init__(self):
        if self.overlap not in OVERLAPS:
            raise ValueError(f"overlap must be one of {OVERLAPS}")
        if self.n % 2 or self.n < 10:
            raise ValueError("n must be an even number >= 10")
        if self.overlap in ("complete", "partial"):
            if self.n_alpha != self.n_beta or self.n_alpha == 0:
                raise ValueError("overlapping designs need n_alpha == n_beta > 0")
        if self.clustered and (self.n_alpha % 3 or self.n_beta % 3):
            raise ValueError("clustered designs draw whole 3-leaf clades; sizes must be multiples of 3")
        if self.overlap == "partial" and self.n_alpha % 3:
            raise ValueError("partial overlap works on groups of 3 taxa")

    @property
    def is_null(self) -> bool:
        return self.overlap == "disjoint"


# --- basis ---------------------------------------------------------------------

def random_tree(n_leaves: int, rng: np.random.Generator, prefix: str = "taxon") -> PhyloTree:
    """Random rooted binary tree built by merging uniformly chosen pairs of subtrees."""
    width = len(str(n_leaves))
    parts = [f"{prefix}_{k + 1:0{width}d}" for k in range(n_leaves)]
    while len(parts) > 1:
        i, j = sorted(rng.choice(len(parts), 2, replace=False))
        merged = f"({parts[i]},{parts[j]})"
        parts.pop(j)
        parts[i] = merged
    return parse_newick(parts[0] + ";")


def synthetic_basis(config: BasisConfig = BasisConfig()) -> tuple[PhyloTree, CountTable]:
    """Random tree and a pool of subjects with log-normal relative abundances."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(0,)))
    tree = random_tree(config.n_taxa, rng)
    mu = rng.normal(0.0, config.profile_sigma, config.n_taxa)
    logp = mu + config.sample_sigma * rng.standard_normal((config.pool_size, config.n_taxa))
    prob = special.softmax(logp, axis=1)
    depths = rng.integers(config.depth_min, config.depth_max + 1, config.pool_size)
    counts = np.vstack([rng.multinomial(d, p) for d, p in zip(depths, prob)])
    ids = [f"S{k + 1:04d}" for k in range(config.pool_size)]
    return tree, CountTable(tuple(ids), tree.leaf_labels, counts)


def load_basis(config: BasisConfig = BasisConfig()) -> tuple[PhyloTree, CountTable]:
    if config.tree_path or config.counts_path:
        if not (config.tree_path and config.counts_path):
            raise ValueError("a file basis needs both tree_path and counts_path")
        tree = binarize(read_newick(config.tree_path))
        return tree, read_counts_tsv(config.counts_path).align_to(tree)
    return synthetic_basis(config)


# --- taxa selection --------------------------------------------------------------

def three_leaf_clades(tree: PhyloTree) -> list[int]:
    """Internal nodes with exactly three descendant leaves."""
    sizes = tree.leaf_matrix.sum(axis=1)
    return [i for i in tree.internal_nodes if sizes[i] == 3]


class SelectedTaxa(NamedTuple):
    S_alpha: tuple[str, ...]
    S_beta: tuple[str, ...]
    mediators: tuple[str, ...]
    mrca_nodes: tuple[int, ...]


def _group_mrca(tree: PhyloTree, taxa: Sequence[str]) -> int:
    if len(taxa) == 1:
        return tree.parent(tree.leaf_index[taxa[0]])
    return tree.mrca(list(taxa))


def select_taxa(tree: PhyloTree, design: SimDesign, rng: np.random.Generator) -> SelectedTaxa:
    """Draw treatment-associated, outcome-associated and mediating taxa.

    Clustered designs draw whole 3-leaf clades; scattered designs draw leaves
    uniformly without replacement (grouped in threes for partial overlap).
    ``mrca_nodes`` holds, per group, the most recent common ancestor of its
    mediating taxa (the parent for a single mediating taxon).
    """
    size = design.n_alpha + design.n_beta if design.is_null else design.n_alpha
    if size == 0:
        return SelectedTaxa((), (), (), ())
    if design.clustered:
        clades = three_leaf_clades(tree)
        need = size // 3
        if len(clades) < need:
            raise ValueError(f"tree has {len(clades)} three-leaf clades; design needs {need}")
        picked = rng.choice(len(clades), need, replace=False)
        groups = [list(tree.descendant_leaves(clades[k])) for k in picked]
    else:
        leaves = rng.choice(len(tree.leaf_labels), size, replace=False)
        labels = [tree.leaf_labels[k] for k in leaves]
        groups = [labels[k:k + 3] for k in range(0, size, 3)]

    if design.overlap == "disjoint":
        flat = [t for g in groups for t in g]
        return SelectedTaxa(tuple(flat[:design.n_alpha]), tuple(flat[design.n_alpha:]), (), ())
    if design.overlap == "complete":
        flat = tuple(t for g in groups for t in g)
        mrca = tuple(_group_mrca(tree, g) for g in groups)
        return SelectedTaxa(flat, flat, flat, mrca)
    s_a, s_b, med, mrca = [], [], [], []
    for g in groups:
        g = [g[k] for k in rng.permutation(len(g))]
        med.append(g[0])
        s_a += [g[0], g[1]]
        s_b += [g[0], g[2]]
        mrca.append(_group_mrca(tree, [g[0]]))
    return SelectedTaxa(tuple(s_a), tuple(s_b), tuple(med), tuple(mrca))


# --- data generation ---------------------------------------------------------------

def perturb_counts(table: CountTable, S_alpha: Sequence[str], treatment, A: float,
                   rng: np.random.Generator, f=None) -> CountTable:
    """Add ``Binomial(N_i, A f_k)`` reads to taxa ``S_alpha`` of treated samples.

    ``f`` gives the mean observed proportion of every taxon; by default it is
    computed from ``table``. Control samples are left untouched.
    """
    T = np.asarray(treatment)
    if f is None:
        f = table.proportions().mean(axis=0)
    f = np.asarray(f, dtype=float)
    col = {t: k for k, t in enumerate(table.taxa)}
    idx = [col[t] for t in S_alpha]
    rate = A * f[idx]
    if np.any(rate > 1) or np.any(rate < 0):
        raise ValueError("A * f_k must lie in [0, 1] for every perturbed taxon")
    counts = np.array(table.counts)
    treated = np.flatnonzero(T == 1)
    if idx and treated.size and A > 0:
        depth = table.depths[treated]
        counts[np.ix_(treated, idx)] += rng.binomial(depth[:, None], rate[None, :])
    return CountTable(table.sample_ids, table.taxa, counts)


def gen_outcome(table: CountTable, S_beta: Sequence[str], treatment, B: float, kind: str,
                rng: np.random.Generator, pseudocount: float = 0.5) -> np.ndarray:
    """Outcome from a (logistic) log-contrast model with zero-sum coefficients.

    ``beta_T ~ U(0, 1)``; ``beta_k ~ U(0, B)`` then centered. Proportions are
    computed after adding ``pseudocount`` to every count.
    """
    T = np.asarray(treatment, dtype=float)
    beta_t = rng.uniform(0.0, 1.0)
    eta = beta_t * T
    if len(S_beta) == 1:
        warnings.warn("a single outcome-associated taxon: centering forces its coefficient to 0",
                      RuntimeWarning, stacklevel=2)
    if len(S_beta):
        beta = rng.uniform(0.0, B, len(S_beta))
        beta = beta - beta.mean()
        col = {t: k for k, t in enumerate(table.taxa)}
        x = table.counts + pseudocount
        logf = np.log(x / x.sum(axis=1, keepdims=True))
        eta = eta + logf[:, [col[t] for t in S_beta]] @ beta
    if kind == "continuous":
        return eta + rng.standard_normal(T.size)
    if kind == "binary":
        return (rng.uniform(size=T.size) < special.expit(eta)).astype(float)
    raise ValueError(f"unknown outcome kind {kind!r}")


# --- replicate evaluation --------------------------------------------------------------

def _true_nodes(tree: PhyloTree, mediators: Sequence[str]) -> set[int]:
    out: set[int] = set()
    for t in mediators:
        out.update(tree.ancestors(tree.leaf_index[t]))
    return out


def _local_signal_nodes(tree: PhyloTree, S_alpha: Sequence[str], S_beta: Sequence[str]) -> set[int]:
    """Internal nodes with a treatment-associated and an outcome-associated taxon below them.

    These are the nodes whose own log-ratio carries both associations. Under
    partial overlap this includes splits between the two exclusive taxa of a
    group, which are not ancestors of any mediating taxon.
    """
    below_a: set[int] = set()
    below_b: set[int] = set()
    for taxa, below in ((S_alpha, below_a), (S_beta, below_b)):
        for t in taxa:
            below.update(tree.ancestors(tree.leaf_index[t]))
    return below_a & below_b


def simulate_replicate(tree: PhyloTree, pool: CountTable, design: SimDesign, replicate: int,
                       f_pool=None, methods: Sequence[str] = METHODS) -> list[dict]:
    """Simulate and analyse one replicate; one result row per method."""
    rng = np.random.default_rng(np.random.SeedSequence(design.seed, spawn_key=(1, replicate)))
    rows = rng.choice(pool.n_samples, design.n, replace=False)
    table = CountTable(tuple(pool.sample_ids[k] for k in rows), pool.taxa, pool.counts[rows])
    T = rng.permutation(np.repeat([0.0, 1.0], design.n // 2))
    chosen = select_taxa(tree, design, rng)
    table = perturb_counts(table, chosen.S_alpha, T, design.A, rng, f=f_pool)
    Y = gen_outcome(table, chosen.S_beta, T, design.B, design.outcome_kind, rng,
                    design.pseudocount)
    if design.outcome_kind == "binary" and Y.min() == Y.max():
        Y[0] = 1 - Y[0]
    dz = Design(np.ones((design.n, 1)), T, Y, design.outcome_kind)
    perm = PermConfig(max_perms=design.max_perms, batch=min(500, design.max_perms),
                      seed=int(rng.integers(2**63)))
    report = analyze(tree, table, dz, pvalue_mode=design.pvalue_mode,
                     pi_method=design.pi_method, fdr_q=design.fdr_q,
                     pseudocount=design.pseudocount, perm=perm, threads=1)

    tested = report.tested
    nodes = np.array([r.node for r in tested])
    truth = _true_nodes(tree, chosen.mediators)
    local = _local_signal_nodes(tree, chosen.S_alpha, chosen.S_beta)
    mrca = set(chosen.mrca_nodes)
    pvals = {}
    if "phylomed" in methods:
        pvals["phylomed"] = np.array([r.p_med for r in tested])
    if "joint" in methods:
        pvals["joint"] = np.array([r.p_max for r in tested])
    if "sobel" in methods:
        _, _, _, L = aggregate_matrix(tree, table, design.pseudocount)
        col = {j: k for k, j in enumerate(tree.internal_order)}
        Lt = L[:, [col[j] for j in nodes]]
        a, sa = wald_alpha(dz, Lt)
        b, sb = wald_beta(dz, Lt)
        pvals["sobel"] = np.atleast_1d(sobel_pvalue(a, sa, b, sb))

    out = []
    for method in methods:
        p = pvals[method]
        gp = report.global_p if method == "phylomed" else simes_global(p)
        sel = set(nodes[bh_select(p, design.fdr_q).selected].tolist())
        false = len(sel - truth)
        out.append({
            "replicate": replicate,
            "method": method,
            "global_p": gp,
            "n_selected": len(sel),
            "fdp": false / len(sel) if sel else 0.0,
            "fdp_local": len(sel - local) / len(sel) if sel else 0.0,
            "mrca_rate": len(sel & mrca) / len(mrca) if mrca else np.nan,
            "pi00": report.proportions.pi00,
            "pi10": report.proportions.pi10,
            "pi01": report.proportions.pi01,
        })
    return out


def _run_chunk(args):
    tree_nwk, pool, design, reps, f_pool, methods = args
    tree = parse_newick(tree_nwk)
    rows = []
    for r in reps:
        rows.extend(simulate_replicate(tree, pool, design, r, f_pool, methods))
    return rows


@dataclass
class SimResult:
    design: SimDesign
    per_replicate: pd.DataFrame
    summary: pd.DataFrame = field(init=False)

    def __post_init__(self):
        self.summary = summarize(self.design, self.per_replicate)

    def rate(self, method: str, metric: str) -> float:
        s = self.summary
        hit = s[(s.method == method) & (s.metric == metric)]
        return float(hit.value.iloc[0])


def summarize(design: SimDesign, per_rep: pd.DataFrame) -> pd.DataFrame:
    rows = []
    for method, g in per_rep.groupby("method", sort=False):
        metrics = {
            "global_rejection": float(np.mean(g.global_p <= design.level)),
            "fdr": float(np.mean(g.fdp)),
            "fdr_local_signal": float(np.mean(g.fdp_local)),
            "any_selected": float(np.mean(g.n_selected > 0)),
        }
        if g.mrca_rate.notna().any():
            metrics["mrca_discovery"] = float(np.nanmean(g.mrca_rate))
        for metric, value in metrics.items():
            rows.append({"design": design.name, "method": method, "metric": metric,
                         "value": value, "replicates": len(g)})
    return pd.DataFrame(rows, columns=["design", "method", "metric", "value", "replicates"])


def evaluate(design: SimDesign, methods: Sequence[str] = METHODS,
             basis: tuple[PhyloTree, CountTable] | None = None,
             basis_config: BasisConfig = BasisConfig(), workers: int = 1) -> SimResult:
    """Run ``design.replicates`` replicates and summarize each method.

    Metrics: rejection rate of the global test at ``design.level``, empirical
    FDR of BH node selection at ``design.fdr_q`` (true nodes are the ancestors
    of mediating taxa) and the discovery rate of the mediating clades' MRCA
    nodes. Results depend only on the design seed, not on ``workers``.
    """
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}")
    tree, pool = basis if basis is not None else load_basis(basis_config)
    if tree.n_leaves and pool.taxa != tree.leaf_labels:
        pool = pool.align_to(tree)
    if pool.n_samples < design.n:
        raise ValueError(f"basis has {pool.n_samples} samples; design needs {design.n}")
    f_pool = pool.proportions().mean(axis=0)
    reps = list(range(design.replicates))
    if workers > 1:
        chunks = [reps[k::workers] for k in range(workers)]
        nwk = tree.to_newick()
        with ProcessPoolExecutor(workers) as ex:
            parts = ex.map(_run_chunk, [(nwk, pool, design, c, f_pool, tuple(methods))
                                        for c in chunks])
            rows = [row for part in parts for row in part]
    else:
        rows = [row for r in reps
                for row in simulate_replicate(tree, pool, design, r, f_pool, methods)]
    df = pd.DataFrame(rows).sort_values(["replicate", "method"], kind="stable")
    return SimResult(design, df.reset_index(drop=True))


def paired_superiority_p(better, worse) -> float:
    """One-sided exact sign test that ``better`` exceeds ``worse`` on paired replicates."""
    d = np.asarray(better, dtype=float) - np.asarray(worse, dtype=float)
    d = d[np.isfinite(d) & (d != 0)]
    if d.size == 0:
        return 1.0
    return float(stats.binomtest(int(np.sum(d > 0)), d.size, 0.5, alternative="greater").pvalue)


def load_designs(path) -> tuple[list[SimDesign], BasisConfig]:
    """Read designs from TOML.

    The file holds an optional ``[basis]`` table and either one ``[design]``
    table or an array of ``[[design]]`` tables whose keys are
    :class:`SimDesign` fields.
    """
    try:
        import tomllib as toml
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as toml
    with open(path, "rb") as fh:
        doc = toml.load(fh)
    basis = BasisConfig(**doc.get("basis", {}))
    raw = doc.get("design", [])
    if isinstance(raw, dict):
        raw = [raw]
    if not raw:
        raise ValueError(f"{path}: no [design] table found")
    known = set(SimDesign.__dataclass_fields__)
    designs = []
    for k, d in enumerate(raw):
        bad = set(d) - known
        if bad:
            raise ValueError(f"{path}: unknown design keys {sorted(bad)}")
        d = dict(d)
        d.setdefault("name", f"design{k + 1}")
        designs.append(SimDesign(**d))
    return designs, basis
