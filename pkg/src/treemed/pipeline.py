"""End-to-end analysis: files in, node table and global test out."""
from __future__ import annotations

import hashlib
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

from . import __version__
from .composition import (CountTable, NodeStatus, NodeSubcomposition, aggregate_matrix,
                          flag_degenerate_nodes, read_counts_tsv)
from .mixture import NodeTestRecord, NullProportions, bh_select, fit_mixture, simes_global
from .models import Design
from .permutation import PermConfig, alpha_resampler, beta_resampler, perm_pvalue
from .tree import PhyloTree, binarize, read_newick

__all__ = ["InputError", "AnalysisError", "RunConfig", "RunReport", "ingest", "analyze", "run",
           "emit"]

MIN_SAMPLES = 10


class InputError(ValueError):
    """Bad or inconsistent input files; maps to CLI exit code 2."""


class AnalysisError(RuntimeError):
    """Numerical failure during analysis; maps to CLI exit code 3."""


def _normalize_pi_method(name: str) -> str:
    key = name.lower().replace("-", "_")
    if key in ("jincai", "jin_cai"):
        return "jin_cai"
    if key == "storey":
        return "storey"
    raise ValueError(f"unknown pi method {name!r}")


@dataclass
class RunConfig:
    tree_path: str
    counts_path: str
    meta_path: str
    treatment_col: str
    outcome_col: str
    confounder_cols: Sequence[str] = ()
    outcome_kind: str = "continuous"
    pvalue_mode: str | None = None
    pi_method: str = "jin_cai"
    fdr_q: float = 0.1
    pseudocount: float = 0.5
    seed: int = 0
    max_perms: int = 100_000
    target_exceedances: int = 50
    perm_batch: int = 500
    storey_lambda: float = 0.5
    min_var: float = 1e-8
    min_nonzero: int = 5
    threads: int | None = None

    def perm_config(self) -> PermConfig:
        return PermConfig(self.max_perms, self.target_exceedances,
                          min(self.perm_batch, self.max_perms), self.seed)

    def config_hash(self) -> str:
        """Digest of the analysis settings and input file contents (not their paths)."""
        settings = asdict(self)
        for key in ("tree_path", "counts_path", "meta_path", "threads"):
            settings.pop(key)
        settings["confounder_cols"] = list(self.confounder_cols)
        settings["pi_method"] = _normalize_pi_method(self.pi_method)
        h = hashlib.sha256(json.dumps(settings, sort_keys=True).encode())
        for path in (self.tree_path, self.counts_path, self.meta_path):
            h.update(hashlib.sha256(Path(path).read_bytes()).digest())
        return h.hexdigest()[:16]


@dataclass
class RunReport:
    global_p: float
    proportions: NullProportions
    records: list[NodeTestRecord]
    selected_nodes: frozenset[int]
    tree: PhyloTree
    pvalue_mode: str
    provenance: dict = field(default_factory=dict)

    @property
    def tested(self) -> list[NodeTestRecord]:
        return [r for r in self.records if r.status == NodeStatus.TESTED]


def _read_meta(path) -> pd.DataFrame:
    meta = pd.read_csv(path, sep="\t", dtype={0: str}, index_col=0)
    meta.index = meta.index.astype(str)
    if meta.index.has_duplicates:
        raise InputError(f"{path}: duplicate sample ids in metadata")
    return meta


def _confounder_matrix(meta: pd.DataFrame, cols: Sequence[str]) -> tuple[np.ndarray, list[str]]:
    X = pd.DataFrame({"intercept": np.ones(len(meta))}, index=meta.index)
    for col in cols:
        values = meta[col]
        if pd.api.types.is_numeric_dtype(values):
            X[col] = values.astype(float)
        else:
            dummies = pd.get_dummies(values.astype(str), prefix=col, drop_first=True, dtype=float)
            X = X.join(dummies)
    return X.to_numpy(dtype=float), list(X.columns)


def ingest(config: RunConfig) -> tuple[PhyloTree, CountTable, Design]:
    """Read and align tree, counts and metadata.

    Samples are inner-joined on id (dropped samples trigger a warning) and
    sorted by id, so input row order never matters.
    """
    for path in (config.tree_path, config.counts_path, config.meta_path):
        if not Path(path).is_file():
            raise InputError(f"input file not found: {path}")
    if config.outcome_kind not in ("continuous", "binary"):
        raise InputError(f"outcome type must be continuous or binary, got {config.outcome_kind!r}")
    tree = binarize(read_newick(config.tree_path))
    try:
        table = read_counts_tsv(config.counts_path)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    meta = _read_meta(config.meta_path)

    needed = [config.treatment_col, config.outcome_col, *config.confounder_cols]
    missing = [c for c in needed if c not in meta.columns]
    if missing:
        raise InputError(f"metadata is missing column(s): {', '.join(missing)}; "
                         f"available: {', '.join(map(str, meta.columns))}")

    shared = sorted(set(table.sample_ids) & set(meta.index))
    dropped_counts = sorted(set(table.sample_ids) - set(meta.index))
    dropped_meta = sorted(set(meta.index) - set(table.sample_ids))
    if dropped_counts:
        warnings.warn(f"{len(dropped_counts)} count sample(s) without metadata dropped: "
                      f"{', '.join(dropped_counts[:10])}", stacklevel=2)
    if dropped_meta:
        warnings.warn(f"{len(dropped_meta)} metadata sample(s) without counts dropped: "
                      f"{', '.join(dropped_meta[:10])}", stacklevel=2)
    if len(shared) < MIN_SAMPLES:
        raise InputError(f"only {len(shared)} samples shared by counts and metadata; "
                         f"need at least {MIN_SAMPLES}")
    table = table.subset(shared).align_to(tree)
    meta = meta.loc[shared, needed]

    na = meta.columns[meta.isna().any()].tolist()
    if na:
        raise InputError(f"missing values in metadata column(s): {', '.join(na)}; "
                         "impute or drop those samples first")
    for col in (config.treatment_col, config.outcome_col):
        if not pd.api.types.is_numeric_dtype(meta[col]):
            raise InputError(f"column {col!r} must be numeric")
    Y = meta[config.outcome_col].to_numpy(dtype=float)
    if config.outcome_kind == "binary" and not np.all(np.isin(Y, (0.0, 1.0))):
        bad = sorted(set(Y[~np.isin(Y, (0.0, 1.0))]))[:5]
        raise InputError(f"binary outcome {config.outcome_col!r} must be coded 0/1; found {bad}")
    X, names = _confounder_matrix(meta, config.confounder_cols)
    try:
        design = Design(X, meta[config.treatment_col].to_numpy(dtype=float), Y,
                        config.outcome_kind, confounder_names=names)
    except np.linalg.LinAlgError as exc:
        raise InputError(str(exc)) from exc
    return tree, table, design


def _thread_count(threads: int | None) -> int:
    """Worker threads: ``threads`` (default: CPU count), capped by ``$TREEMED_THREADS``."""
    n = threads if threads is not None else (os.cpu_count() or 1)
    env = os.environ.get("TREEMED_THREADS")
    if env:
        n = min(n, int(env))
    return max(1, int(n))


def analyze(tree: PhyloTree, table: CountTable, design: Design, *,
            pvalue_mode: str | None = None, pi_method: str = "jin_cai", fdr_q: float = 0.1,
            pseudocount: float = 0.5, perm: PermConfig | None = None,
            storey_lambda: float = 0.5, min_var: float = 1e-8, min_nonzero: int = 5,
            threads: int | None = None) -> RunReport:
    """Run the full node-wise mediation analysis on in-memory inputs.

    ``table`` rows must be in the same sample order as ``design``.
    """
    pi_method = _normalize_pi_method(pi_method)
    if pvalue_mode is None:
        pvalue_mode = "permutation" if design.n < 100 else "asymptotic"
    if pvalue_mode not in ("asymptotic", "permutation"):
        raise ValueError(f"unknown pvalue mode {pvalue_mode!r}")
    perm = perm or PermConfig()

    nodes, m1, m2, L = aggregate_matrix(tree, table, pseudocount)
    subs = [NodeSubcomposition(j, m1[:, k], m2[:, k], L[:, k]) for k, j in enumerate(nodes)]
    status = flag_degenerate_nodes(subs, min_var, min_nonzero)
    keep = np.array([s == NodeStatus.TESTED for s in status])

    stat_a = np.full(len(nodes), np.nan)
    stat_b = np.full(len(nodes), np.nan)
    sign_a = np.zeros(len(nodes))
    sign_b = np.zeros(len(nodes))
    if keep.any():
        stat_a[keep], sign_a[keep] = design.alpha_stats(L[:, keep])
        stat_b[keep], sign_b[keep] = design.beta_stats(L[:, keep])
    keep &= np.isfinite(stat_a) & np.isfinite(stat_b)
    tested = np.flatnonzero(keep)
    if tested.size == 0:
        raise AnalysisError("every internal node was skipped as degenerate; nothing to test")

    used_a = np.zeros(len(nodes), dtype=int)
    used_b = np.zeros(len(nodes), dtype=int)
    p_a = np.full(len(nodes), np.nan)
    p_b = np.full(len(nodes), np.nan)
    if pvalue_mode == "asymptotic":
        p_a[tested] = stats.chi2.sf(stat_a[tested], 1)
        p_b[tested] = stats.chi2.sf(stat_b[tested], 1)
        p_floor = 0.0
    else:
        def one(k):
            j, lr = nodes[k], L[:, k]
            ra = perm_pvalue(stat_a[k], alpha_resampler(design, lr), perm, node=j, kind="alpha")
            rb = perm_pvalue(stat_b[k], beta_resampler(design, lr), perm, node=j, kind="beta")
            return ra, rb

        n_threads = _thread_count(threads)
        if n_threads > 1:
            with ThreadPoolExecutor(n_threads) as pool:
                results = list(pool.map(one, tested))
        else:
            results = [one(k) for k in tested]
        for k, (ra, rb) in zip(tested, results):
            p_a[k], used_a[k] = ra
            p_b[k], used_b[k] = rb
        p_floor = 1.0 / (perm.max_perms + 1)

    try:
        fit = fit_mixture(p_a[tested], p_b[tested], sign_a[tested], sign_b[tested],
                          method=pi_method, lam=storey_lambda, p_floor=p_floor)
    except (ValueError, FloatingPointError) as exc:
        raise AnalysisError(f"null-proportion estimation failed: {exc}") from exc
    global_p = simes_global(fit.p_med)
    bh = bh_select(fit.p_med, fdr_q)
    selected = frozenset(int(nodes[tested[i]]) for i in bh.selected)

    pos = {int(k): i for i, k in enumerate(tested)}
    records = []
    for k, j in enumerate(nodes):
        if k in pos:
            i = pos[k]
            records.append(NodeTestRecord(
                node=int(j), p_alpha=float(p_a[k]), p_beta=float(p_b[k]),
                sign_alpha=int(sign_a[k]), p_max=float(fit.p_max[i]),
                p_med=float(fit.p_med[i]), q_value=float(bh.qvalues[i]),
                status=NodeStatus.TESTED.value,
                perms_used_alpha=int(used_a[k]), perms_used_beta=int(used_b[k])))
        else:
            records.append(NodeTestRecord(int(j), np.nan, np.nan, 0, np.nan, np.nan, np.nan,
                                          NodeStatus.SKIPPED.value))
    return RunReport(global_p, fit.props, records, selected, tree, pvalue_mode,
                     {"version": __version__, "seed": perm.seed})


def run(config: RunConfig) -> RunReport:
    tree, table, design = ingest(config)
    report = analyze(tree, table, design, pvalue_mode=config.pvalue_mode,
                     pi_method=config.pi_method, fdr_q=config.fdr_q,
                     pseudocount=config.pseudocount, perm=config.perm_config(),
                     storey_lambda=config.storey_lambda, min_var=config.min_var,
                     min_nonzero=config.min_nonzero, threads=config.threads)
    report.provenance.update(config_hash=config.config_hash(), seed=config.seed)
    return report


def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, (float, np.floating)):
        return "NA" if np.isnan(x) else repr(float(x))
    return str(x)


NODE_COLUMNS = ("node_id", "parent_id", "child_ids", "status", "p_alpha", "p_beta",
                "sign_alpha", "p_max", "p_med", "q_value", "perms_used_alpha",
                "perms_used_beta")
GLOBAL_COLUMNS = ("global_p", "pi00", "pi10", "pi01", "pi0_alpha", "pi0_beta", "J_tested",
                  "config_hash", "seed")


def emit(report: RunReport, out_dir) -> dict[str, Path]:
    """Write ``nodes.tsv``, ``global.tsv`` and ``annotated.nwk`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tree = report.tree
    lines = ["\t".join(NODE_COLUMNS)]
    for r in report.records:
        node = tree.nodes[r.node]
        row = (r.node, _fmt(node.parent), ",".join(map(str, node.children)), r.status,
               r.p_alpha, r.p_beta, r.sign_alpha, r.p_max, r.p_med, r.q_value,
               r.perms_used_alpha, r.perms_used_beta)
        lines.append("\t".join(_fmt(v) for v in row))
    paths = {"nodes": out / "nodes.tsv", "global": out / "global.tsv",
             "tree": out / "annotated.nwk"}
    paths["nodes"].write_text("\n".join(lines) + "\n")

    pr = report.proportions
    row = (report.global_p, pr.pi00, pr.pi10, pr.pi01, pr.pi0_alpha, pr.pi0_beta,
           len(report.tested), report.provenance.get("config_hash", "NA"),
           report.provenance.get("seed", "NA"))
    paths["global"].write_text("\t".join(GLOBAL_COLUMNS) + "\n"
                               + "\t".join(_fmt(v) for v in row) + "\n")

    labels = {r.node: ("NA" if np.isnan(r.p_med) else f"{r.p_med:.6g}") for r in report.records}
    paths["tree"].write_text(tree.to_newick(labels) + "\n")
    return paths
