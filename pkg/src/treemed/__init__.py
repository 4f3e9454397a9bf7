"""Phylogeny-based mediation analysis for microbiome compositions."""

__version__ = "0.1.0"

from .tree import PhyloTree, binarize, order_internal_nodes, parse_newick, read_newick
from .composition import CountTable, aggregate, flag_degenerate_nodes, read_counts_tsv
from .models import Design, score_test_alpha, score_test_beta, sobel_pvalue
from .mixture import (NullProportions, bh_select, compose_proportions, fit_mixture,
                      grenander, jin_cai_pi0, mixture_pvalue, simes_global)
from .pipeline import RunConfig, RunReport, analyze, emit, ingest, run

__all__ = [
    "PhyloTree", "binarize", "order_internal_nodes", "parse_newick", "read_newick",
    "CountTable", "aggregate", "flag_degenerate_nodes", "read_counts_tsv",
    "Design", "score_test_alpha", "score_test_beta", "sobel_pvalue",
    "NullProportions", "bh_select", "compose_proportions", "fit_mixture", "grenander",
    "jin_cai_pi0", "mixture_pvalue", "simes_global",
    "RunConfig", "RunReport", "analyze", "emit", "ingest", "run",
]
