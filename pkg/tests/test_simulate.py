import numpy as np
import pandas as pd
import pytest

from treemed.cli import main
from treemed.composition import CountTable
from treemed.simulate import (BasisConfig, SimDesign, evaluate, gen_outcome, load_designs,
                              paired_superiority_p, perturb_counts, random_tree, select_taxa,
                              simulate_replicate, synthetic_basis, three_leaf_clades)

SMALL = BasisConfig(n_taxa=60, pool_size=120, seed=2)


@pytest.fixture(scope="module")
def basis():
    return synthetic_basis(SMALL)


# --- taxa selection -----------------------------------------------------------------------

def test_three_leaf_clades(basis):
    tree, _ = basis
    clades = three_leaf_clades(tree)
    assert clades
    assert all(len(tree.descendant_leaves(j)) == 3 for j in clades)


def test_select_treatment_only(basis):
    tree, _ = basis
    sel = select_taxa(tree, SimDesign(n_alpha=3, n_beta=0), np.random.default_rng(0))
    assert len(sel.S_alpha) == 3 and sel.S_beta == () and sel.mediators == ()
    assert tree.mrca(sel.S_alpha) in three_leaf_clades(tree)


def test_select_disjoint_sets(basis):
    tree, _ = basis
    sel = select_taxa(tree, SimDesign(n_alpha=3, n_beta=3), np.random.default_rng(1))
    assert len(sel.S_alpha) == len(sel.S_beta) == 3
    assert not set(sel.S_alpha) & set(sel.S_beta)


def test_select_complete_overlap(basis):
    tree, _ = basis
    d = SimDesign(n_alpha=6, n_beta=6, overlap="complete")
    sel = select_taxa(tree, d, np.random.default_rng(2))
    assert len(sel.mediators) == 6
    assert sel.S_alpha == sel.S_beta == sel.mediators
    assert len(sel.mrca_nodes) == 2
    for j in sel.mrca_nodes:
        assert j in three_leaf_clades(tree)
        assert set(tree.descendant_leaves(j)) <= set(sel.mediators)


def test_select_partial_overlap(basis):
    tree, _ = basis
    d = SimDesign(n_alpha=6, n_beta=6, overlap="partial")
    sel = select_taxa(tree, d, np.random.default_rng(3))
    assert len(sel.mediators) == 2
    assert set(sel.S_alpha) & set(sel.S_beta) == set(sel.mediators)
    assert len(set(sel.S_alpha) | set(sel.S_beta)) == 6


def test_select_scattered(basis):
    tree, _ = basis
    d = SimDesign(n_alpha=15, n_beta=15, overlap="complete", clustered=False)
    sel = select_taxa(tree, d, np.random.default_rng(4))
    assert len(set(sel.mediators)) == 15


def test_select_insufficient_clades():
    tree = random_tree(6, np.random.default_rng(0))
    with pytest.raises(ValueError, match="clades"):
        select_taxa(tree, SimDesign(n_alpha=30, n_beta=30, overlap="complete"),
                    np.random.default_rng(0))


def test_local_signal_nodes():
    from treemed.simulate import _local_signal_nodes, _true_nodes
    from treemed.tree import parse_newick

    tree = parse_newick("((m,(x,y)),z);")
    idx = tree.leaf_index
    root, clade, cherry = 0, tree.parent(idx["m"]), tree.parent(idx["x"])
    # complete overlap: same as the ancestors of the mediators
    assert _local_signal_nodes(tree, ["m", "x"], ["m", "x"]) == _true_nodes(tree, ["m", "x"])
    # partial overlap: the split between the exclusive taxa carries both signals
    local = _local_signal_nodes(tree, ["m", "x"], ["m", "y"])
    assert local == {root, clade, cherry}
    assert _true_nodes(tree, ["m"]) == {root, clade}


def test_design_validation():
    with pytest.raises(ValueError):
        SimDesign(n_alpha=3, n_beta=6, overlap="complete")
    with pytest.raises(ValueError):
        SimDesign(n_alpha=4, n_beta=0)
    with pytest.raises(ValueError):
        SimDesign(overlap="sideways")
    assert SimDesign(n_alpha=3).is_null
    assert not SimDesign(n_alpha=3, n_beta=3, overlap="partial").is_null


# --- data generation --------------------------------------------------------------------------

def _table(n=40, depth=10_000, n_taxa=5, seed=0):
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(depth, np.full(n_taxa, 1 / n_taxa), n)
    return CountTable(tuple(f"s{k}" for k in range(n)), tuple(f"t{k}" for k in range(n_taxa)),
                      counts)


def test_perturb_zero_effect():
    table = _table()
    T = np.repeat([0, 1], 20)
    out = perturb_counts(table, ["t0", "t1"], T, 0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(out.counts, table.counts)


def test_perturb_binomial_mean():
    table = _table(n=1000, depth=10_000)
    T = np.ones(1000)
    f = np.full(5, 0.02)
    out = perturb_counts(table, ["t2"], T, 1.0, np.random.default_rng(1), f=f)
    added = out.counts[:, 2] - table.counts[:, 2]
    sd = np.sqrt(10_000 * 0.02 * 0.98 / 1000)
    assert abs(added.mean() - 200) < 3 * sd
    np.testing.assert_array_equal(out.depths, table.depths + added)


def test_perturb_controls_untouched():
    table = _table()
    T = np.repeat([0, 1], 20)
    out = perturb_counts(table, ["t0"], T, 2.0, np.random.default_rng(2))
    assert out.counts[T == 0].tobytes() == table.counts[T == 0].tobytes()
    assert np.all(out.counts[T == 1, 0] > table.counts[T == 1, 0])


def test_perturb_rate_above_one():
    with pytest.raises(ValueError):
        perturb_counts(_table(), ["t0"], np.ones(40), 10.0, np.random.default_rng(0))


def test_outcome_without_mediator_path():
    table = _table()
    T = np.repeat([0.0, 1.0], 20)
    y = gen_outcome(table, ["t0", "t1"], T, 0.0, "continuous", np.random.default_rng(5))
    rng = np.random.default_rng(5)
    beta_t = rng.uniform()
    rng.uniform(0.0, 0.0, 2)
    np.testing.assert_allclose(y, beta_t * T + rng.standard_normal(40))


def test_centered_log_contrast_outcome():
    table = _table(n_taxa=8)
    T = np.repeat([0.0, 1.0], 20)
    taxa = [f"t{k}" for k in range(6)]
    y = gen_outcome(table, taxa, T, 1.0, "continuous", np.random.default_rng(6))
    # replay the generator's draws and evaluate the model directly
    rng = np.random.default_rng(6)
    beta_t = rng.uniform()
    beta = rng.uniform(0, 1.0, 6)
    beta -= beta.mean()
    assert abs(beta.sum()) < 1e-12
    x = table.counts + 0.5
    logf = np.log(x / x.sum(axis=1, keepdims=True))[:, :6]
    np.testing.assert_allclose(y, beta_t * T + logf @ beta + rng.standard_normal(40), atol=1e-12)


def test_outcome_invariant_to_scaling_selected_taxa():
    table = _table(n_taxa=8)
    T = np.repeat([0.0, 1.0], 20)
    taxa = [f"t{k}" for k in range(6)]
    y1 = gen_outcome(table, taxa, T, 1.0, "continuous", np.random.default_rng(6), 0.0)
    # a common factor on every selected taxon cancels because the coefficients sum to 0
    scaled = table.counts.copy()
    scaled[:, :6] *= 3
    y2 = gen_outcome(CountTable(table.sample_ids, table.taxa, scaled), taxa, T, 1.0,
                     "continuous", np.random.default_rng(6), 0.0)
    np.testing.assert_allclose(y1, y2, atol=1e-10)


def test_single_outcome_taxon_warns():
    with pytest.warns(RuntimeWarning, match="single"):
        gen_outcome(_table(), ["t0"], np.repeat([0.0, 1.0], 20), 1.0, "continuous",
                    np.random.default_rng(0))


def test_binary_outcome_coded():
    y = gen_outcome(_table(), ["t0", "t1"], np.repeat([0.0, 1.0], 20), 1.0, "binary",
                    np.random.default_rng(0))
    assert set(np.unique(y)) <= {0.0, 1.0}


# --- evaluation ----------------------------------------------------------------------------

def test_replicates_are_deterministic(basis):
    tree, pool = basis
    d = SimDesign(n=60, n_alpha=3, n_beta=3, overlap="complete", replicates=2, seed=9,
                  max_perms=1000)
    a = simulate_replicate(tree, pool, d, 1)
    b = simulate_replicate(tree, pool, d, 1)
    c = simulate_replicate(tree, pool, d, 0)
    assert pd.DataFrame(a).equals(pd.DataFrame(b))
    assert not pd.DataFrame(a).equals(pd.DataFrame(c))


def test_evaluate_summary_and_workers(basis):
    d = SimDesign(name="alt", n=100, n_alpha=3, n_beta=3, overlap="complete", replicates=6)
    one = evaluate(d, basis=basis)
    two = evaluate(d, basis=basis, workers=2)
    pd.testing.assert_frame_equal(one.per_replicate, two.per_replicate)
    s = one.summary
    assert list(s.columns) == ["design", "method", "metric", "value", "replicates"]
    assert set(s.method) == {"phylomed", "joint", "sobel"}
    assert (s.replicates == 6).all()
    assert 0 <= one.rate("phylomed", "mrca_discovery") <= 1


def test_binary_design_runs(basis):
    d = SimDesign(n=100, n_alpha=3, n_beta=3, overlap="complete", outcome_kind="binary",
                  replicates=2)
    res = evaluate(d, basis=basis, methods=("phylomed", "sobel"))
    assert set(res.per_replicate.method) == {"phylomed", "sobel"}


def test_paired_superiority():
    better = np.r_[np.ones(20), np.zeros(80)]
    assert paired_superiority_p(better, np.zeros(100)) < 1e-5
    assert paired_superiority_p(np.zeros(10), np.zeros(10)) == 1.0


def test_design_file_and_cli(tmp_path):
    path = tmp_path / "designs.toml"
    path.write_text("""
[basis]
n_taxa = 40
pool_size = 80
seed = 1

[[design]]
name = "null"
n = 60
replicates = 3

[[design]]
name = "alt"
n = 60
n_alpha = 3
n_beta = 3
overlap = "complete"
replicates = 3
""")
    designs, basis = load_designs(path)
    assert [d.name for d in designs] == ["null", "alt"]
    assert basis.n_taxa == 40
    assert main(["simulate", "--design", str(path), "--out", str(tmp_path / "sim"),
                 "--replicates", "2", "--dump-pvalues"]) == 0
    summary = pd.read_csv(tmp_path / "sim" / "summary.tsv", sep="\t", keep_default_na=False)
    assert set(summary.design) == {"null", "alt"}
    assert (summary.replicates == 2).all()
    assert (tmp_path / "sim" / "replicates.tsv").is_file()


def test_design_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[design]\nn = 60\nsample_size = 3\n")
    with pytest.raises(ValueError, match="sample_size"):
        load_designs(path)
    assert main(["simulate", "--design", str(path), "--out", str(tmp_path / "o")]) == 2
