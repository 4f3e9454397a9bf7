from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from treemed.simulate import BasisConfig, synthetic_basis


def write_dataset(folder, n=48, n_taxa=100, seed=0, outcome_kind="continuous"):
    """Write tree.nwk, counts.tsv and meta.tsv for a synthetic study; returns their paths."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    tree, table = synthetic_basis(BasisConfig(n_taxa=n_taxa, pool_size=n, seed=seed))
    rng = np.random.default_rng(seed + 1)
    T = rng.permutation(np.repeat([0, 1], n // 2))
    age = rng.normal(50, 10, n).round(1)
    sex = rng.choice(["F", "M"], n)
    eta = 0.5 * T + 0.02 * (age - 50)
    if outcome_kind == "continuous":
        Y = eta + rng.standard_normal(n)
    else:
        Y = (rng.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(int)
    paths = {"tree": folder / "tree.nwk", "counts": folder / "counts.tsv",
             "meta": folder / "meta.tsv"}
    paths["tree"].write_text(tree.to_newick() + "\n")
    counts = pd.DataFrame(table.counts, index=pd.Index(table.sample_ids, name="sample_id"),
                          columns=table.taxa)
    counts.to_csv(paths["counts"], sep="\t")
    meta = pd.DataFrame({"treatment": T, "outcome": Y, "age": age, "sex": sex},
                        index=pd.Index(table.sample_ids, name="sample_id"))
    meta.to_csv(paths["meta"], sep="\t")
    return paths


@pytest.fixture
def dataset(tmp_path):
    return write_dataset(tmp_path / "data")


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    lines = getattr(test_acceptance, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
