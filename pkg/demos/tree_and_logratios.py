"""Walk through tree parsing, binarization and per-node log-ratios.

Run with ``python demos/tree_and_logratios.py``.
"""
import numpy as np

from treemed import CountTable, aggregate, binarize, flag_degenerate_nodes, parse_newick

# a small tree with one multifurcation at the root
tree = parse_newick("((A:1,B:1)ab:1,C:2,(D:1,E:1)de:1);")
print("leaves:", tree.leaf_labels)
print("binary?", tree.is_binary)

# resolving the root into a left-leaning ladder adds one zero-length internal node
tree = binarize(tree, warn=False)
print("after binarize:", tree.to_newick())
print("internal nodes in test order:", tree.internal_order)
for j in tree.internal_order:
    left, right = tree.children(j)
    print(f"  node {j}: {tree.descendant_leaves(left)} vs {tree.descendant_leaves(right)}")

# four samples of counts; columns follow the table's taxon order, not the tree's
counts = np.array([[10, 0, 5, 3, 2],
                   [4, 4, 0, 9, 1],
                   [0, 7, 2, 2, 2],
                   [6, 1, 1, 0, 8]])
table = CountTable(("s1", "s2", "s3", "s4"), ("E", "D", "C", "B", "A"), counts)

subs = aggregate(tree, table, pseudocount=0.5)
for s in subs:
    print(f"node {s.node}: left {s.m1}, right {s.m2}, log-ratio {np.round(s.logratio, 3)}")

# with only four samples every node falls below the minimum sample count
print("status:", [st.value for st in flag_degenerate_nodes(subs)])
print("status (min_nonzero=2):",
      [st.value for st in flag_degenerate_nodes(subs, min_nonzero=2)])
