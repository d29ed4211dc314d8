"""Independent reference implementations used only by the tests.

They deliberately avoid the package's code paths: plain loops, character
scanning instead of regexes, exact fractions instead of floats.
"""

from fractions import Fraction


def bag_of_words(statements):
    """One pass over characters; returns (vocabulary list, 0/1 rows as lists)."""
    def words(text):
        out, cur = [], ""
        for ch in text:
            if ch.isascii() and (ch.isalnum() or ch == "_"):
                cur += ch.lower()
            elif cur:
                out.append(cur)
                cur = ""
        if cur:
            out.append(cur)
        return out

    per_node = [words(s) for s in statements]
    vocab = []
    for ws in per_node:
        for w in ws:
            if w not in vocab:
                vocab.append(w)
    rows = [[1 if w in ws else 0 for w in vocab] for ws in per_node]
    return vocab, rows


def exact_gini(labels):
    n = len(labels)
    return 1 - sum(Fraction(labels.count(c), n) ** 2 for c in set(labels))


def brute_force_split(points, labels):
    """Exhaustive (feature, midpoint) search with exact weighted Gini.

    Returns (feature, threshold, weighted_child_gini) or None when nothing
    lowers the parent impurity. Ties go to the lower feature, then the lower
    threshold.
    """
    n = len(labels)
    parent = exact_gini(labels)
    best = None
    for f in range(len(points[0])):
        values = sorted({p[f] for p in points})
        for a, b in zip(values, values[1:]):
            thr = (a + b) / 2.0
            left = [y for p, y in zip(points, labels) if p[f] <= thr]
            right = [y for p, y in zip(points, labels) if p[f] > thr]
            score = Fraction(len(left), n) * exact_gini(left) + Fraction(len(right), n) * exact_gini(right)
            if best is None or score < best[2]:
                best = (f, thr, score)
    if best is None or best[2] >= parent:
        return None
    return best


def cart_tree(points, labels, num_classes):
    """Greedy CART grown to purity; same nested-tuple shape as TreeNode.structure()."""
    split = None
    if len(set(labels)) > 1:
        split = brute_force_split(points, labels)
    if split is None:
        return ("leaf", tuple(labels.count(c) for c in range(num_classes)))
    f, thr, _ = split
    li = [i for i, p in enumerate(points) if p[f] <= thr]
    ri = [i for i, p in enumerate(points) if p[f] > thr]
    return (
        f, thr,
        cart_tree([points[i] for i in li], [labels[i] for i in li], num_classes),
        cart_tree([points[i] for i in ri], [labels[i] for i in ri], num_classes),
    )


def cart_predict(tree, x):
    while tree[0] != "leaf":
        f, thr, left, right = tree
        tree = left if x[f] <= thr else right
    counts = tree[1]
    return max(range(len(counts)), key=lambda c: (counts[c], -c))


def dense_sage_layer(h, edges, weight, pool="sum"):
    """Node-by-node loops: relu(W^T . AGGR(self + undirected neighbours))."""
    n = len(h)
    nbrs = [set() for _ in range(n)]
    for a, b in edges:
        nbrs[a].add(b)
        nbrs[b].add(a)
    out = []
    for i in range(n):
        members = [i] + sorted(nbrs[i])
        agg = [sum(h[j][k] for j in members) for k in range(len(h[0]))]
        if pool == "mean":
            agg = [v / len(members) for v in agg]
        row = []
        for c in range(len(weight[0])):
            s = sum(agg[k] * weight[k][c] for k in range(len(agg)))
            row.append(max(0.0, s))
        out.append(row)
    return out
