"""Random forest classifier over feature vectors, built from scratch.

Bagged CART trees: each tree is grown on a bootstrap sample, each node
considers a fresh random subset of feature indices, splits are exhaustive
midpoint scans maximizing Gini impurity decrease.  Probabilities are the
unweighted mean of per-tree leaf class distributions (a hard-vote mode is
available behind ``ForestParams.hard_vote``).

Determinism contract: tree t draws all its randomness from an independent
stream derived from (params.seed, t), and trees are assembled in index
order, so identical (data, params) produce a bit-identical forest for any
worker count.
"""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Leaf:
    counts: np.ndarray  # per-class training sample counts, length 2


@dataclass
class Split:
    feature: int
    threshold: float
    left: "Leaf | Split"
    right: "Leaf | Split"


@dataclass
class ForestParams:
    n_trees: int = 200
    mtry: int | None = None  # None -> floor(sqrt(n_features))
    max_depth: int | None = None
    min_samples_leaf: int = 1
    seed: int = 0
    hard_vote: bool = False


@dataclass
class Forest:
    trees: list
    params: ForestParams
    n_features: int
    feature_layout_hash: int = 0
    # per-tree in-bag sample indices; kept only on freshly trained forests
    # (not serialized), which is what out-of-bag estimation needs
    in_bag: list | None = field(default=None, repr=False)


def gini_impurity(counts) -> float:
    """Gini impurity 1 - sum((c_i / n)^2) of a two-class count pair."""
    c0, c1 = float(counts[0]), float(counts[1])
    n = c0 + c1
    if n == 0:
        raise ValueError("empty node has no impurity")
    p0 = c0 / n
    p1 = c1 / n
    return 1.0 - (p0 * p0 + p1 * p1)


def best_split(X, y, feature_subset, min_samples_leaf: int = 1):
    """Best (feature, threshold, gain) over the given features, or None.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values.  Gain is parent Gini minus the weighted child Gini; ties break
    toward the lower feature index, then the lower threshold.  Returns None
    when no candidate has positive gain.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = y.size
    if n < 2:
        return None
    total1 = int(y.sum())
    parent = gini_impurity((n - total1, total1))
    best = None
    for f in sorted(int(f) for f in feature_subset):
        col = X[:, f]
        order = np.argsort(col, kind="stable")
        vals = col[order]
        ones = np.cumsum(y[order])
        cut = np.nonzero(vals[1:] > vals[:-1])[0]  # left group = [0..cut]
        if cut.size == 0:
            continue
        nl = (cut + 1).astype(np.float64)
        nr = n - nl
        if min_samples_leaf > 1:
            ok = (nl >= min_samples_leaf) & (nr >= min_samples_leaf)
            cut, nl, nr = cut[ok], nl[ok], nr[ok]
            if cut.size == 0:
                continue
        l1 = ones[cut].astype(np.float64)
        l0 = nl - l1
        r1 = total1 - l1
        r0 = nr - r1
        gl = 1.0 - ((l0 / nl) * (l0 / nl) + (l1 / nl) * (l1 / nl))
        gr = 1.0 - ((r0 / nr) * (r0 / nr) + (r1 / nr) * (r1 / nr))
        gain = parent - (nl / n) * gl - (nr / n) * gr
        i = int(np.argmax(gain))  # first max = lowest threshold
        if gain[i] > 0.0 and (best is None or gain[i] > best[2]):
            thr = (vals[cut[i]] + vals[cut[i] + 1]) / 2.0
            best = (f, float(thr), float(gain[i]))
    return best


def grow_tree(X, y, params: ForestParams, rng: np.random.Generator, depth: int = 0):
    """Recursively grow one CART tree; a fresh mtry-feature subset is drawn
    from ``rng`` at every node."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("cannot grow a tree on empty data")
    counts = np.bincount(y, minlength=2)
    if (
        counts[0] == 0
        or counts[1] == 0
        or y.size < 2 * params.min_samples_leaf
        or (params.max_depth is not None and depth >= params.max_depth)
    ):
        return Leaf(counts)
    mtry = _resolve_mtry(params, X.shape[1])
    subset = rng.choice(X.shape[1], size=mtry, replace=False)
    found = best_split(X, y, subset, params.min_samples_leaf)
    if found is None:
        return Leaf(counts)
    f, thr, _ = found
    mask = X[:, f] <= thr
    return Split(
        f,
        thr,
        grow_tree(X[mask], y[mask], params, rng, depth + 1),
        grow_tree(X[~mask], y[~mask], params, rng, depth + 1),
    )


def _resolve_mtry(params: ForestParams, n_features: int) -> int:
    mtry = params.mtry if params.mtry is not None else int(np.floor(np.sqrt(n_features)))
    return max(1, min(mtry, n_features))


def train_forest(X, y, params: ForestParams, workers: int = 1, feature_layout_hash: int = 0) -> Forest:
    """Train a bagged forest.  Requires >= 2 samples with both classes present."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be (n_samples, n_features) aligned with y")
    if y.size < 2:
        raise ValueError("need at least 2 samples")
    if np.unique(y).size < 2:
        raise ValueError("training data contains a single class")
    n = y.size

    def build(t: int):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=params.seed, spawn_key=(t,)))
        idx = rng.integers(0, n, size=n)
        return grow_tree(X[idx], y[idx], params, rng), np.unique(idx)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(build, range(params.n_trees)))
    else:
        results = [build(t) for t in range(params.n_trees)]
    trees = [tree for tree, _ in results]
    in_bag = [bag for _, bag in results]
    return Forest(trees, params, X.shape[1], feature_layout_hash, in_bag)


def _leaf_for(tree, x: np.ndarray) -> Leaf:
    node = tree
    while isinstance(node, Split):
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node


def _tree_distribution(leaf: Leaf, hard_vote: bool) -> np.ndarray:
    counts = leaf.counts.astype(np.float64)
    if hard_vote:
        dist = np.zeros(2)
        dist[int(np.argmax(counts))] = 1.0
        return dist
    return counts / counts.sum()


def predict_proba(forest: Forest, x) -> np.ndarray:
    """Two-class probability vector: mean of the per-tree leaf distributions."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != forest.n_features:
        raise ValueError(f"feature vector has length {x.size}, forest expects {forest.n_features}")
    acc = np.zeros(2)
    for tree in forest.trees:
        acc += _tree_distribution(_leaf_for(tree, x), forest.params.hard_vote)
    return acc / len(forest.trees)


@dataclass
class OobReport:
    error: float  # misclassification rate over covered samples
    coverage: float  # fraction of samples with at least one out-of-bag tree


def oob_error(forest: Forest, X, y) -> OobReport:
    """Out-of-bag error: each sample is scored only by trees whose bootstrap
    excluded it.  Requires the forest to have been trained on (X, y) in this
    process (bootstrap membership is not serialized)."""
    if forest.in_bag is None:
        raise ValueError("forest carries no bootstrap membership records")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    n = y.size
    in_bag_mask = np.zeros((len(forest.trees), n), dtype=bool)
    for t, bag in enumerate(forest.in_bag):
        in_bag_mask[t, bag] = True
    errors = 0
    covered = 0
    for i in range(n):
        oob_trees = [t for t in range(len(forest.trees)) if not in_bag_mask[t, i]]
        if not oob_trees:
            continue
        covered += 1
        acc = np.zeros(2)
        for t in oob_trees:
            acc += _tree_distribution(_leaf_for(forest.trees[t], X[i]), forest.params.hard_vote)
        pred = 1 if acc[1] / len(oob_trees) > 0.5 else 0
        if pred != y[i]:
            errors += 1
    if covered == 0:
        raise ValueError("no sample has an out-of-bag tree")
    return OobReport(errors / covered, covered / n)


# --- binary serialization (little-endian; embedded in the model bundle) ----

_TAG_SPLIT = 0
_TAG_LEAF = 1


def _write_node(buf: bytearray, node) -> None:
    if isinstance(node, Leaf):
        buf += struct.pack("<BII", _TAG_LEAF, int(node.counts[0]), int(node.counts[1]))
    else:
        buf += struct.pack("<BId", _TAG_SPLIT, node.feature, node.threshold)
        _write_node(buf, node.left)
        _write_node(buf, node.right)


def _read_node(buf: bytes, pos: int):
    (tag,) = struct.unpack_from("<B", buf, pos)
    pos += 1
    if tag == _TAG_LEAF:
        c0, c1 = struct.unpack_from("<II", buf, pos)
        return Leaf(np.array([c0, c1])), pos + 8
    if tag == _TAG_SPLIT:
        feature, threshold = struct.unpack_from("<Id", buf, pos)
        pos += 12
        left, pos = _read_node(buf, pos)
        right, pos = _read_node(buf, pos)
        return Split(feature, threshold, left, right), pos
    raise ValueError(f"bad tree node tag {tag}")


def forest_to_bytes(forest: Forest) -> bytes:
    p = forest.params
    buf = bytearray()
    buf += struct.pack(
        "<IIiiIQBI",
        forest.n_features,
        p.n_trees,
        -1 if p.mtry is None else p.mtry,
        -1 if p.max_depth is None else p.max_depth,
        p.min_samples_leaf,
        p.seed,
        1 if p.hard_vote else 0,
        forest.feature_layout_hash,
    )
    for tree in forest.trees:
        _write_node(buf, tree)
    return bytes(buf)


def forest_from_bytes(data: bytes) -> Forest:
    header = struct.calcsize("<IIiiIQBI")
    n_features, n_trees, mtry, max_depth, msl, seed, hard_vote, lh = struct.unpack_from(
        "<IIiiIQBI", data, 0
    )
    params = ForestParams(
        n_trees=n_trees,
        mtry=None if mtry < 0 else mtry,
        max_depth=None if max_depth < 0 else max_depth,
        min_samples_leaf=msl,
        seed=seed,
        hard_vote=bool(hard_vote),
    )
    trees = []
    pos = header
    for _ in range(n_trees):
        tree, pos = _read_node(data, pos)
        trees.append(tree)
    if pos != len(data):
        raise ValueError("trailing bytes after forest data")
    return Forest(trees, params, n_features, lh)
