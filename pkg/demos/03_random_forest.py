"""The from-scratch random forest on a toy problem.

Shows split search, bagging, probability averaging, out-of-bag error, and
the bit-reproducibility contract.
"""

import numpy as np

from lesionfuse import ForestParams, oob_error, predict_proba, train_forest
from lesionfuse.forest import best_split, forest_to_bytes, gini_impurity

# Gini impurity of two-class count pairs
for counts in ((4, 0), (2, 2), (1, 3)):
    print(f"gini{counts} = {gini_impurity(counts)}")

# Exhaustive midpoint split search on a 1-D dataset
X = np.array([[1.0], [2.0], [9.0], [10.0]])
y = np.array([0, 0, 1, 1])
print("best split of [1,2,9,10] / [0,0,1,1]:", best_split(X, y, [0]))

# Two noisy blobs, 300 points, 5 features of which 2 are informative
rng = np.random.default_rng(2024)
n = 300
X = rng.normal(size=(n, 5))
y = (X[:, 0] + 0.8 * X[:, 1] + rng.normal(0, 0.4, n) > 0).astype(np.intp)

forest = train_forest(X, y, ForestParams(n_trees=200, seed=9))
train_acc = np.mean([int(predict_proba(forest, x)[1] > 0.5) == t for x, t in zip(X, y)])
report = oob_error(forest, X, y)
print(f"\n200 trees on 300 noisy points:")
print(f"  training accuracy: {train_acc:.3f}")
print(f"  out-of-bag error : {report.error:.3f} (coverage {report.coverage:.1%})")

# Out-of-bag intuition: each bootstrap leaves out about (1 - 1/n)^n of the
# samples, ~36.6% for large n
in_bag = np.zeros((200, n), dtype=bool)
for t, bag in enumerate(forest.in_bag):
    in_bag[t, bag] = True
print(f"  mean excluded fraction: {(~in_bag).mean():.3f} vs (1-1/n)^n = {(1 - 1/n) ** n:.3f}")

# Probabilities are means of leaf distributions, so they live on the simplex
p = predict_proba(forest, rng.normal(size=5))
print(f"\nsample probability vector: {p}, sum = {p.sum()}")

# Same data + same params => byte-identical model, at any worker count
a = forest_to_bytes(train_forest(X, y, ForestParams(n_trees=50, seed=9), workers=1))
b = forest_to_bytes(train_forest(X, y, ForestParams(n_trees=50, seed=9), workers=8))
print(f"1-worker and 8-worker training byte-identical: {a == b}")
