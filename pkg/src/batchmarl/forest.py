"""Totally randomized tree ensembles used as frozen-partition kernel smoothers.

Each tree splits on a uniformly chosen non-constant feature at a uniform cut
strictly inside that feature's range over the node. Once built, the leaf
partitions never change, so the kernel

    weight_l(query) = (1/e) * sum_k [l shares query's leaf in tree k] / |leaf_k(query)|

is fixed across fitting iterations and every row sums to one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, DimensionError
from .mdp import BatchDataset, SeedLike, as_seed_sequence, derive_seed


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 5
    n_min: int = 10

    def __post_init__(self):
        if self.n_trees < 1 or self.n_min < 1:
            raise ConfigurationError("n_trees and n_min must be positive")


# -- feature layout: one-hot state || control ids ----------------------------

def one_hot_states(x, n_states: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    out = np.zeros((x.size, n_states))
    out[np.arange(x.size), x.ravel()] = 1.0
    return out


def state_control_features(x, controls, n_states: int) -> np.ndarray:
    """Rows of (one-hot state || control components)."""
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1:
        controls = controls[:, None]
    return np.hstack([one_hot_states(x, n_states), controls])


def local_inputs(dataset: BatchDataset, agent: int) -> np.ndarray:
    return state_control_features(dataset.x, dataset.u[:, agent], dataset.n_states)


def joint_inputs(dataset: BatchDataset) -> np.ndarray:
    return state_control_features(dataset.x, dataset.u, dataset.n_states)


# -- trees -------------------------------------------------------------------

@dataclass
class Tree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf with id ``leaf_id[i]``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_id: np.ndarray
    n_leaves: int

    def apply(self, inputs: np.ndarray) -> np.ndarray:
        """Leaf id reached by each input row (go left when value <= threshold)."""
        node = np.zeros(len(inputs), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            n = node[idx]
            go_left = inputs[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.leaf_id[node]

    def to_dict(self, node: int = 0, leaf_members=None) -> dict:
        if self.feature[node] < 0:
            d = {"leaf": int(self.leaf_id[node])}
            if leaf_members is not None:
                d["samples"] = leaf_members[int(self.leaf_id[node])]
            return d
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "left": self.to_dict(int(self.left[node]), leaf_members),
            "right": self.to_dict(int(self.right[node]), leaf_members),
        }

    @classmethod
    def from_dict(cls, root: dict) -> "Tree":
        feature, threshold, left, right, leaf_id = [], [], [], [], []

        def visit(d):
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            leaf_id.append(-1)
            if "leaf" in d:
                leaf_id[i] = d["leaf"]
            else:
                feature[i] = d["feature"]
                threshold[i] = d["threshold"]
                left[i] = visit(d["left"])
                right[i] = visit(d["right"])
            return i

        visit(root)
        leaf_id = np.array(leaf_id, dtype=np.int64)
        return cls(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                   np.array(right, dtype=np.int64), leaf_id, int(leaf_id.max()) + 1)


def grow_tree(inputs: np.ndarray, n_min: int, rng: np.random.Generator) -> Tree:
    feature, threshold, left, right, leaf_id = [], [], [], [], []
    n_leaves = 0

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (leaf_id, -1)):
            lst.append(v)
        return len(feature) - 1

    stack = [(new_node(), np.arange(len(inputs)))]
    while stack:
        node, idx = stack.pop()
        pts = inputs[idx]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        candidates = np.nonzero(hi > lo)[0]
        if len(idx) < n_min or len(candidates) == 0:
            leaf_id[node] = n_leaves
            n_leaves += 1
            continue
        f = int(candidates[rng.integers(len(candidates))])
        cut = rng.uniform(lo[f], hi[f])
        while cut <= lo[f]:
            cut = rng.uniform(lo[f], hi[f])
        mask = pts[:, f] <= cut
        feature[node], threshold[node] = f, cut
        left[node], right[node] = new_node(), new_node()
        # right pushed first so the left subtree is expanded (and numbered) first
        stack.append((right[node], idx[~mask]))
        stack.append((left[node], idx[mask]))

    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(leaf_id, dtype=np.int64), n_leaves)


@dataclass
class TreeEnsemble:
    trees: list[Tree]
    training_inputs: np.ndarray
    n_min: int
    seed: object = None
    train_leaf: np.ndarray = field(init=False, repr=False)
    _leaf_maps: list = field(init=False, repr=False)
    _training_kernel: sparse.csr_matrix | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.training_inputs = np.asarray(self.training_inputs, dtype=float)
        self.train_leaf = np.stack([t.apply(self.training_inputs) for t in self.trees])
        L = self.L
        self._leaf_maps = []
        for k, t in enumerate(self.trees):
            sizes = np.bincount(self.train_leaf[k], minlength=t.n_leaves)
            leaf_map = sparse.csr_matrix(
                (1.0 / sizes[self.train_leaf[k]], (self.train_leaf[k], np.arange(L))),
                shape=(t.n_leaves, L),
            )
            self._leaf_maps.append(leaf_map)

    @property
    def e(self) -> int:
        return len(self.trees)

    @property
    def L(self) -> int:
        return len(self.training_inputs)

    @property
    def n_features(self) -> int:
        return self.training_inputs.shape[1]

    def leaf_members(self, k: int) -> list[list[int]]:
        return [np.nonzero(self.train_leaf[k] == leaf)[0].tolist() for leaf in range(self.trees[k].n_leaves)]

    def _check(self, queries) -> np.ndarray:
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        if q.shape[1] != self.n_features:
            raise DimensionError(f"query has {q.shape[1]} features, ensemble expects {self.n_features}")
        return q

    def kernel_matrix(self, queries) -> sparse.csr_matrix:
        """Sparse (n_queries, L) matrix whose rows are the kernel weights of each query."""
        q = self._check(queries)
        W = None
        for t, leaf_map in zip(self.trees, self._leaf_maps):
            part = leaf_map[t.apply(q)]
            W = part if W is None else W + part
        return (W / self.e).tocsr()

    def training_kernel(self) -> sparse.csr_matrix:
        """Kernel rows at the training inputs themselves, (L, L); cached."""
        if self._training_kernel is None:
            W = None
            for k, leaf_map in enumerate(self._leaf_maps):
                part = leaf_map[self.train_leaf[k]]
                W = part if W is None else W + part
            self._training_kernel = (W / self.e).tocsr()
        return self._training_kernel

    def to_json(self) -> str:
        return json.dumps({
            "n_min": self.n_min,
            "seed": _seed_repr(self.seed),
            "training_inputs": self.training_inputs.tolist(),
            "trees": [t.to_dict(leaf_members=self.leaf_members(k)) for k, t in enumerate(self.trees)],
        })

    @classmethod
    def from_json(cls, text: str) -> "TreeEnsemble":
        d = json.loads(text)
        return cls([Tree.from_dict(t) for t in d["trees"]], np.asarray(d["training_inputs"]), d["n_min"], d["seed"])


def _seed_repr(seed):
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": str(seed.entropy), "spawn_key": list(seed.spawn_key)}
    return seed


def build_ensemble(inputs, e: int = 5, n_min: int = 10, seed: SeedLike = None) -> TreeEnsemble:
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.size == 0 or len(inputs) == 0:
        raise ConfigurationError("cannot build an ensemble on an empty input set")
    if e < 1 or n_min < 1:
        raise ConfigurationError("e and n_min must be positive")
    if not np.all(np.isfinite(inputs)):
        raise ConfigurationError("inputs must be finite")
    base = as_seed_sequence(seed)
    trees = [grow_tree(inputs, n_min, np.random.default_rng(derive_seed(base, k))) for k in range(e)]
    return TreeEnsemble(trees, inputs, n_min, base)


def kernel_weights(ensemble: TreeEnsemble, query) -> np.ndarray:
    q = np.asarray(query, dtype=float)
    if q.ndim != 1:
        raise DimensionError("kernel_weights takes a single query vector")
    return ensemble.kernel_matrix(q[None, :]).toarray()[0]


def predict_regression(ensemble: TreeEnsemble, outputs, query):
    """Kernel-weighted sum of ``outputs``; a 2-D ``query`` returns one value per row."""
    outputs = np.asarray(outputs, dtype=float)
    if outputs.shape != (ensemble.L,):
        raise DimensionError(f"outputs have length {outputs.shape}, ensemble has L={ensemble.L}")
    q = np.asarray(query, dtype=float)
    values = ensemble.kernel_matrix(q) @ outputs
    return float(values[0]) if q.ndim == 1 else values


MASS_TIE_TOL = 1e-12


def classify(ensemble: TreeEnsemble, labels, query):
    """Label carrying the largest kernel mass at ``query``.

    Labels are integer codes or joint-control vectors. Ties go to the smallest
    label in mixed-radix order (agent 0 least significant).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != ensemble.L:
        raise DimensionError(f"{len(labels)} labels for an ensemble with L={ensemble.L}")
    if labels.ndim == 2:
        radix = int(labels.max()) + 1
        codes = labels @ (radix ** np.arange(labels.shape[1], dtype=np.int64))
    else:
        codes = labels
    distinct, inverse = np.unique(codes, return_inverse=True)
    w = kernel_weights(ensemble, query)
    mass = np.bincount(inverse, weights=w, minlength=len(distinct))
    best = int(np.nonzero(mass >= mass.max() - MASS_TIE_TOL)[0][0])
    if labels.ndim == 2:
        return labels[int(np.nonzero(inverse == best)[0][0])]
    return int(distinct[best])
