"""Propensity scores by gradient-boosted regression trees with
balance-metric stopping.

Forward stagewise additive fitting of the treatment log-odds: each iteration
fits a depth-bounded least-squares tree to the current residuals t - sigma(g)
on a seeded bag subsample and adds shrunken Newton-step leaf values to g. The
ensemble is deliberately overgrown; every few trees the candidate weights are
scored on covariate balance, and the kept iteration is the one minimizing the
stop rule's metric (mean |SMD| or max KS) over that trace, iteration 0
included.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import balance
from ..dataset import DesignMatrix
from ..weights import Estimand, clip_ps, ps_to_weights
from .logistic import _as_matrix

#: Leaf Newton values are clipped to this magnitude before shrinkage.
LEAF_VALUE_BOUND = 4.0

ES_MEAN = "ES_MEAN"
KS_MAX = "KS_MAX"
STOP_RULES = (ES_MEAN, KS_MAX)


@dataclass
class GbmHyperparameters:
    max_trees: int = 3000
    depth: int = 3
    shrinkage: float = 0.01
    bag_fraction: float = 0.5
    eval_every: int = 10
    min_leaf: int = 10

    def __post_init__(self):
        if self.max_trees < self.eval_every:
            raise ValueError("max_trees must be >= eval_every")
        if not 0 < self.bag_fraction <= 1.0:
            raise ValueError("bag_fraction must be in (0, 1]")
        if self.depth < 1 or self.min_leaf < 1 or self.eval_every < 1:
            raise ValueError("depth, min_leaf and eval_every must be >= 1")
        if not 0 < self.shrinkage <= 1.0:
            raise ValueError("shrinkage must be in (0, 1]")


@dataclass
class Tree:
    """Flat axis-aligned tree: feature < 0 marks a leaf holding ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray


def apply_tree(tree: Tree, M: np.ndarray) -> np.ndarray:
    """Leaf value for every row of M (values unscaled by shrinkage)."""
    out = np.empty(M.shape[0])
    stack = [(0, np.arange(M.shape[0]))]
    while stack:
        nid, rows = stack.pop()
        if tree.feature[nid] < 0:
            out[rows] = tree.value[nid]
            continue
        go_left = M[rows, tree.feature[nid]] <= tree.threshold[nid]
        stack.append((tree.left[nid], rows[go_left]))
        stack.append((tree.right[nid], rows[~go_left]))
    return out


def _leaf_value(r: np.ndarray, h: np.ndarray) -> float:
    v = r.sum() / max(h.sum(), 1e-12)
    return float(np.clip(v, -LEAF_VALUE_BOUND, LEAF_VALUE_BOUND))


def _build_tree(M, rows, r, h, depth, min_leaf) -> Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def grow(node_rows, remaining) -> int:
        nid = new_node()
        n_node = node_rows.size
        if remaining == 0 or n_node < 2 * min_leaf:
            value[nid] = _leaf_value(r[node_rows], h[node_rows])
            return nid
        r_node = r[node_rows]
        total = r_node.sum()
        base = total * total / n_node
        best_gain = base + 1e-12
        best = None
        for j in range(M.shape[1]):
            x = M[node_rows, j]
            order = np.argsort(x, kind="stable")
            xs = x[order]
            cs = np.cumsum(r_node[order])[:-1]
            counts = np.arange(1, n_node)
            valid = (
                (counts >= min_leaf)
                & (counts <= n_node - min_leaf)
                & (xs[:-1] != xs[1:])
            )
            if not valid.any():
                continue
            gain = np.where(
                valid,
                cs**2 / counts + (total - cs) ** 2 / (n_node - counts),
                -np.inf,
            )
            k = int(np.argmax(gain))
            if gain[k] > best_gain:
                best_gain = float(gain[k])
                best = (j, 0.5 * (xs[k] + xs[k + 1]))
        if best is None:
            value[nid] = _leaf_value(r[node_rows], h[node_rows])
            return nid
        j, thr = best
        go_left = M[node_rows, j] <= thr
        feature[nid] = j
        threshold[nid] = thr
        left[nid] = grow(node_rows[go_left], remaining - 1)
        right[nid] = grow(node_rows[~go_left], remaining - 1)
        return nid

    grow(rows, depth)
    return Tree(
        feature=np.array(feature, dtype=int),
        threshold=np.array(threshold),
        left=np.array(left, dtype=int),
        right=np.array(right, dtype=int),
        value=np.array(value),
    )


@dataclass
class TraceEntry:
    iteration: int
    mean_smd: float
    max_ks: float

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "mean_smd": self.mean_smd, "max_ks": self.max_ks}


@dataclass
class GbmFit:
    """Boosted ensemble with the balance trace and per-rule selections."""

    trees: list[Tree]
    init: float
    shrinkage: float
    selected_iteration: dict[str, int]
    trace: list[TraceEntry]
    seed: int
    hp: GbmHyperparameters
    estimand: Estimand

    def predict_scores(self, X, n_trees: int | None = None) -> np.ndarray:
        """Log-odds after the first ``n_trees`` trees (all by default)."""
        M, _ = _as_matrix(X)
        k = len(self.trees) if n_trees is None else n_trees
        g = np.full(M.shape[0], self.init)
        for tree in self.trees[:k]:
            g = g + self.shrinkage * apply_tree(tree, M)
        return g


def _balance_metrics(M, t, ps, estimand, clip_eps) -> tuple[float, float]:
    clipped, _ = clip_ps(ps, clip_eps)
    w = ps_to_weights(clipped, t, estimand).weights
    smds = [balance.smd(M[:, j], t, w, estimand) for j in range(M.shape[1])]
    kss = [balance.weighted_ks(M[:, j], t, w) for j in range(M.shape[1])]
    return float(np.mean(smds)), float(np.max(kss))


def fit_gbm_ensemble(
    X,
    t: np.ndarray,
    estimand: Estimand,
    hp: GbmHyperparameters | None = None,
    seed: int = 0,
    clip_eps: float = 1e-6,
) -> tuple[GbmFit, dict[str, np.ndarray]]:
    """Grow the full ensemble once and select iterations for BOTH stop rules.

    Returns the fit plus a map stop rule -> propensity scores at that rule's
    selected iteration. Deterministic given (inputs, seed).
    """
    hp = hp or GbmHyperparameters()
    M, _ = _as_matrix(X)
    t = np.asarray(t, dtype=float)
    if M.shape[0] != t.size:
        raise ValueError("X and t must have the same number of rows")
    n = t.size
    tbar = t.mean()
    if not 0 < tbar < 1:
        raise ValueError("treatment vector must contain both classes")

    rng = np.random.default_rng(seed)
    init = float(np.log(tbar / (1 - tbar)))
    g = np.full(n, init)
    ti = t.astype(int)

    trees: list[Tree] = []
    trace: list[TraceEntry] = []
    best: dict[str, tuple[float, int, np.ndarray]] = {}

    def evaluate(iteration: int):
        ps = 1.0 / (1.0 + np.exp(-g))
        mean_smd, max_ks = _balance_metrics(M, ti, ps, estimand, clip_eps)
        trace.append(TraceEntry(iteration=iteration, mean_smd=mean_smd, max_ks=max_ks))
        for rule, metric in ((ES_MEAN, mean_smd), (KS_MAX, max_ks)):
            if rule not in best or metric < best[rule][0]:
                best[rule] = (metric, iteration, ps.copy())

    evaluate(0)
    bag_n = max(2 * hp.min_leaf, int(round(hp.bag_fraction * n)))
    bag_n = min(bag_n, n)
    for it in range(1, hp.max_trees + 1):
        bag = np.sort(rng.choice(n, size=bag_n, replace=False))
        p = 1.0 / (1.0 + np.exp(-g))
        r = t - p
        h = np.maximum(p * (1.0 - p), 1e-12)
        tree = _build_tree(M, bag, r, h, hp.depth, hp.min_leaf)
        trees.append(tree)
        g = g + hp.shrinkage * apply_tree(tree, M)
        if it % hp.eval_every == 0 or it == hp.max_trees:
            evaluate(it)

    fit = GbmFit(
        trees=trees,
        init=init,
        shrinkage=hp.shrinkage,
        selected_iteration={rule: best[rule][1] for rule in STOP_RULES},
        trace=trace,
        seed=seed,
        hp=hp,
        estimand=estimand,
    )
    ps_by_rule = {rule: best[rule][2] for rule in STOP_RULES}
    return fit, ps_by_rule


def fit_gbm(
    X,
    t: np.ndarray,
    estimand: Estimand,
    stop_rule: str = ES_MEAN,
    hp: GbmHyperparameters | None = None,
    seed: int = 0,
    clip_eps: float = 1e-6,
) -> tuple[GbmFit, np.ndarray]:
    """Boosted propensity scores at the iteration chosen by ``stop_rule``."""
    if stop_rule not in STOP_RULES:
        raise ValueError(f"stop_rule must be one of {STOP_RULES}")
    fit, ps_by_rule = fit_gbm_ensemble(X, t, estimand, hp=hp, seed=seed, clip_eps=clip_eps)
    return fit, ps_by_rule[stop_rule]
