"""Honest tree construction and routing.

Trees are stored as flat node arrays numbered in pre-order. Internal nodes
send a row left iff ``x[feature] <= threshold``. Leaves hold the training
indices of the populate half that were routed to them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .kernel import sample_feature_bank
from .split import midpoint, scan_sorted

SPLIT_RULES = {"mmd": 0, "cart": 1}


@dataclass(frozen=True)
class TreeConfig:
    mtry: float | None = None  # None: ceil(sqrt(p))
    min_node_frac: float = 0.10
    min_leaf_size: int = 1
    max_depth: int | None = None
    honesty: bool = True

    def __post_init__(self):
        if not 0 < self.min_node_frac <= 0.2:
            raise ValueError("min_node_frac must lie in (0, 0.2]")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be at least 1")
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be at least 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be nonnegative")

    def resolved_mtry(self, p: int) -> float:
        return float(math.ceil(math.sqrt(p))) if self.mtry is None else float(self.mtry)

    def to_dict(self) -> dict:
        return {"mtry": self.mtry, "min_node_frac": self.min_node_frac,
                "min_leaf_size": self.min_leaf_size, "max_depth": self.max_depth,
                "honesty": self.honesty}


@dataclass(frozen=True)
class TreeNode:
    """Nested view of one node, for inspection."""

    feature_index: int | None = None
    cutoff_value: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    populate_ids: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature_index is None


@dataclass
class Tree:
    feature: np.ndarray  # (m,) int64, -1 at leaves
    threshold: np.ndarray  # (m,) float64
    left: np.ndarray  # (m,) int64
    right: np.ndarray  # (m,) int64
    leaf_offsets: np.ndarray  # (m + 1,) CSR offsets into leaf_members
    leaf_members: np.ndarray  # populate-half training indices grouped by leaf
    build_ids: np.ndarray
    populate_ids: np.ndarray
    seed: tuple = ()
    n_features: int = 0  # 0 when unknown
    build_counts: np.ndarray | None = field(default=None, repr=False)
    draw_rows: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def leaf_samples(self, node: int) -> np.ndarray:
        return self.leaf_members[self.leaf_offsets[node]:self.leaf_offsets[node + 1]]

    def apply(self, x) -> np.ndarray:
        """Leaf node id for every row of ``x``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        return route_rows(self.feature, self.threshold, self.left, self.right, x)

    def split_counts(self, p: int) -> np.ndarray:
        used = self.feature[self.feature >= 0]
        return np.bincount(used, minlength=p)

    def root(self) -> TreeNode:
        def build(i):
            if self.feature[i] < 0:
                return TreeNode(populate_ids=self.leaf_samples(i).copy())
            return TreeNode(int(self.feature[i]), float(self.threshold[i]),
                            build(self.left[i]), build(self.right[i]))
        return build(0)


def draw_candidates(p: int, mtry: float, rng) -> np.ndarray:
    """min(max(Poisson(mtry), 1), p) distinct feature indices, sorted."""
    if p < 1:
        raise ValueError("p must be positive")
    rng = np.random.default_rng(rng)
    k = min(max(int(rng.poisson(mtry)), 1), p)
    return np.sort(np.argsort(rng.random(p), kind="stable")[:k])


@nb.njit(cache=True, nogil=True)
def route_rows(feature, threshold, left, right, x):
    out = np.empty(x.shape[0], np.int64)
    for i in range(x.shape[0]):
        node = 0
        while feature[node] >= 0:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@nb.njit(cache=True, nogil=True)
def _grow(x, y, rule, min_frac, min_leaf, max_depth, n_cand, cand_keys, omegas):
    """Grow one tree on the build rows ``x``/``y`` (scaled responses).

    Node ids are assigned in pre-order: a depth-first stack pops the left
    child first and each child patches its id into the parent on creation.
    Every node that attempts a split consumes the next row of the random
    buffers, so at most n - 1 rows are needed.
    """
    n, p = x.shape
    d = y.shape[1]
    B = omegas.shape[1]
    cap = 2 * n
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    counts = np.zeros(cap, np.int64)
    draw_rows = np.full(cap, -1, np.int64)

    idx = np.arange(n)
    tmp = np.empty(n, np.int64)
    st_s = np.empty(cap, np.int64)
    st_e = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_parent = np.empty(cap, np.int64)
    st_isleft = np.empty(cap, np.bool_)
    sp = 0
    st_s[0] = 0
    st_e[0] = n
    st_depth[0] = 0
    st_parent[0] = -1
    st_isleft[0] = False
    sp = 1
    n_nodes = 0
    draw = 0
    while sp > 0:
        sp -= 1
        s = st_s[sp]
        e = st_e[sp]
        depth = st_depth[sp]
        parent = st_parent[sp]
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if st_isleft[sp]:
                left[parent] = node
            else:
                right[parent] = node
        m = e - s
        counts[node] = m
        if m < 2 or m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        r = draw
        draw += 1
        draw_rows[node] = r
        k = min(max(n_cand[r], 1), p)
        cands = np.sort(np.argsort(cand_keys[r])[:k])

        if rule == 0:
            q = 2 * B
            F = np.empty((m, q))
            for i in range(m):
                row = idx[s + i]
                for b in range(B):
                    ph = 0.0
                    for c in range(d):
                        ph += omegas[r, b, c] * y[row, c]
                    F[i, b] = np.cos(ph)
                    F[i, B + b] = np.sin(ph)
        else:
            q = d
            F = np.empty((m, q))
            for i in range(m):
                for c in range(d):
                    F[i, c] = y[idx[s + i], c]

        best = 0.0
        best_f = -1
        best_thr = 0.0
        vals = np.empty(m)
        Fs = np.empty((m, q))
        for j in cands:
            for i in range(m):
                vals[i] = x[idx[s + i], j]
            order = np.argsort(vals, kind="mergesort")
            vs = vals[order]
            for i in range(m):
                for c in range(q):
                    Fs[i, c] = F[order[i], c]
            n_left, scores, adm, relaxed = scan_sorted(Fs, vs, min_frac, min_leaf)
            for kk in range(n_left.size):
                if adm[kk] and scores[kk] > best:
                    best = scores[kk]
                    best_f = j
                    nl = n_left[kk]
                    best_thr = midpoint(vs[nl - 1], vs[nl])
        if best_f < 0:
            continue

        nl = 0
        nr = 0
        for i in range(s, e):
            row = idx[i]
            if x[row, best_f] <= best_thr:
                idx[s + nl] = row
                nl += 1
            else:
                tmp[nr] = row
                nr += 1
        for i in range(nr):
            idx[s + nl + i] = tmp[i]
        feature[node] = best_f
        threshold[node] = best_thr

        st_s[sp] = s + nl
        st_e[sp] = e
        st_depth[sp] = depth + 1
        st_parent[sp] = node
        st_isleft[sp] = False
        sp += 1
        st_s[sp] = s
        st_e[sp] = s + nl
        st_depth[sp] = depth + 1
        st_parent[sp] = node
        st_isleft[sp] = True
        sp += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), counts[:n_nodes].copy(), draw_rows[:n_nodes].copy())


def populate(feature, threshold, left, right, x_pop, pop_ids):
    """CSR leaf membership of the populate rows."""
    n_nodes = feature.size
    leaf_of = route_rows(feature, threshold, left, right, x_pop)
    order = np.argsort(leaf_of, kind="stable")
    members = np.asarray(pop_ids, dtype=np.int64)[order]
    offsets = np.zeros(n_nodes + 1, np.int64)
    np.cumsum(np.bincount(leaf_of, minlength=n_nodes), out=offsets[1:])
    return offsets, members


def build_tree(x, y_scaled, subsample_ids, config: TreeConfig, split_rule: str = "mmd",
               bandwidth: float = 1.0, num_features: int = 20, rng=None) -> Tree:
    """Grow one honest tree on the rows ``subsample_ids``.

    ``y_scaled`` are the standardized responses used by the criterion. With
    honesty the subsample is split 50/50 at random into a build half, which
    determines the splits, and a populate half, which fills the leaves.
    """
    if split_rule not in SPLIT_RULES:
        raise ValueError(f"unknown split rule {split_rule!r}")
    x = np.asarray(x, dtype=np.float64)
    y_scaled = np.asarray(y_scaled, dtype=np.float64)
    if y_scaled.ndim == 1:
        y_scaled = y_scaled[:, None]
    rng = np.random.default_rng(rng)
    sub = np.asarray(subsample_ids, dtype=np.int64)
    p = x.shape[1]
    d = y_scaled.shape[1]
    if config.honesty:
        if sub.size < 4:
            raise ValueError("subsample too small: honesty needs at least 4 rows")
        perm = rng.permutation(sub.size)
        half = sub.size // 2
        build_ids, pop_ids = sub[perm[:half]], sub[perm[half:]]
    else:
        if sub.size < 2:
            raise ValueError("subsample too small: need at least 2 rows")
        build_ids = pop_ids = sub

    nb_ = build_ids.size
    slots = max(nb_ - 1, 1)
    n_cand = rng.poisson(config.resolved_mtry(p), size=slots).astype(np.int64)
    cand_keys = rng.random((slots, p))
    if split_rule == "mmd":
        omegas = sample_feature_bank(d, num_features, bandwidth, rng, slots)
    else:
        omegas = np.zeros((slots, 1, d))
    max_depth = -1 if config.max_depth is None else int(config.max_depth)
    feature, threshold, left, right, counts, draw_rows = _grow(
        np.ascontiguousarray(x[build_ids]), np.ascontiguousarray(y_scaled[build_ids]),
        SPLIT_RULES[split_rule], float(config.min_node_frac), int(config.min_leaf_size),
        max_depth, n_cand, cand_keys, omegas)
    offsets, members = populate(feature, threshold, left, right,
                                np.ascontiguousarray(x[pop_ids]), pop_ids)
    return Tree(feature, threshold, left, right, offsets, members, build_ids, pop_ids,
                n_features=p, build_counts=counts, draw_rows=draw_rows)


def route(tree: Tree, x_row) -> int:
    """Leaf node id reached by a single row."""
    x_row = np.asarray(x_row, dtype=np.float64)
    if x_row.ndim != 1:
        raise ValueError("route expects a single row")
    if not np.isfinite(x_row).all():
        raise ValueError("non-finite feature value")
    if tree.n_features and x_row.size != tree.n_features:
        raise ValueError(f"expected {tree.n_features} features, got {x_row.size}")
    if x_row.size <= int(tree.feature.max(initial=-1)):
        raise ValueError("row has fewer features than the tree uses")
    return int(tree.apply(x_row)[0])
