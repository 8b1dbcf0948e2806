"""Forest training, the induced weighting function and forest files."""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import crcmod.predefined
import numba as nb
import numpy as np

from .data import Dataset, ResponseScaler, fit_scaler
from .kernel import median_heuristic
from .split import exact_mmd
from .tree import SPLIT_RULES, Tree, TreeConfig, build_tree

FOREST_MAGIC = b"DRFF"
FOREST_VERSION = 1
_crc64 = crcmod.predefined.mkPredefinedCrcFun("crc-64")


class ForestFormatError(ValueError):
    """Raised when a forest file cannot be read."""


@dataclass(frozen=True)
class ForestConfig:
    num_trees: int = 2000
    subsample_frac: float = 0.5
    num_features: int = 20
    tree: TreeConfig = field(default_factory=TreeConfig)
    split_rule: str = "mmd"
    bandwidth: float | str = "auto"
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be at least 1")
        if not 0 < self.subsample_frac <= 1:
            raise ValueError("subsample_frac must lie in (0, 1]")
        if self.num_features < 1:
            raise ValueError("num_features must be at least 1")
        if self.split_rule not in SPLIT_RULES:
            raise ValueError(f"unknown split rule {self.split_rule!r}")
        if self.bandwidth != "auto" and not (isinstance(self.bandwidth, (int, float)) and self.bandwidth > 0):
            raise ValueError("bandwidth must be 'auto' or a positive number")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tree"] = self.tree.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        d = dict(d)
        d["tree"] = TreeConfig(**d["tree"])
        return cls(**d)


@dataclass(frozen=True)
class WeightVector:
    """Sparse nonnegative weights over training rows, summing to one."""

    indices: np.ndarray
    values: np.ndarray
    n_total: int

    def dense(self) -> np.ndarray:
        out = np.zeros(self.n_total)
        out[self.indices] = self.values
        return out

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}

    @classmethod
    def from_dense(cls, w) -> "WeightVector":
        w = np.asarray(w, dtype=np.float64)
        nz = np.flatnonzero(w > 0)
        return cls(nz, w[nz], w.size)


@nb.njit(cache=True, nogil=True)
def _accumulate(leaf_of, offsets, members, W, contrib):
    for q in range(leaf_of.size):
        node = leaf_of[q]
        a = offsets[node]
        b = offsets[node + 1]
        if b == a:
            continue
        contrib[q] += 1.0
        inv = 1.0 / (b - a)
        for t in range(a, b):
            W[q, members[t]] += inv


def _tree_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])


def _fit_one(x, ys, n, config: ForestConfig, bandwidth: float, index: int) -> Tree:
    rng = np.random.default_rng(_tree_seed(config.seed, index))
    size = max(int(math.ceil(config.subsample_frac * n)), 2)
    sub = np.sort(rng.choice(n, size=size, replace=False))
    tree = build_tree(x, ys, sub, config.tree, config.split_rule, bandwidth,
                      config.num_features, rng)
    tree.seed = (int(config.seed), int(index))
    return tree


class Forest:
    """A fitted distributional forest.

    The forest keeps a snapshot of the training responses; estimates at a
    query point are functions of :meth:`weights` and those responses.
    """

    def __init__(self, trees, config: ForestConfig, scaler: ResponseScaler, y_train,
                 n_features: int, bandwidth_used: float, train_fingerprint: str,
                 x_names=None, y_names=None):
        self.trees = list(trees)
        self.config = config
        self.scaler = scaler
        self.y_train = np.asarray(y_train, dtype=np.float64)
        self.n_features = int(n_features)
        self.bandwidth_used = float(bandwidth_used)
        self.train_fingerprint = train_fingerprint
        self.x_names = list(x_names) if x_names is not None else [f"x{j + 1}" for j in range(n_features)]
        self.y_names = list(y_names) if y_names is not None else [f"y{j + 1}" for j in range(self.d)]

    @property
    def n(self) -> int:
        return self.y_train.shape[0]

    @property
    def d(self) -> int:
        return self.y_train.shape[1]

    def __repr__(self):
        return (f"Forest(num_trees={len(self.trees)}, n={self.n}, p={self.n_features}, d={self.d}, "
                f"split_rule={self.config.split_rule!r})")

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        if not np.isfinite(x).all():
            raise ValueError("non-finite feature values in query")
        return np.ascontiguousarray(x)

    def weight_matrix(self, x) -> np.ndarray:
        """Dense (n_query, n) weights; each row sums to one.

        Trees whose leaf for a query holds no populate rows are skipped and
        the average is taken over the remaining trees.
        """
        x = self._check_x(x)
        W = np.zeros((x.shape[0], self.n))
        contrib = np.zeros(x.shape[0])
        for tree in self.trees:
            _accumulate(tree.apply(x), tree.leaf_offsets, tree.leaf_members, W, contrib)
        if np.any(contrib == 0):
            raise ValueError("no tree has a populated leaf for some query")
        W /= contrib[:, None]
        return W

    def weights(self, x_row) -> WeightVector:
        return WeightVector.from_dense(self.weight_matrix(x_row)[0])

    def conditional(self, x_row):
        from .estimators import ConditionalDistribution
        return ConditionalDistribution(self.weights(x_row), self.y_train)

    def split_counts(self) -> np.ndarray:
        return np.sum([t.split_counts(self.n_features) for t in self.trees], axis=0)

    # -- serialization -------------------------------------------------
    def to_bytes(self) -> bytes:
        header = {
            "config": self.config.to_dict(),
            "scaler": self.scaler.to_dict(),
            "bandwidth_used": self.bandwidth_used,
            "train_fingerprint": self.train_fingerprint,
            "n": self.n,
            "p": self.n_features,
            "d": self.d,
            "num_trees": len(self.trees),
            "x_names": self.x_names,
            "y_names": self.y_names,
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        buf = io.BytesIO()
        buf.write(FOREST_MAGIC)
        buf.write(struct.pack("<II", FOREST_VERSION, len(hbytes)))
        buf.write(hbytes)
        buf.write(self.y_train.astype("<f8").tobytes(order="C"))
        for tree in self.trees:
            _write_tree(buf, tree)
        body = buf.getvalue()
        return body + struct.pack("<Q", _crc64(body))

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Forest":
        if len(blob) < 20 or blob[:4] != FOREST_MAGIC:
            raise ForestFormatError("not a forest file (bad magic)")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != FOREST_VERSION:
            raise ForestFormatError(f"forest format version {version} is not supported "
                                    f"(this build reads version {FOREST_VERSION})")
        body, (crc,) = blob[:-8], struct.unpack("<Q", blob[-8:])
        if _crc64(body) != crc:
            raise ForestFormatError("checksum mismatch: file is corrupted or truncated")
        try:
            (hlen,) = struct.unpack_from("<I", body, 8)
            header = json.loads(body[12:12 + hlen])
            pos = 12 + hlen
            n, d = header["n"], header["d"]
            y = np.frombuffer(body, "<f8", n * d, pos).reshape(n, d).astype(np.float64)
            pos += 8 * n * d
            trees = []
            for _ in range(header["num_trees"]):
                tree, pos = _read_tree(body, pos)
                tree.n_features = header["p"]
                trees.append(tree)
        except (struct.error, ValueError, KeyError) as exc:
            raise ForestFormatError(f"truncated or malformed forest file: {exc}") from None
        if pos != len(body):
            raise ForestFormatError("trailing bytes in forest file")
        return cls(trees, ForestConfig.from_dict(header["config"]),
                   ResponseScaler.from_dict(header["scaler"]), y, header["p"],
                   header["bandwidth_used"], header["train_fingerprint"],
                   header["x_names"], header["y_names"])

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Forest":
        return cls.from_bytes(Path(path).read_bytes())


def _preorder(tree: Tree) -> list[int]:
    order, stack = [], [0]
    while stack:
        i = stack.pop()
        order.append(i)
        if tree.feature[i] >= 0:
            stack.append(int(tree.right[i]))
            stack.append(int(tree.left[i]))
    return order


def _write_tree(buf, tree: Tree) -> None:
    seed = tree.seed if tree.seed else (0, 0)
    buf.write(struct.pack("<QQI", seed[0] & 0xFFFFFFFFFFFFFFFF, seed[1], tree.n_nodes))
    for i in _preorder(tree):
        if tree.feature[i] >= 0:
            buf.write(struct.pack("<BId", 1, int(tree.feature[i]), float(tree.threshold[i])))
        else:
            members = tree.leaf_samples(i)
            buf.write(struct.pack("<BI", 0, members.size))
            buf.write(members.astype("<u4").tobytes())
    for ids in (tree.build_ids, tree.populate_ids):
        buf.write(struct.pack("<I", ids.size))
        buf.write(np.asarray(ids).astype("<u4").tobytes())


def _read_tree(body: bytes, pos: int):
    s0, s1, m = struct.unpack_from("<QQI", body, pos)
    pos += 20
    feature = np.full(m, -1, np.int64)
    threshold = np.zeros(m)
    left = np.full(m, -1, np.int64)
    right = np.full(m, -1, np.int64)
    counts = np.zeros(m, np.int64)
    chunks = []
    # pre-order: a stack of parents still waiting for their right child
    pending = []
    for i in range(m):
        if pending:
            parent, seen_left = pending[-1]
            if not seen_left:
                left[parent] = i
                pending[-1] = (parent, True)
            else:
                right[parent] = i
                pending.pop()
        (tag,) = struct.unpack_from("<B", body, pos)
        if tag == 1:
            f, thr = struct.unpack_from("<Id", body, pos + 1)
            pos += 13
            feature[i], threshold[i] = f, thr
            pending.append((i, False))
        elif tag == 0:
            (c,) = struct.unpack_from("<I", body, pos + 1)
            pos += 5
            chunks.append(np.frombuffer(body, "<u4", c, pos).astype(np.int64))
            counts[i] = c
            pos += 4 * c
        else:
            raise ValueError(f"bad node tag {tag}")
    offsets = np.zeros(m + 1, np.int64)
    np.cumsum(counts, out=offsets[1:])
    members = np.concatenate(chunks) if chunks else np.zeros(0, np.int64)
    ids = []
    for _ in range(2):
        (c,) = struct.unpack_from("<I", body, pos)
        pos += 4
        ids.append(np.frombuffer(body, "<u4", c, pos).astype(np.int64))
        pos += 4 * c
    tree = Tree(feature, threshold, left, right, offsets, members, ids[0], ids[1], (s0, s1))
    return tree, pos


def fingerprint(ds: Dataset, config: ForestConfig) -> str:
    h = hashlib.sha256()
    h.update(ds.to_bytes())
    h.update(json.dumps(config.to_dict(), sort_keys=True).encode())
    return h.hexdigest()


def fit(ds: Dataset, config: ForestConfig | None = None, n_jobs: int = 1) -> Forest:
    """Train a forest; the result does not depend on ``n_jobs``."""
    config = config or ForestConfig()
    if ds.n < 10:
        raise ValueError(f"dataset too small: n={ds.n} < 10")
    scaler = fit_scaler(ds.y)
    ys = np.ascontiguousarray(scaler.transform(ds.y))
    if config.bandwidth == "auto":
        bandwidth = median_heuristic(ys, rng=np.random.default_rng(_tree_seed(config.seed, -1 & 0xFFFFFFFF)))
    else:
        bandwidth = float(config.bandwidth)
    x = ds.x

    def task(i):
        return _fit_one(x, ys, ds.n, config, bandwidth, i)

    if n_jobs == 1:
        trees = [task(i) for i in range(config.num_trees)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(task, range(config.num_trees)))
    return Forest(trees, config, scaler, ds.y, ds.p, bandwidth, fingerprint(ds, config),
                  ds.x_names, ds.y_names)


def weights(f: Forest, x_row) -> WeightVector:
    return f.weights(x_row)


def point_mass_mmd(w_dense, y_support, y_obs, sigma) -> float:
    """MMD^2 between sum_i w_i delta_{y_i} and delta_{y_obs}."""
    nz = np.flatnonzero(w_dense > 0)
    return exact_mmd(y_support[nz], np.atleast_2d(y_obs), sigma, u_weights=w_dense[nz], v_weights=[1.0])


def variable_importance(f: Forest, ds_holdout: Dataset, rng=None, n_repeats: int = 1,
                        permuter=None) -> np.ndarray:
    """Permutation importance with the MMD to the observed point mass as loss.

    For each feature the holdout column is permuted and the mean loss
    increase over the unpermuted baseline is reported, averaged over
    ``n_repeats`` permutations. ``permuter(column, rng)`` overrides the
    random permutation.
    """
    if ds_holdout.p != f.n_features:
        raise ValueError(f"holdout has {ds_holdout.p} features, forest expects {f.n_features}")
    if ds_holdout.n < 1:
        raise ValueError("empty holdout")
    rng = np.random.default_rng(rng)
    permuter = permuter or (lambda col, g: g.permutation(col))
    ys_train = f.scaler.transform(f.y_train)
    ys_hold = f.scaler.transform(ds_holdout.y)
    sigma = f.bandwidth_used

    def loss(x):
        W = f.weight_matrix(x)
        return np.mean([point_mass_mmd(W[i], ys_train, ys_hold[i], sigma) for i in range(x.shape[0])])

    base = loss(ds_holdout.x)
    scores = np.zeros(f.n_features)
    for j in range(f.n_features):
        vals = []
        for _ in range(n_repeats):
            x = ds_holdout.x.copy()
            x[:, j] = permuter(x[:, j], rng)
            vals.append(loss(x) - base)
        scores[j] = np.mean(vals)
    return scores
