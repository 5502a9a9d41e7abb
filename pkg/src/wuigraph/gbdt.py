"""Second-order gradient-boosted trees for binary classification.

Exact greedy split search on sorted feature values, L2-regularised Newton
leaves, learned default direction for missing values (NaN).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

FORMAT_VERSION = 1


@dataclass(frozen=True)
class GbdtConfig:
    n_trees: int = 300
    max_depth: int = 6
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    lambda_reg: float = 1.0
    gamma_split: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.lambda_reg < 0 or self.min_child_weight < 0 or self.gamma_split < 0:
            raise ValueError("regularisation terms must be non-negative")


@dataclass
class Tree:
    # Parallel arrays indexed by tree node; leaves have feature == -1.
    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    default_left: list = field(default_factory=list)
    value: list = field(default_factory=list)
    gain: list = field(default_factory=list)

    def _add(self, value=0.0):
        for a, v in ((self.feature, -1), (self.threshold, 0.0), (self.left, -1), (self.right, -1),
                     (self.default_left, True), (self.value, value), (self.gain, 0.0)):
            a.append(v)
        return len(self.feature) - 1

    def depth(self) -> int:
        def rec(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0) if self.feature else 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        dflt = np.asarray(self.default_left)
        active = feat[node] >= 0
        while np.any(active):
            rows = np.flatnonzero(active)
            n = node[rows]
            x = X[rows, feat[n]]
            go_left = np.where(np.isnan(x), dflt[n], x < thr[n])
            node[rows] = np.where(go_left, left[n], right[n])
            active = feat[node] >= 0
        return np.asarray(self.value)[node]

    def to_list(self) -> list:
        return [self.feature, self.threshold, self.left, self.right,
                [bool(b) for b in self.default_left], self.value, self.gain]

    @classmethod
    def from_list(cls, rows) -> "Tree":
        f, t, lft, rgt, d, v, g = rows
        return cls([int(a) for a in f], [float(a) for a in t], [int(a) for a in lft],
                   [int(a) for a in rgt], [bool(a) for a in d], [float(a) for a in v],
                   [float(a) for a in g])


@dataclass
class Forest:
    base_score: float
    learning_rate: float
    n_features: int
    trees: list = field(default_factory=list)
    feature_names: list = field(default_factory=list)
    config: GbdtConfig = field(default_factory=GbdtConfig)

    def raw_margin(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.full(len(X), self.base_score)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "config": asdict(self.config),
            "trees": [t.to_list() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> "Forest":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported forest format {d.get('format_version')!r}")
        return cls(float(d["base_score"]), float(d["learning_rate"]), int(d["n_features"]),
                   [Tree.from_list(t) for t in d["trees"]], list(d.get("feature_names", [])),
                   GbdtConfig(**d["config"]))


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("expected a 2-D feature table")
    return X


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log_loss(y, p) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def split_gain(GL, HL, GR, HR, lam, gamma=0.0):
    G, H = GL + GR, HL + HR
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)) - gamma


@dataclass
class Split:
    gain: float
    feature: int
    threshold: float
    default_left: bool


def best_split(X, g, h, rows, cfg: GbdtConfig, sorted_idx=None) -> Split | None:
    """Highest-gain split of ``rows``; ties go to the lowest feature index, then
    the lowest threshold, then missing values sent left. Returns None when no
    split has positive gain."""
    rows = np.asarray(rows, dtype=np.int64)
    n_feat, m = X.shape[1], len(rows)
    if m < 2 or n_feat == 0:
        return None
    if sorted_idx is None:
        sorted_idx = [np.argsort(X[:, f], kind="stable") for f in range(n_feat)]
    member = np.zeros(len(X), dtype=bool)
    member[rows] = True
    # Stable argsort places NaN last, so every row below is sorted with
    # missing values trailing; each feature keeps exactly m members.
    S = np.vstack([o[member[o]] for o in sorted_idx])
    V = X[S, np.arange(n_feat)[:, None]]
    present = ~np.isnan(V)
    gs, hs = np.where(present, g[S], 0.0), np.where(present, h[S], 0.0)
    GL, HL = np.cumsum(gs, axis=1)[:, :-1], np.cumsum(hs, axis=1)[:, :-1]
    Gp, Hp = gs.sum(axis=1, keepdims=True), hs.sum(axis=1, keepdims=True)
    Gm = np.where(present, 0.0, g[S]).sum(axis=1, keepdims=True)
    Hm = np.where(present, 0.0, h[S]).sum(axis=1, keepdims=True)
    has_miss = ~present.all(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        cut = V[:, 1:] > V[:, :-1]
        thr = 0.5 * (V[:, :-1] + V[:, 1:])
    lam, mcw = cfg.lambda_reg, cfg.min_child_weight
    cands = []
    for dleft, GLx, HLx, valid in ((True, GL + Gm, HL + Hm, cut),
                                   (False, GL, HL, cut & has_miss)):
        GRx, HRx = Gp + Gm - GLx, Hp + Hm - HLx
        gain = split_gain(GLx, HLx, GRx, HRx, lam, cfg.gamma_split)
        ok = valid & (HLx >= mcw) & (HRx >= mcw)
        cands.append(np.where(ok, gain, -np.inf))
    gains = np.stack(cands)  # (direction, feature, position)
    top = gains.max()
    if not top > 0:
        return None
    d, f, k = np.nonzero(gains == top)
    # lexsort: last key is primary
    pick = np.lexsort((d, thr[f, k], f))[0]
    f, k, d = int(f[pick]), int(k[pick]), int(d[pick])
    return Split(float(top), f, float(thr[f, k]), d == 0)


def _leaf_value(G, H, lam):
    return -G / (H + lam)


def fit_tree(X, g, h, cfg: GbdtConfig, sorted_idx=None) -> Tree:
    tree = Tree()
    root = tree._add()
    stack = [(root, np.arange(len(X)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        G, H = float(g[rows].sum()), float(h[rows].sum())
        tree.value[node] = _leaf_value(G, H, cfg.lambda_reg)
        if depth >= cfg.max_depth or len(rows) < 2:
            continue
        s = best_split(X, g, h, rows, cfg, sorted_idx)
        if s is None:
            continue
        x = X[rows, s.feature]
        go_left = np.where(np.isnan(x), s.default_left, x < s.threshold)
        lft, rgt = tree._add(), tree._add()
        tree.feature[node], tree.threshold[node] = s.feature, s.threshold
        tree.default_left[node], tree.gain[node] = s.default_left, s.gain
        tree.left[node], tree.right[node] = lft, rgt
        tree.value[node] = 0.0
        stack.append((rgt, rows[~go_left], depth + 1))
        stack.append((lft, rows[go_left], depth + 1))
    return tree


def fit(X, y, cfg: GbdtConfig = GbdtConfig(), feature_names=None, history: list | None = None) -> Forest:
    """Boost ``cfg.n_trees`` trees on the logistic loss.

    ``history``, when given, receives the training log-loss after each round
    (index 0 is the base score alone).
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    if len(X) < 2 or len(X) != len(y):
        raise ValueError("need at least two rows and one label per row")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        raise ValueError("both classes must be present to fit")
    prior = float(y.mean())
    forest = Forest(math.log(prior / (1 - prior)), cfg.learning_rate, X.shape[1],
                    feature_names=list(feature_names or []), config=cfg)
    sorted_idx = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
    margin = np.full(len(X), forest.base_score)
    if history is not None:
        history.append(log_loss(y, sigmoid(margin)))
    for _ in range(cfg.n_trees):
        p = sigmoid(margin)
        g, h = p - y, p * (1 - p)
        tree = fit_tree(X, g, h, cfg, sorted_idx)
        forest.trees.append(tree)
        margin = margin + cfg.learning_rate * tree.predict(X)
        if history is not None:
            history.append(log_loss(y, sigmoid(margin)))
    return forest


def predict_proba(forest: Forest, X) -> np.ndarray:
    return sigmoid(forest.raw_margin(X))


def gain_importance(forest: Forest) -> np.ndarray:
    """Total split gain per feature, normalised to sum to one."""
    tot = np.zeros(forest.n_features)
    for t in forest.trees:
        for f, gn in zip(t.feature, t.gain):
            if f >= 0:
                tot[f] += gn
    s = tot.sum()
    return tot / s if s > 0 else tot
