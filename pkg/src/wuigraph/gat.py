"""Edge-aware graph attention classifier written directly in numpy.

One attention layer with K heads over incoming edges (no self-loops), head
outputs concatenated, followed by a two-hidden-layer ReLU MLP emitting a
damage logit. Gradients are derived by hand; ``loss_and_grads`` is checked
against central differences in the test suite.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .nodes import EMBEDDING_SLOTS, N_FEATURES, STRUCTURAL_SLOTS, TOPO_SLOTS

log = logging.getLogger(__name__)

N_EDGE_FEATURES = 4
FORMAT_VERSION = 1


class ConfigurationError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    weight_decay: float = 1e-6
    gat_dropout: float = 0.05
    mlp_dropout: float = 0.1
    epochs: int = 1000
    patience: int = 100
    lr_decay_factor: float = 0.9
    lr_decay_every: int = 50  # 0 disables the schedule
    heads: int = 4
    hidden: int = 64
    mlp_hidden: tuple = (128, 64)
    leaky_slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not (self.lr > 0 and self.weight_decay >= 0):
            raise ValueError("lr must be positive and weight_decay non-negative")
        if not (0 <= self.gat_dropout < 1 and 0 <= self.mlp_dropout < 1):
            raise ValueError("dropout rates must be in [0, 1)")
        if self.epochs < 1 or self.patience < 0 or self.patience > self.epochs:
            raise ValueError("need epochs >= 1 and 0 <= patience <= epochs")
        object.__setattr__(self, "mlp_hidden", tuple(int(h) for h in self.mlp_hidden))
        if len(self.mlp_hidden) != 2:
            raise ValueError("the MLP head has exactly two hidden layers")


PARAM_NAMES = ("W", "b", "theta", "a_dst", "a_src", "a_edge", "W1", "c1", "W2", "c2", "W3", "c3")


def param_shapes(cfg: TrainConfig, n_features: int = N_FEATURES) -> dict:
    kd = cfg.heads * cfg.hidden
    h1, h2 = cfg.mlp_hidden
    return {
        "W": (kd, n_features), "b": (kd,),
        "theta": (kd, N_EDGE_FEATURES),
        "a_dst": (cfg.heads, cfg.hidden), "a_src": (cfg.heads, cfg.hidden),
        "a_edge": (cfg.heads, cfg.hidden),
        "W1": (h1, kd), "c1": (h1,), "W2": (h2, h1), "c2": (h2,), "W3": (1, h2), "c3": (1,),
    }


@dataclass
class GatParams:
    """Trainable arrays plus the fixed feature standardisation."""
    arrays: dict
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        shapes = param_shapes(self.config, len(self.feature_mean))
        for name, shape in shapes.items():
            if name not in self.arrays:
                raise ConfigurationError(f"missing parameter {name}")
            a = np.asarray(self.arrays[name], dtype=np.float64)
            if a.shape != shape:
                raise ConfigurationError(f"{name}: expected shape {shape}, got {a.shape}")
            self.arrays[name] = a

    def copy(self) -> "GatParams":
        return GatParams({k: v.copy() for k, v in self.arrays.items()},
                         self.feature_mean.copy(), self.feature_scale.copy(), self.config)

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["mlp_hidden"] = list(cfg["mlp_hidden"])
        return {
            "format_version": FORMAT_VERSION,
            "config": cfg,
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "shapes": {k: list(v.shape) for k, v in self.arrays.items()},
            "arrays": {k: self.arrays[k].tolist() for k in PARAM_NAMES},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GatParams":
        if d.get("format_version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported GAT format {d.get('format_version')!r}")
        cfg = TrainConfig(**d["config"])
        arrays = {k: np.array(v, dtype=np.float64).reshape(d["shapes"][k])
                  for k, v in d["arrays"].items()}
        return cls(arrays, np.array(d["feature_mean"]), np.array(d["feature_scale"]), cfg)


def init_params(cfg: TrainConfig, features: np.ndarray | None = None,
                zero_output: bool = False) -> GatParams:
    """Glorot-uniform weights, zero biases, seeded by ``cfg.seed``."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    shapes = param_shapes(cfg)
    arrays = {}
    for name in PARAM_NAMES:
        shape = shapes[name]
        if len(shape) == 1:
            arrays[name] = np.zeros(shape)
            continue
        if name.startswith("a_"):
            fan_in, fan_out = 3 * cfg.hidden, 1
        else:
            fan_out, fan_in = shape
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        arrays[name] = rng.uniform(-lim, lim, size=shape)
    if zero_output:
        arrays["W3"][:] = 0.0
    if features is None:
        mean, scale = np.zeros(N_FEATURES), np.ones(N_FEATURES)
    else:
        mean, scale = feature_standardization(features)
    return GatParams(arrays, mean, scale, cfg)


def feature_standardization(features: np.ndarray):
    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


# --- graph tensors ----------------------------------------------------------

@dataclass
class GraphTensors:
    """Edge arrays ordered canonically within each target node.

    The within-target order depends only on edge and source-node content, so
    every per-node reduction is summed in the same order under any node
    relabelling.
    """
    x_raw: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_feat: np.ndarray
    inc_dst: sp.csr_matrix
    inc_src: sp.csr_matrix

    @property
    def n_nodes(self):
        return len(self.x_raw)


def make_tensors(features: np.ndarray, src, dst, edge_feat) -> GraphTensors:
    features = np.asarray(features, dtype=np.float64)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    edge_feat = np.asarray(edge_feat, dtype=np.float64).reshape(-1, N_EDGE_FEATURES)
    n, e = len(features), len(src)
    if features.ndim != 2:
        raise ConfigurationError("node features must be a 2-D array")
    if len(dst) != e or len(edge_feat) != e:
        raise ConfigurationError("edge arrays differ in length")
    if e and (np.any(src == dst) or src.max() >= n or dst.max() >= n or min(src.min(), dst.min()) < 0):
        raise ConfigurationError("edges must reference existing nodes and contain no self-loops")
    # lexsort: last key is primary
    keys = [features[src, c] for c in range(features.shape[1] - 1, -1, -1)]
    keys += [edge_feat[:, c] for c in range(N_EDGE_FEATURES - 1, -1, -1)]
    order = np.lexsort(keys + [dst]) if e else np.arange(0)
    src, dst, edge_feat = src[order], dst[order], edge_feat[order]
    ar = np.arange(e)
    inc_dst = sp.csr_matrix((np.ones(e), (dst, ar)), shape=(n, e))
    inc_src = sp.csr_matrix((np.ones(e), (src, ar)), shape=(n, e))
    inc_dst.sort_indices()
    inc_src.sort_indices()
    return GraphTensors(features, src, dst, edge_feat, inc_dst, inc_src)


def restrict_to_targets(t: GraphTensors, targets) -> GraphTensors:
    """Same nodes, only the edges pointing at ``targets``.

    With one attention layer the outputs of ``targets`` are unchanged, and the
    canonical edge order is preserved, so their sums are bit-identical.
    """
    keep = np.zeros(t.n_nodes, dtype=bool)
    keep[np.asarray(targets, dtype=np.int64)] = True
    sel = np.flatnonzero(keep[t.dst])
    n, e = t.n_nodes, len(sel)
    src, dst = t.src[sel], t.dst[sel]
    ar = np.arange(e)
    inc_dst = sp.csr_matrix((np.ones(e), (dst, ar)), shape=(n, e))
    inc_src = sp.csr_matrix((np.ones(e), (src, ar)), shape=(n, e))
    inc_dst.sort_indices()
    inc_src.sort_indices()
    return GraphTensors(t.x_raw, src, dst, t.edge_feat[sel], inc_dst, inc_src)


def tensors_from_graph(graph) -> GraphTensors:
    return make_tensors(graph.features(), graph.src, graph.dst, graph.edge_features)


# --- forward / backward -------------------------------------------------------

def _leaky(s, slope):
    return np.where(s > 0, s, slope * s)


def forward(t: GraphTensors, params: GatParams, train_mode: bool = False,
            rng: np.random.Generator | None = None) -> dict:
    """Full forward pass; returns a cache with 'H' (N x K*D), 'alpha' (E x K),
    'logit' (N,) and intermediates needed by ``backward``."""
    p, cfg = params.arrays, params.config
    K, D = cfg.heads, cfg.hidden
    if t.x_raw.shape[1] != p["W"].shape[1]:
        raise ConfigurationError(
            f"feature width {t.x_raw.shape[1]} does not match W ({p['W'].shape[1]})")
    n, e = t.n_nodes, len(t.src)
    X = (t.x_raw - params.feature_mean) / params.feature_scale
    Z = X @ p["W"].T + p["b"]
    Zr = Z.reshape(n, K, D)
    Q = t.edge_feat @ p["theta"].T
    Qr = Q.reshape(e, K, D)
    s_dst = np.einsum("nkd,kd->nk", Zr, p["a_dst"])
    s_src = np.einsum("nkd,kd->nk", Zr, p["a_src"])
    s_edge = np.einsum("ekd,kd->ek", Qr, p["a_edge"])
    s = s_dst[t.dst] + s_src[t.src] + s_edge
    ev = _leaky(s, cfg.leaky_slope)
    seg_max = np.full((n, K), -np.inf)
    np.maximum.at(seg_max, t.dst, ev)
    ex = np.exp(ev - seg_max[t.dst]) if e else np.zeros((0, K))
    den = t.inc_dst @ ex
    alpha = ex / den[t.dst] if e else ex

    drop_a = None
    alpha_d = alpha
    if train_mode and cfg.gat_dropout > 0:
        keep = 1.0 - cfg.gat_dropout
        drop_a = (rng.random(alpha.shape) < keep) / keep
        alpha_d = alpha * drop_a

    Zsrc = Zr[t.src]
    M = t.inc_dst @ (alpha_d[:, :, None] * Zsrc).reshape(e, K * D)
    M = np.asarray(M).reshape(n, K * D)
    H = np.maximum(M, 0.0)

    A1 = H @ p["W1"].T + p["c1"]
    R1 = np.maximum(A1, 0.0)
    A2_in, drop1 = R1, None
    if train_mode and cfg.mlp_dropout > 0:
        keep = 1.0 - cfg.mlp_dropout
        drop1 = (rng.random(R1.shape) < keep) / keep
        A2_in = R1 * drop1
    A2 = A2_in @ p["W2"].T + p["c2"]
    R2 = np.maximum(A2, 0.0)
    A3_in, drop2 = R2, None
    if train_mode and cfg.mlp_dropout > 0:
        keep = 1.0 - cfg.mlp_dropout
        drop2 = (rng.random(R2.shape) < keep) / keep
        A3_in = R2 * drop2
    # row-wise reduction: BLAS gemv results depend on row position
    logit = (A3_in * p["W3"][0]).sum(axis=1) + p["c3"][0]
    return dict(X=X, Zr=Zr, Qr=Qr, s=s, alpha=alpha, alpha_d=alpha_d, drop_a=drop_a,
                Zsrc=Zsrc, M=M, H=H, A1=A1, A2_in=A2_in, drop1=drop1, A2=A2,
                A3_in=A3_in, drop2=drop2, logit=logit)


def backward(t: GraphTensors, params: GatParams, cache: dict, dlogit: np.ndarray) -> dict:
    p, cfg = params.arrays, params.config
    K, D = cfg.heads, cfg.hidden
    n, e = t.n_nodes, len(t.src)
    g = {}
    g["W3"] = dlogit[None, :] @ cache["A3_in"]
    g["c3"] = np.array([dlogit.sum()])
    dR2 = dlogit[:, None] * p["W3"]
    if cache["drop2"] is not None:
        dR2 = dR2 * cache["drop2"]
    dA2 = dR2 * (cache["A2"] > 0)
    g["W2"] = dA2.T @ cache["A2_in"]
    g["c2"] = dA2.sum(axis=0)
    dR1 = dA2 @ p["W2"]
    if cache["drop1"] is not None:
        dR1 = dR1 * cache["drop1"]
    dA1 = dR1 * (cache["A1"] > 0)
    g["W1"] = dA1.T @ cache["H"]
    g["c1"] = dA1.sum(axis=0)
    dH = dA1 @ p["W1"]

    dM = (dH * (cache["M"] > 0)).reshape(n, K, D)
    dM_e = dM[t.dst]  # (E, K, D)
    alpha, alpha_d = cache["alpha"], cache["alpha_d"]
    Zr, Qr = cache["Zr"], cache["Qr"]
    d_alpha_d = np.einsum("ekd,ekd->ek", dM_e, cache["Zsrc"])
    dZ = np.asarray(t.inc_src @ (alpha_d[:, :, None] * dM_e).reshape(e, K * D)).reshape(n, K, D)
    d_alpha = d_alpha_d * cache["drop_a"] if cache["drop_a"] is not None else d_alpha_d
    inner = t.inc_dst @ (alpha * d_alpha)
    de = alpha * (d_alpha - inner[t.dst]) if e else d_alpha
    ds = de * np.where(cache["s"] > 0, 1.0, cfg.leaky_slope)
    ds_dst = t.inc_dst @ ds
    ds_src = t.inc_src @ ds
    g["a_dst"] = np.einsum("nk,nkd->kd", ds_dst, Zr)
    g["a_src"] = np.einsum("nk,nkd->kd", ds_src, Zr)
    g["a_edge"] = np.einsum("ek,ekd->kd", ds, Qr)
    dZ = dZ + ds_dst[:, :, None] * p["a_dst"][None] + ds_src[:, :, None] * p["a_src"][None]
    dQ = (ds[:, :, None] * p["a_edge"][None]).reshape(e, K * D)
    g["theta"] = dQ.T @ t.edge_feat
    dZf = dZ.reshape(n, K * D)
    g["W"] = dZf.T @ cache["X"]
    g["b"] = dZf.sum(axis=0)
    return g


def _bce_terms(logit, y):
    return np.logaddexp(0.0, logit) - y * logit


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def loss_and_grads(t: GraphTensors, params: GatParams, mask, labels, train_mode: bool = False,
                   rng: np.random.Generator | None = None, l2: float | None = None):
    """Mean BCE over ``mask`` nodes plus 0.5 * weight_decay * ||params||^2."""
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("loss mask is empty")
    labels = np.asarray(labels, dtype=float)
    y = labels[mask]
    if np.any(np.isnan(y)):
        raise ValueError("loss mask includes unlabeled nodes")
    wd = params.config.weight_decay if l2 is None else l2
    cache = forward(t, params, train_mode, rng)
    z = cache["logit"][mask]
    data_loss = float(np.mean(_bce_terms(z, y)))
    reg = 0.5 * wd * sum(float(np.sum(a * a)) for a in params.arrays.values())
    dlogit = np.zeros(t.n_nodes)
    dlogit[mask] = (_sigmoid(z) - y) / len(mask)
    grads = backward(t, params, cache, dlogit)
    if wd:
        for k in grads:
            grads[k] = grads[k] + wd * params.arrays[k]
    return data_loss + reg, grads


def data_loss(t: GraphTensors, params: GatParams, mask, labels) -> float:
    mask = np.asarray(mask, dtype=np.int64)
    z = forward(t, params)["logit"][mask]
    return float(np.mean(_bce_terms(z, np.asarray(labels, dtype=float)[mask])))


def predict_logits(t: GraphTensors, params: GatParams) -> np.ndarray:
    return forward(t, params, train_mode=False)["logit"]


def predict_proba(graph_or_tensors, params: GatParams) -> np.ndarray:
    """Damage probability for every building node of a ContagionGraph (in
    ``graph.building_idx`` order), or for every node of a GraphTensors."""
    if isinstance(graph_or_tensors, GraphTensors):
        return _sigmoid(predict_logits(graph_or_tensors, params))
    graph = graph_or_tensors
    probs = _sigmoid(predict_logits(tensors_from_graph(graph), params))
    return probs[graph.building_idx]


def attention_coefficients(t: GraphTensors, params: GatParams) -> np.ndarray:
    """(E, K) attention weights aligned with ``t.src`` / ``t.dst``."""
    return forward(t, params)["alpha"]


# --- training -------------------------------------------------------------------

@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def train(t: GraphTensors, labels, masks: dict, cfg: TrainConfig = TrainConfig(),
          params: GatParams | None = None) -> tuple[GatParams, TrainHistory]:
    """Full-batch Adam with early stopping on validation loss.

    When the validation mask is empty the training loss is monitored instead.
    Returns the parameters from the best monitored epoch.
    """
    labels = np.asarray(labels, dtype=float)
    train_idx = np.asarray(masks.get("train", []), dtype=np.int64)
    val_idx = np.asarray(masks.get("val", []), dtype=np.int64)
    if train_idx.size == 0:
        raise ValueError("training mask is empty")
    if params is None:
        params = init_params(cfg, t.x_raw)
    else:
        params = params.copy()
        params.config = cfg
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    monitor = val_idx if val_idx.size else train_idx
    t_train = restrict_to_targets(t, train_idx)
    t_mon = restrict_to_targets(t, monitor)
    m = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    v = {k: np.zeros_like(a) for k, a in params.arrays.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    hist = TrainHistory()
    best, best_loss, stale = params.copy(), math.inf, 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr * (cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)
                       if cfg.lr_decay_every else 1.0)
        loss, grads = loss_and_grads(t_train, params, train_idx, labels, train_mode=True, rng=rng)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}: {loss}")
        step = epoch + 1
        for k, gk in grads.items():
            m[k] = b1 * m[k] + (1 - b1) * gk
            v[k] = b2 * v[k] + (1 - b2) * gk * gk
            mhat = m[k] / (1 - b1 ** step)
            vhat = v[k] / (1 - b2 ** step)
            params.arrays[k] = params.arrays[k] - lr * mhat / (np.sqrt(vhat) + eps)
        mon_loss = data_loss(t_mon, params, monitor, labels)
        if not math.isfinite(mon_loss):
            raise TrainingDivergedError(f"non-finite monitored loss at epoch {epoch}")
        hist.train_loss.append(loss)
        hist.val_loss.append(mon_loss)
        hist.lr.append(lr)
        if mon_loss < best_loss:
            best, best_loss, stale, hist.best_epoch = params.copy(), mon_loss, 0, epoch
        else:
            stale += 1
            if stale > cfg.patience:
                hist.stopped_early = True
                break
    log.info("GAT training: %d epochs, best epoch %d, best monitored loss %.4f",
             len(hist.train_loss), hist.best_epoch, best_loss)
    return best, hist


# --- interpretation --------------------------------------------------------------

FEATURE_GROUPS = {
    "embeddings": EMBEDDING_SLOTS,
    "topographic": TOPO_SLOTS,
    "structural": STRUCTURAL_SLOTS,
}


def attention_feature_importance(params: GatParams) -> dict:
    """L1 norm of each input column of the shared projection, summed over heads
    and grouped by feature type."""
    per_feature = np.abs(params.arrays["W"]).sum(axis=0)
    raw = {g: float(per_feature[s].sum()) for g, s in FEATURE_GROUPS.items()}
    total = sum(raw.values())
    share = {g: (v / total if total > 0 else 0.0) for g, v in raw.items()}
    return {"raw": raw, "share": share, "total": total}


def clone_config(cfg: TrainConfig, **changes) -> TrainConfig:
    d = asdict(cfg)
    d.update(changes)
    return TrainConfig(**d)


__all__ = [
    "TrainConfig", "GatParams", "GraphTensors", "TrainHistory", "init_params", "make_tensors",
    "tensors_from_graph", "forward", "loss_and_grads", "predict_proba", "train",
    "attention_feature_importance", "attention_coefficients", "ConfigurationError",
    "TrainingDivergedError",
]
