"""Classification metrics and contagion-graph centrality diagnostics."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.stats import rankdata

log = logging.getLogger(__name__)

THRESHOLD = 0.5
OUTCOMES = ("FN", "FP", "TN", "TP")


class UndefinedMetricError(ValueError):
    pass


class AcyclicGraphError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, iterations, delta, iterate):
        super().__init__(msg)
        self.iterations = iterations
        self.delta = delta
        self.iterate = iterate


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    survived: ClassScores
    damaged: ClassScores
    accuracy: float
    macro_f1: float
    weighted_f1: float
    roc_auc: float | None = None

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(a, b) -> float:
    return a / b if b else 0.0


def _f1(p, r) -> float:
    return 2 * p * r / (p + r) if (p + r) else 0.0


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int, roc_auc=None) -> MetricsReport:
    n = tp + fp + tn + fn
    if n == 0:
        raise UndefinedMetricError("no samples")
    p1, r1 = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    p0, r0 = _ratio(tn, tn + fn), _ratio(tn, tn + fp)
    dmg = ClassScores(p1, r1, _f1(p1, r1), tp + fn)
    srv = ClassScores(p0, r0, _f1(p0, r0), tn + fp)
    return MetricsReport(
        tp=int(tp), fp=int(fp), tn=int(tn), fn=int(fn), survived=srv, damaged=dmg,
        accuracy=(tp + tn) / n, macro_f1=(dmg.f1 + srv.f1) / 2,
        weighted_f1=(dmg.f1 * dmg.support + srv.f1 * srv.support) / n, roc_auc=roc_auc,
    )


def confusion(labels, scores, threshold: float = THRESHOLD):
    y = np.asarray(labels).astype(int)
    pred = np.asarray(scores, dtype=float) >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return tp, fp, tn, fn


def classification_metrics(labels, scores, threshold: float = THRESHOLD,
                           with_auc: bool = True) -> MetricsReport:
    """Damaged (1) is the positive class; predictions are ``scores >= threshold``."""
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=float)
    if y.size == 0:
        raise UndefinedMetricError("empty input")
    if y.shape != s.shape:
        raise ValueError("labels and scores are not aligned")
    auc = None
    if with_auc and 0 < np.sum(y == 1) < len(y):
        auc = roc_auc(y, s)
    return metrics_from_counts(*confusion(y, s, threshold), roc_auc=auc)


def roc_auc(labels, scores) -> float:
    """Mann-Whitney AUC with mid-ranks for ties."""
    y = np.asarray(labels).astype(int)
    s = np.asarray(scores, dtype=float)
    n1 = int(np.sum(y == 1))
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("AUC is undefined with a single class")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


# --- centrality ------------------------------------------------------------

def degree_centrality(graph, node: int | None = None):
    """Mean probability over incoming edges (0 for nodes without in-edges).

    With ``node`` given returns that node's value, otherwise an array for all nodes.
    """
    n = graph.n_nodes
    sums = np.bincount(graph.dst, weights=graph.p_total, minlength=n)
    counts = np.bincount(graph.dst, minlength=n)
    out = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return float(out[node]) if node is not None else out


def weighted_adjacency(graph) -> sp.csr_matrix:
    """A[i, j] = p_total of edge i -> j."""
    n = graph.n_nodes
    return sp.csr_matrix((np.asarray(graph.p_total), (graph.src, graph.dst)), shape=(n, n))


def eigenvector_centrality(graph, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Principal left eigenvector of the weighted adjacency, so a node scores
    highly when it receives edges from high-scoring sources.

    Power iteration on (I + A^T), which shares eigenvectors with A^T and avoids
    oscillation on periodic graphs. L2-normalised, non-negative. Converged once
    the mean absolute per-node change falls below ``tol``.
    """
    if graph.n_edges == 0:
        raise ValueError("eigenvector centrality needs at least one edge")
    A = weighted_adjacency(graph)
    n = graph.n_nodes
    n_scc, _ = connected_components(A, directed=True, connection="strong")
    if n_scc == n:
        # nilpotent adjacency: every eigenvalue is 0 and the iteration on I + A^T
        # only drifts polynomially toward the sinks
        raise AcyclicGraphError("eigenvector centrality is undefined on an acyclic graph")
    AT = A.T.tocsr()
    x = np.full(n, 1.0 / math.sqrt(n))
    delta = math.inf
    for it in range(1, max_iter + 1):
        nxt = x + AT @ x
        nxt /= np.linalg.norm(nxt)
        delta = float(np.abs(nxt - x).sum())
        x = nxt
        if delta < n * tol:
            return x
    raise ConvergenceError(
        f"eigenvector centrality did not converge in {max_iter} iterations "
        f"(last step {delta:.3e}, tol {tol:.1e})", max_iter, delta, x)


@dataclass(frozen=True)
class OutcomeRow:
    outcome: str
    count: int
    degree_mean: float
    degree_sd: float
    eigen_mean: float
    eigen_sd: float


@dataclass(frozen=True)
class CentralityReport:
    rows: tuple

    def row(self, outcome: str) -> OutcomeRow:
        return next(r for r in self.rows if r.outcome == outcome)

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows]}


def outcome_of(label: int, pred: bool) -> str:
    if pred:
        return "TP" if label == 1 else "FP"
    return "FN" if label == 1 else "TN"


def _mean_sd(v):
    if len(v) == 0:
        return math.nan, math.nan
    return float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0


def outcome_centrality_report(graph, node_idx, labels, scores, threshold: float = THRESHOLD,
                              eigen: np.ndarray | None = None) -> CentralityReport:
    """Group the given (test) buildings by confusion outcome and summarise both
    centralities per group."""
    node_idx = np.asarray(node_idx, dtype=np.int64)
    labels = np.asarray(labels).astype(int)
    pred = np.asarray(scores, dtype=float) >= threshold
    deg = degree_centrality(graph)
    if eigen is None:
        try:
            eigen = eigenvector_centrality(graph)
        except AcyclicGraphError as exc:
            log.warning("%s; eigenvector columns left empty", exc)
            eigen = np.full(graph.n_nodes, math.nan)
    eig = eigen
    groups = np.array([outcome_of(l, p) for l, p in zip(labels, pred)])
    rows = []
    for o in OUTCOMES:
        sel = node_idx[groups == o] if len(groups) else node_idx[:0]
        dm, ds = _mean_sd(deg[sel])
        em, es = _mean_sd(eig[sel])
        rows.append(OutcomeRow(o, int(len(sel)), dm, ds, em, es))
    return CentralityReport(tuple(rows))


def format_metrics_table(name: str, m: MetricsReport) -> str:
    lines = [f"{name}", f"{'':12s}{'Survived':>10s}{'Damaged':>10s}"]
    for attr in ("precision", "recall", "f1"):
        lines.append(f"{attr:12s}{getattr(m.survived, attr):10.3f}{getattr(m.damaged, attr):10.3f}")
    lines.append(f"{'accuracy':12s}{m.accuracy:10.4f}")
    lines.append(f"{'macro F1':12s}{m.macro_f1:10.4f}")
    lines.append(f"{'weighted F1':12s}{m.weighted_f1:10.4f}")
    if m.roc_auc is not None:
        lines.append(f"{'AUC':12s}{m.roc_auc:10.4f}")
    lines.append(f"confusion: tp={m.tp} fp={m.fp} tn={m.tn} fn={m.fn}")
    return "\n".join(lines)


def format_centrality_table(r: CentralityReport) -> str:
    lines = [f"{'outcome':10s}{'degree':>18s}{'eigenvector':>26s}{'n':>6s}"]
    for row in r.rows:
        lines.append(f"{row.outcome:10s}{row.degree_mean:9.3f} ({row.degree_sd:6.3f})"
                     f"{row.eigen_mean:13.3e} ({row.eigen_sd:9.2e}){row.count:6d}")
    return "\n".join(lines)
