"""Logistic stacking of the two specialists and four-way mitigation triage."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class TriageQuadrant(str, enum.Enum):
    ENVIRONMENTAL = "EnvironmentalRisk"
    STRUCTURAL = "StructuralRisk"
    COMPOUND = "CompoundRisk"
    SAFE = "Safe"


@dataclass(frozen=True)
class StackerCoefficients:
    beta0: float
    beta_gnn: float
    beta_xgb: float
    iterations: int = 0
    converged: bool = True
    separated: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.beta0, self.beta_gnn, self.beta_xgb])

    def to_dict(self) -> dict:
        return {"beta0": self.beta0, "beta_gnn": self.beta_gnn, "beta_xgb": self.beta_xgb,
                "iterations": self.iterations, "converged": self.converged,
                "separated": self.separated}

    @classmethod
    def from_dict(cls, d) -> "StackerCoefficients":
        return cls(float(d["beta0"]), float(d["beta_gnn"]), float(d["beta_xgb"]),
                   int(d.get("iterations", 0)), bool(d.get("converged", True)),
                   bool(d.get("separated", False)))


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logistic_newton(A: np.ndarray, y: np.ndarray, tol: float = 1e-8, max_iter: int = 100):
    """Unregularised maximum-likelihood logistic regression by Newton's method.

    Returns (beta, iterations, converged).
    """
    beta = np.zeros(A.shape[1])
    for it in range(1, max_iter + 1):
        p = _sigmoid(A @ beta)
        grad = A.T @ (p - y)
        if np.linalg.norm(grad) <= tol:
            return beta, it - 1, True
        w = p * (1 - p)
        hess = A.T @ (A * w[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        # halve until the log-likelihood does not get worse
        base = _nll(A, y, beta)
        t = 1.0
        while t > 1e-10 and _nll(A, y, beta - t * step) > base + 1e-12:
            t *= 0.5
        beta = beta - t * step
    p = _sigmoid(A @ beta)
    return beta, max_iter, bool(np.linalg.norm(A.T @ (p - y)) <= tol)


def _nll(A, y, beta):
    z = A @ beta
    return float(np.sum(np.logaddexp(0.0, z) - y * z))


def fit_stacker(p_gnn, p_xgb, labels, tol: float = 1e-8, max_iter: int = 100) -> StackerCoefficients:
    """Fit logit(P) = b0 + b_gnn * p_gnn + b_xgb * p_xgb on raw probabilities."""
    p_gnn = np.asarray(p_gnn, dtype=float)
    p_xgb = np.asarray(p_xgb, dtype=float)
    y = np.asarray(labels, dtype=float)
    if not (len(p_gnn) == len(p_xgb) == len(y)):
        raise ValueError("inputs must have equal lengths")
    if len(y) < 10:
        raise ValueError("need at least 10 rows to fit the stacker")
    if y.min() == y.max():
        raise ValueError("both classes must be present")
    if np.any((p_gnn < 0) | (p_gnn > 1) | (p_xgb < 0) | (p_xgb > 1)):
        raise ValueError("inputs must be probabilities")
    A = np.column_stack([np.ones(len(y)), p_gnn, p_xgb])
    beta, iters, converged = logistic_newton(A, y, tol, max_iter)
    z = A @ beta
    # a fit that classifies every row strictly correctly means the MLE is at infinity;
    # Newton then stops only because the sigmoid saturates
    separated = bool(np.all(np.where(y == 1, z > 0, z < 0)))
    if separated:
        log.warning("stacker inputs perfectly separate the labels; coefficients are "
                    "the capped-iteration result")
    elif not converged:
        log.warning("stacker did not converge in %d iterations", iters)
    return StackerCoefficients(float(beta[0]), float(beta[1]), float(beta[2]), iters,
                               converged, separated)


def stack_predict(coeffs: StackerCoefficients, p_gnn, p_xgb):
    z = coeffs.beta0 + coeffs.beta_gnn * np.asarray(p_gnn, dtype=float) \
        + coeffs.beta_xgb * np.asarray(p_xgb, dtype=float)
    out = _sigmoid(z)
    return float(out) if np.ndim(out) == 0 else out


def stacker_log_loss(coeffs: StackerCoefficients, p_gnn, p_xgb, labels) -> float:
    z = coeffs.beta0 + coeffs.beta_gnn * np.asarray(p_gnn, dtype=float) \
        + coeffs.beta_xgb * np.asarray(p_xgb, dtype=float)
    y = np.asarray(labels, dtype=float)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def triage(p_gnn: float, p_xgb: float, threshold: float = 0.5) -> TriageQuadrant:
    env = p_gnn >= threshold
    struct = p_xgb >= threshold
    if env and struct:
        return TriageQuadrant.COMPOUND
    if env:
        return TriageQuadrant.ENVIRONMENTAL
    if struct:
        return TriageQuadrant.STRUCTURAL
    return TriageQuadrant.SAFE


def triage_all(p_gnn, p_xgb, threshold: float = 0.5) -> list:
    return [triage(float(a), float(b), threshold) for a, b in zip(p_gnn, p_xgb)]


def quadrant_counts(quadrants) -> dict:
    counts = {q.value: 0 for q in TriageQuadrant}
    for q in quadrants:
        counts[TriageQuadrant(q).value] += 1
    return counts
