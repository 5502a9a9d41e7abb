"""Report figures. Rendered off-screen with the Agg backend; PNG metadata is
stripped of the software stamp so identical inputs give identical bytes."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .ensemble import TriageQuadrant  # noqa: E402

DPI = 100
STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
QUADRANT_COLORS = {
    TriageQuadrant.COMPOUND.value: "#b2182b",
    TriageQuadrant.ENVIRONMENTAL.value: "#ef8a62",
    TriageQuadrant.STRUCTURAL.value: "#67a9cf",
    TriageQuadrant.SAFE.value: "#bdbdbd",
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return path


def confusion_matrix(report, path, title: str = "Confusion matrix") -> Path:
    cells = np.array([[report.tn, report.fp], [report.fn, report.tp]])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.2))
        ax.imshow(cells, cmap="Blues", vmin=0)
        hi = cells.max() / 2 if cells.size else 0
        for (r, c), v in np.ndenumerate(cells):
            ax.text(c, r, str(v), ha="center", va="center",
                    color="white" if v > hi else "black")
        ax.set_xticks([0, 1], ["survived", "damaged"])
        ax.set_yticks([0, 1], ["survived", "damaged"])
        ax.set_xlabel("predicted")
        ax.set_ylabel("actual")
        ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def feature_importance(gat_importance: dict, gbdt_gain, feature_names, path,
                       top_k: int = 12) -> Path:
    """Left: GAT projection weight share per feature group. Right: the GBDT's
    largest normalised gains."""
    share = gat_importance["share"]
    gain = np.asarray(gbdt_gain, dtype=float)
    order = np.argsort(-gain, kind="stable")[:top_k][::-1]
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(8.0, 3.4),
                                          gridspec_kw={"width_ratios": [1, 1.6]})
        groups = list(share)
        left.barh(groups, [share[g] for g in groups], color="#4c72b0")
        left.set_xlabel("share of |W|")
        left.set_title("GAT feature groups")
        right.barh([feature_names[i] for i in order], gain[order], color="#dd8452")
        right.set_xlabel("normalised gain")
        right.set_title("GBDT gain")
        fig.tight_layout()
        return _save(fig, path)


def triage_map(rows, path) -> Path:
    """Rows as produced by ``io.triage_rows``: (id, lon, lat, ..., quadrant)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 4.6))
        for quadrant, color in QUADRANT_COLORS.items():
            pts = np.array([(r[1], r[2]) for r in rows if r[-1] == quadrant]).reshape(-1, 2)
            ax.scatter(pts[:, 0], pts[:, 1], s=14, c=color, label=f"{quadrant} ({len(pts)})",
                       edgecolors="none")
        ax.set_xlabel("longitude")
        ax.set_ylabel("latitude")
        ax.ticklabel_format(useOffset=False)
        ax.set_title("Mitigation triage (test buildings)")
        ax.legend(loc="best", frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def training_history(gat_history, gbdt_history, path) -> Path:
    with plt.rc_context(STYLE):
        fig, (left, right) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        epochs = np.arange(1, len(gat_history.train_loss) + 1)
        left.plot(epochs, gat_history.train_loss, label="train")
        left.plot(epochs, gat_history.val_loss, label="validation")
        if gat_history.best_epoch >= 0:
            left.axvline(gat_history.best_epoch + 1, color="0.5", ls=":", lw=1)
        left.set_xlabel("epoch")
        left.set_ylabel("BCE")
        left.set_title("GAT")
        left.legend(frameon=False)
        right.plot(np.arange(len(gbdt_history)), gbdt_history, color="#dd8452")
        right.set_xlabel("boosting round")
        right.set_ylabel("train log-loss")
        right.set_title("GBDT")
        fig.tight_layout()
        return _save(fig, path)
