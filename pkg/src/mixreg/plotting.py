"""
Optional figures for the experiment report.

matplotlib is imported on first use, with the non-interactive Agg backend,
so the rest of the package never needs it.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

from .core import InvalidInputError


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:
        raise InvalidInputError(
            "plotting needs matplotlib; install the 'plot' extra (pip install mixreg[plot])"
        ) from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no timestamp or version metadata, so identical data gives identical bytes
    fig.savefig(path, dpi=100, metadata={"Software": None})
    return path


def slope_graph(diag, path, title: str = "") -> Path:
    """Maximal log-likelihood per dimension with the robust line fitted on the largest dimensions."""
    plt = _pyplot()
    pts = diag.points
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(pts[~diag.fit_mask, 0], pts[~diag.fit_mask, 1], "o", color="0.6", label="dimensions")
    ax.plot(pts[diag.fit_mask, 0], pts[diag.fit_mask, 1], "o", color="C0", label="used in fit")
    xs = pts[diag.fit_mask, 0]
    ax.plot(xs, diag.intercept + diag.kappa * xs, "-", color="C3",
            label=f"slope {diag.kappa:.3g}")
    ax.set_xlabel("D / n")
    ax.set_ylabel("max log-likelihood / n")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    out = _save(fig, path)
    plt.close(fig)
    return out


def metric_boxplot(rows: list[dict], metric: str, path, by: str = "procedure") -> Path:
    """Boxplot of ``metric`` grouped by the ``by`` column; rows lacking the metric are skipped."""
    plt = _pyplot()
    groups = defaultdict(list)
    for r in rows:
        v = r.get(metric)
        if v is not None and v != "":
            groups[str(r[by])].append(float(v))
    if not groups:
        raise InvalidInputError(f"no values for metric {metric!r}")
    names = sorted(groups)
    fig, ax = plt.subplots(figsize=(1.5 + 1.2 * len(names), 4))
    ax.boxplot([groups[k] for k in names])
    ax.set_xticks(range(1, len(names) + 1), names)
    ax.set_ylabel(metric)
    fig.tight_layout()
    out = _save(fig, path)
    plt.close(fig)
    return out
