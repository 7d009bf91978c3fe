"""SVG figures that carry their own data.

Every figure is written as ``name.svg`` with the plotted table embedded in a
``<metadata>`` element, next to ``name.csv`` holding the same table.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "sard"


def _table_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def save_svg(fig, path, header, rows):
    """Write ``path`` (.svg) with an embedded CSV table and the matching .csv file."""
    path = Path(path)
    table = _table_text(header, rows)
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    svg = buf.getvalue()
    cut = svg.index(">", svg.index("<svg")) + 1
    svg = svg[:cut] + "\n<metadata id=\"data\"><![CDATA[\n" + table + "]]></metadata>" + svg[cut:]
    path.write_text(svg, encoding="utf-8")
    path.with_suffix(".csv").write_text(table, encoding="utf-8")
    return path


def read_svg_table(path):
    """Recover the embedded table as (header, rows of strings)."""
    text = Path(path).read_text(encoding="utf-8")
    start = text.index("<![CDATA[") + len("<![CDATA[")
    rows = list(csv.reader(io.StringIO(text[start:text.index("]]>", start)].strip("\n"))))
    return rows[0], rows[1:]


def roc_points(scores, labels):
    order = np.argsort(-np.asarray(scores), kind="mergesort")
    s, y = np.asarray(scores)[order], np.asarray(labels, dtype=bool)[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tpr = np.r_[0.0, np.cumsum(y)[last] / y.sum()]
    fpr = np.r_[0.0, np.cumsum(~y)[last] / (~y).sum()]
    return fpr, tpr


def plot_roc(curves, labels, path):
    """``curves`` maps model name -> scores."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    rows = []
    for name, scores in curves.items():
        fpr, tpr = roc_points(scores, labels)
        ax.plot(fpr, tpr, label=name)
        rows += [(name, f"{a:.6g}", f"{b:.6g}") for a, b in zip(fpr, tpr)]
    ax.plot([0, 1], [0, 1], ls=":", c="grey")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(fontsize=8)
    return save_svg(fig, path, ("model", "fpr", "tpr"), rows)


def plot_pr(curves, labels, path):
    from .evaluation import _pr_points

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    rows = []
    for name, scores in curves.items():
        _, precision, recall = _pr_points(np.asarray(scores, dtype=float), np.asarray(labels, dtype=bool))
        ax.step(recall, precision, where="post", label=name)
        rows += [(name, f"{r:.6g}", f"{p:.6g}") for r, p in zip(recall, precision)]
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.legend(fontsize=8)
    return save_svg(fig, path, ("model", "recall", "precision"), rows)


def plot_scatter(x, y, path, xlabel="teacher logit", ylabel="model logit"):
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(x, y, s=4, alpha=0.5)
    lo, hi = float(min(np.min(x), np.min(y))), float(max(np.max(x), np.max(y)))
    ax.plot([lo, hi], [lo, hi], ls=":", c="grey")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return save_svg(fig, path, (xlabel.replace(" ", "_"), ylabel.replace(" ", "_")),
                    [(f"{a:.8g}", f"{b:.8g}") for a, b in zip(x, y)])


def plot_lines(rows, x, ys, path, logy=False, xlabel=None, ylabel=None):
    """One line per column in ``ys`` against column ``x`` of dict rows."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = [r[x] for r in rows]
    for col in ys:
        ax.plot(xs, [r[col] for r in rows], marker="o", label=col)
    if logy:
        vals = np.asarray([r[c] for r in rows for c in ys], dtype=float)
        # exact zeros (perfect replication) cannot sit on a log axis
        if np.all(vals > 0):
            ax.set_yscale("log")
        else:
            ax.set_yscale("symlog", linthresh=max(float(vals[vals > 0].min(initial=1e-12)), 1e-12))
    ax.set_xlabel(xlabel or x)
    if ylabel:
        ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    header = [x] + list(ys)
    return save_svg(fig, path, header, [[r[c] for c in header] for r in rows])


def plot_heatmap(matrix, path, title=""):
    matrix = np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(matrix, cmap="viridis", vmin=0.0)
    fig.colorbar(im, ax=ax)
    ax.set_xlabel("attended visit slot")
    ax.set_ylabel("query visit slot")
    if title:
        ax.set_title(title, fontsize=9)
    header = [f"c{j}" for j in range(matrix.shape[1])]
    return save_svg(fig, path, header, [[f"{v:.8g}" for v in row] for row in matrix])
