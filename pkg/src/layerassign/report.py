"""Report tables derived from oracle / search artifacts, and their figures.

Every table is a pure function of its inputs (no randomness).  ``write_report``
emits one CSV per table and, next to it, a PNG rendering of the same data.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .oracle import ArchitectureDataset, CompareRow, best_per_depth, distribution_stats  # noqa: E402
from .search import SearchTrace  # noqa: E402

__all__ = [
    "accuracy_vs_depth",
    "distribution_table",
    "topk_table",
    "candidate_table",
    "compare_table",
    "write_csv",
    "write_report",
]

COMPARE_COLUMNS = ["depth", "searched_assignment", "searched_acc", "best_assignment", "best_acc", "gap"]


def accuracy_vs_depth(ds: ArchitectureDataset, trace: SearchTrace | None = None,
                      compare: list[dict] | None = None) -> list[dict]:
    rows = []
    searched = {int(r["depth"]): r for r in compare or []}
    chain = {a.depth: a for a in trace.chain} if trace else {}
    for fam in ds.families():
        for depth, st in distribution_stats(ds, fam).items():
            row = {"family": fam, "depth": depth}
            row.update({k: st[k] for k in ("count", "min", "q1", "median", "q3", "max")})
            row["searched_assignment"] = str(chain[depth]) if depth in chain else ""
            row["searched_acc"] = searched[depth]["searched_acc"] if depth in searched else ""
            rows.append(row)
    return rows


def distribution_table(ds: ArchitectureDataset) -> list[dict]:
    rows = []
    for fam in ds.families():
        for depth in ds.depths(fam):
            ranked = sorted(ds.at_depth(fam, depth), key=lambda r: (-r.val_accuracy, tuple(r.assignment)))
            for rank, r in enumerate(ranked, 1):
                rows.append({"family": fam, "depth": depth, "assignment": str(r.assignment),
                             "val_acc": r.val_accuracy, "rank": rank})
    return rows


def topk_table(ds: ArchitectureDataset, k: int = 4) -> list[dict]:
    rows = []
    for fam in ds.families():
        for depth, recs in best_per_depth(ds, k, fam).items():
            for rank, r in enumerate(recs, 1):
                rows.append({"family": fam, "depth": depth, "rank": rank,
                             "assignment": str(r.assignment), "val_acc": r.val_accuracy})
    return rows


def candidate_table(trace: SearchTrace) -> list[dict]:
    rows = []
    for step in trace.steps:
        for a, acc in step.candidates:
            rows.append({"depth": step.depth, "assignment": str(a), "val_acc": acc,
                         "winner": int(a == step.winner)})
    return rows


def compare_table(rows: list[CompareRow]) -> list[dict]:
    return [{"depth": r.depth, "searched_assignment": str(r.searched_assignment), "searched_acc": r.searched_acc,
             "best_assignment": str(r.best_assignment), "best_acc": r.best_acc, "gap": r.gap} for r in rows]


def write_csv(rows: list[dict], path, columns: list[str] | None = None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- figures ----------------------------------------------------------------

def _figure(width=6.4, height=None):
    height = height or width * 0.62
    fig, ax = plt.subplots(figsize=(width, height))
    ax.grid(alpha=0.3)
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    return fig, ax


def plot_accuracy_vs_depth(rows: list[dict], png) -> None:
    fig, ax = _figure()
    for fam in sorted({r["family"] for r in rows}):
        rs = [r for r in rows if r["family"] == fam]
        d = [r["depth"] for r in rs]
        ax.fill_between(d, [r["min"] for r in rs], [r["max"] for r in rs], alpha=0.2)
        ax.plot(d, [r["max"] for r in rs], "o-", label=f"{fam} best")
        ax.plot(d, [r["median"] for r in rs], "--", label=f"{fam} median")
        ss = [(r["depth"], float(r["searched_acc"])) for r in rs if r["searched_acc"] != ""]
        if ss:
            ax.plot(*zip(*ss), "s", mfc="none", label=f"{fam} searched")
    ax.set_xlabel("depth (layers)")
    ax.set_ylabel("validation accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(png, dpi=120)
    plt.close(fig)


def plot_distribution(rows: list[dict], png) -> None:
    fig, ax = _figure()
    for fam in sorted({r["family"] for r in rows}):
        rs = [r for r in rows if r["family"] == fam]
        ax.scatter([r["depth"] for r in rs], [r["val_acc"] for r in rs], s=10, alpha=0.6, label=fam)
    ax.set_xlabel("depth (layers)")
    ax.set_ylabel("validation accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(png, dpi=120)
    plt.close(fig)


def plot_topk(rows: list[dict], png) -> None:
    fams = sorted({r["family"] for r in rows})
    fig, axes = plt.subplots(len(fams), 1, figsize=(7, 3.2 * len(fams)), squeeze=False)
    for ax, fam in zip(axes[:, 0], fams):
        rs = [r for r in rows if r["family"] == fam]
        for r in rs:
            ax.annotate(r["assignment"], (r["depth"], r["val_acc"]), fontsize=6, ha="center",
                        fontweight="bold" if r["rank"] == 1 else "normal")
        ax.scatter([r["depth"] for r in rs], [r["val_acc"] for r in rs], c=[r["rank"] for r in rs],
                   cmap="viridis_r", s=14)
        ax.set_title(f"top assignments per depth ({fam})", fontsize=9)
        ax.set_xlabel("depth (layers)")
        ax.set_ylabel("validation accuracy")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png, dpi=120)
    plt.close(fig)


def plot_candidates(rows: list[dict], png) -> None:
    fig, ax = _figure(width=max(6.4, 0.35 * len(rows)))
    labels = [f"{r['depth']}:{r['assignment']}" for r in rows]
    colors = ["tab:red" if r["winner"] else "tab:gray" for r in rows]
    ax.bar(range(len(rows)), [r["val_acc"] for r in rows], color=colors)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=90, fontsize=6)
    ax.set_ylabel("one-shot validation accuracy")
    fig.tight_layout()
    fig.savefig(png, dpi=120)
    plt.close(fig)


def write_report(out_dir, ds: ArchitectureDataset | None = None, trace: SearchTrace | None = None,
                 compare: list[dict] | None = None, topk: int = 4, figures: bool = True) -> list[Path]:
    """Write every table the inputs allow (CSV plus PNG); returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, rows, plot):
        path = out / f"{name}.csv"
        write_csv(rows, path)
        written.append(path)
        if figures and rows:
            png = out / f"{name}.png"
            plot(rows, png)
            written.append(png)

    if ds is not None and len(ds):
        emit("accuracy_vs_depth", accuracy_vs_depth(ds, trace, compare), plot_accuracy_vs_depth)
        emit("distribution", distribution_table(ds), plot_distribution)
        emit("topk_chains", topk_table(ds, topk), plot_topk)
    if trace is not None and trace.steps:
        emit("search_candidates", candidate_table(trace), plot_candidates)
    return written
