"""Report rendering: metrics.json, summary.md, and static figures.

metrics.json is the machine-readable artifact: the full report table sorted
by (variant, split, seed), the per-cell seed summary, and any recorded
failures, serialized with sorted keys so regeneration from the same inputs
is byte-identical. summary.md and the PNG figures are derived views: a
grouped accuracy bar chart per split and, when an embedding is supplied, a
2-D scatter of the projected representation colored by class.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .ablation import AblationResults
from .errors import ValidationError
from .metrics import MetricsReport, project2d

METRICS_FORMAT_VERSION = 1


def metrics_document(results: AblationResults) -> dict:
    reports = sorted(results.reports, key=lambda r: (r.variant, r.split, r.seed))
    return {
        "format_version": METRICS_FORMAT_VERSION,
        "reports": [r.to_dict() for r in reports],
        "summary": results.summary(),
        "failures": sorted(results.failures, key=lambda f: (f["variant"], f["seed"])),
    }


def dump_metrics_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_metrics_json(path: str | Path) -> AblationResults:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != METRICS_FORMAT_VERSION:
        raise ValidationError(f"metrics.json format version {version!r} unsupported (expected {METRICS_FORMAT_VERSION})")
    results = AblationResults()
    for row in doc["reports"]:
        results.add(MetricsReport.from_dict(row))
    results.failures = list(doc.get("failures", []))
    return results


def _format_cell(mean: float, std: float) -> str:
    return f"{100.0 * mean:.2f} ± {100.0 * std:.2f}"


def write_summary_md(results: AblationResults, path: Path) -> None:
    summary = results.summary()
    splits = sorted({r.split for r in results.reports})
    lines = ["# Run summary", ""]
    for split in splits:
        lines.append(f"## Split: {split}")
        lines.append("")
        lines.append("| variant | accuracy (%) | macro-F1 (%) | weighted-F1 (%) | seeds |")
        lines.append("|---|---|---|---|---|")
        for variant in sorted(summary):
            cell = summary[variant].get(split)
            if cell is None:
                continue
            lines.append(
                "| {v} | {acc} | {mf} | {wf} | {n} |".format(
                    v=variant,
                    acc=_format_cell(cell["accuracy_mean"], cell["accuracy_std"]),
                    mf=_format_cell(cell["macro_f1_mean"], cell["macro_f1_std"]),
                    wf=_format_cell(cell["weighted_f1_mean"], cell["weighted_f1_std"]),
                    n=cell["n_seeds"],
                )
            )
        lines.append("")
    if results.failures:
        lines.append("## Failures")
        lines.append("")
        for f in sorted(results.failures, key=lambda f: (f["variant"], f["seed"])):
            lines.append(f"- {f['variant']} (seed {f['seed']}): [{f['error_code']}] {f['message']}")
        lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")


def _plot_accuracy_bars(results: AblationResults, path: Path) -> None:
    summary = results.summary()
    variants = sorted(summary)
    splits = sorted({split for cells in summary.values() for split in cells})
    if not variants or not splits:
        return
    width = 0.8 / len(variants)
    fig, ax = plt.subplots(figsize=(max(6.0, 1.8 * len(splits)), 4.0))
    x = np.arange(len(splits), dtype=np.float64)
    for vi, variant in enumerate(variants):
        means = [100.0 * summary[variant].get(s, {}).get("accuracy_mean", np.nan) for s in splits]
        stds = [100.0 * summary[variant].get(s, {}).get("accuracy_std", 0.0) for s in splits]
        ax.bar(x + (vi - (len(variants) - 1) / 2.0) * width, means, width, yerr=stds, capsize=2, label=variant)
    ax.set_xticks(x)
    ax.set_xticklabels(splits)
    ax.set_ylabel("accuracy (%)")
    ax.set_title("Accuracy by split (seed mean ± std)")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_embedding(vectors: np.ndarray, labels: np.ndarray, path: Path) -> None:
    coords, retained = project2d(vectors)
    fig, ax = plt.subplots(figsize=(5.0, 4.5))
    labels = np.asarray(labels)
    for cls in np.unique(labels):
        mask = labels == cls
        ax.scatter(coords[mask, 0], coords[mask, 1], s=8, label=f"class {int(cls)}", alpha=0.7)
    ax.set_title(f"2-D projection (retained variance {retained:.2f})")
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report(
    results: AblationResults,
    out_dir: str | Path,
    embedding: np.ndarray | None = None,
    embedding_labels: np.ndarray | None = None,
) -> list[Path]:
    """Write metrics.json, summary.md, and figures; returns the written paths.

    When an embedding matrix and its labels are given they are projected to
    2-D for the scatter figure and also stored as embedding.npz so the report
    can be regenerated from the directory alone.
    """
    if not results.reports:
        raise ValidationError("render_report needs at least one metrics report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    metrics_path = out / "metrics.json"
    metrics_path.write_text(dump_metrics_json(metrics_document(results)), encoding="utf-8")
    written.append(metrics_path)

    summary_path = out / "summary.md"
    write_summary_md(results, summary_path)
    written.append(summary_path)

    bars_path = out / "accuracy_by_split.png"
    _plot_accuracy_bars(results, bars_path)
    if bars_path.exists():
        written.append(bars_path)

    if embedding is not None:
        if embedding_labels is None:
            raise ValidationError("embedding given without labels")
        npz_path = out / "embedding.npz"
        np.savez(npz_path, vectors=np.asarray(embedding), labels=np.asarray(embedding_labels))
        written.append(npz_path)
        scatter_path = out / "embedding_scatter.png"
        _plot_embedding(np.asarray(embedding), np.asarray(embedding_labels), scatter_path)
        written.append(scatter_path)

    return written


def rerender_report(report_dir: str | Path) -> list[Path]:
    """Regenerate summary.md and figures from an existing report directory."""
    root = Path(report_dir)
    metrics_path = root / "metrics.json"
    if not metrics_path.exists():
        raise ValidationError(f"no metrics.json under {root}")
    results = load_metrics_json(metrics_path)
    embedding = labels = None
    npz_path = root / "embedding.npz"
    if npz_path.exists():
        data = np.load(npz_path)
        embedding, labels = data["vectors"], data["labels"]
    return render_report(results, root, embedding=embedding, embedding_labels=labels)
