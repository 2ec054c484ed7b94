"""Evaluation report rendering: JSON, an aligned text table, and PNG
figures (per-question F1 histogram and training loss curves)."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import EvalReport


def report_table(report: EvalReport, label: str = "run") -> str:
    """Aligned columns: AM, Prec., Recall, F1 (percent, two decimals)."""
    headers = ["", "AM", "Prec.", "Recall", "F1"]
    row = [
        label,
        f"{100.0 * report.am_rate:.2f}",
        f"{100.0 * report.macro_precision:.2f}",
        f"{100.0 * report.macro_recall:.2f}",
        f"{100.0 * report.macro_f1:.2f}",
    ]
    widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip(),
        "  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip(),
    ]
    return "\n".join(lines) + "\n"


def save_figures(
    report: EvalReport,
    out_dir: Path,
    stage1_loss: list[float],
    stage2_loss: list[float] | None = None,
) -> list[Path]:
    paths: list[Path] = []

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist([r.f1 for r in report.results], bins=10, range=(0.0, 1.0), color="#4878a8")
    ax.set_xlabel("per-question F1")
    ax.set_ylabel("questions")
    ax.set_title("F1 distribution")
    fig.tight_layout()
    path = out_dir / "f1_histogram.png"
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    paths.append(path)

    if stage1_loss:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(range(1, len(stage1_loss) + 1), stage1_loss, marker="o", label="stage 1")
        if stage2_loss:
            ax.plot(
                range(1, len(stage2_loss) + 1), stage2_loss, marker="s", label="stage 2"
            )
            ax.legend()
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean loss")
        ax.set_title("training loss")
        fig.tight_layout()
        path = out_dir / "loss_curve.png"
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths


def write_report(
    report: EvalReport,
    out_dir: "str | Path",
    stage1_loss: list[float] | None = None,
    stage2_loss: list[float] | None = None,
    scenario: str = "",
) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    if scenario:
        payload["scenario"] = scenario
    json_path = out_dir / "report.json"
    json_path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    text_path = out_dir / "report.txt"
    text_path.write_text(
        report_table(report, label=scenario or "run"), encoding="utf-8"
    )
    figure_paths = save_figures(report, out_dir, stage1_loss or [], stage2_loss)
    out = {"json": json_path, "text": text_path}
    for fig_path in figure_paths:
        out[fig_path.stem] = fig_path
    return out
