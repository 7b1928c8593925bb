"""Rendering of experiment results: delimited tables (CSV), Markdown tables
mirroring the benchmark-table layout (rows = sample sizes, columns =
estimators, significance marked), and a matplotlib RMSE figure written
alongside the delimited output.
"""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .harness import ExperimentResult


def _cell(result: ExperimentResult, estimator: str, size: int) -> tuple[str, bool]:
    value = result.rmse_table[estimator][size]
    flagged = estimator == "mrdr" and result.significance.get(size) is True
    return f"{value:.5f}", flagged


def render_csv(result: ExperimentResult) -> str:
    """CSV table; the significance bolding becomes an asterisk suffix."""
    out = io.StringIO()
    out.write("sample_size," + ",".join(result.estimator_ids) + "\n")
    for size in result.sizes:
        cells = []
        for estimator in result.estimator_ids:
            text, flagged = _cell(result, estimator, size)
            cells.append(text + "*" if flagged else text)
        out.write(f"{size}," + ",".join(cells) + "\n")
    return out.getvalue()


def render_markdown(result: ExperimentResult) -> str:
    header = "| sample size | " + " | ".join(result.estimator_ids) + " |"
    rule = "|" + "---|" * (len(result.estimator_ids) + 1)
    lines = [header, rule]
    for size in result.sizes:
        cells = []
        for estimator in result.estimator_ids:
            text, flagged = _cell(result, estimator, size)
            cells.append(f"**{text}**" if flagged else text)
        lines.append(f"| {size} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_figure(result: ExperimentResult, path) -> None:
    """Log-log RMSE vs evaluation sample size, one line per estimator."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for estimator in result.estimator_ids:
        values = [result.rmse_table[estimator][size] for size in result.sizes]
        ax.plot(result.sizes, values, marker="o", label=estimator)
    ax.set_xlabel("evaluation sample size")
    ax.set_ylabel("RMSE")
    ax.set_xscale("log", base=2)
    if all(
        result.rmse_table[e][s] > 0 for e in result.estimator_ids for s in result.sizes
    ):
        ax.set_yscale("log")
    ax.set_title(f"{result.config.get('env') or result.config.get('data_csv')}")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    # A None Date keeps repeated renders byte-identical.
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def write_report(result: ExperimentResult, outdir) -> dict[str, Path]:
    """Write result.json, table.csv, table.md, and rmse.png into outdir."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": outdir / "result.json",
        "csv": outdir / "table.csv",
        "markdown": outdir / "table.md",
        "figure": outdir / "rmse.png",
    }
    paths["json"].write_text(result.to_json())
    paths["csv"].write_text(render_csv(result))
    paths["markdown"].write_text(render_markdown(result))
    render_figure(result, paths["figure"])
    return paths
