"""Static SVG figures with CSV twins.

Plot rendering is deliberately separated from the pipeline math: every figure
is drawn from a CSV written first, so the numbers behind a plot are always
available to diff and the SVGs themselves stay byte-stable (fixed hash salt,
no embedded dates).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "roadgrip"
    return plt


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt
    plt.close(fig)


def _read_csv(path: Path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


_SCENARIO_MARKS = ("o", "s", "^", "d", "v", "P", "*", "X")


def scatter_figure(scatter_rows: list[dict], out_svg: Path, out_csv: Path) -> None:
    """Predicted vs true friction, one marker style per scenario."""
    plt = _plt()
    _write_rows(out_csv, ("run_id", "scenario", "label", "prediction", "residual"),
                [(r["run_id"], r["scenario"], r["label"], r["prediction"],
                  r["residual"]) for r in scatter_rows])
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    scenarios = sorted({r["scenario"] for r in scatter_rows})
    for mark, scenario in zip(_SCENARIO_MARKS, scenarios):
        xs = [float(r["label"]) for r in scatter_rows if r["scenario"] == scenario]
        ys = [float(r["prediction"]) for r in scatter_rows if r["scenario"] == scenario]
        ax.plot(xs, ys, mark, ms=3.5, alpha=0.6, label=scenario)
    lim = (0.1, 0.8)
    ax.plot(lim, lim, "k--", lw=1.0, label="ideal")
    ax.set_xlabel("true friction label")
    ax.set_ylabel("predicted friction")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, out_svg)


def mape_bars_figure(mape_rows: list[dict], out_svg: Path, out_csv: Path) -> None:
    plt = _plt()
    _write_rows(out_csv, ("scenario", "global_mape_pct", "local_mape_pct"),
                [(r["scenario"], r["global_mape_pct"], r["local_mape_pct"])
                 for r in mape_rows])
    named = [r for r in mape_rows if r["scenario"] != "combined"]
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    x = np.arange(len(named))
    width = 0.38
    ax.bar(x - width / 2, [float(r["global_mape_pct"]) for r in named],
           width, label="global")
    ax.bar(x + width / 2, [float(r["local_mape_pct"]) for r in named],
           width, label="local")
    ax.set_xticks(x, [r["scenario"] for r in named], rotation=15, fontsize=8)
    ax.set_ylabel("held-out MAPE [%]")
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    _save(fig, out_svg)


def residual_hist_figure(residuals: np.ndarray, out_svg: Path, out_csv: Path,
                         bins: int = 24) -> None:
    plt = _plt()
    counts, edges = np.histogram(residuals, bins=bins)
    _write_rows(out_csv, ("bin_lo", "bin_hi", "count"),
                [(repr(float(edges[i])), repr(float(edges[i + 1])), int(c))
                 for i, c in enumerate(counts)])
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge",
           edgecolor="white")
    ax.axvline(0.0, color="k", lw=1.0, ls="--")
    ax.set_xlabel("prediction residual")
    ax.set_ylabel("runs")
    ax.grid(axis="y", alpha=0.3)
    _save(fig, out_svg)


def batch_sweep_figure(sweep_rows: list[dict], out_svg: Path, out_csv: Path) -> None:
    plt = _plt()
    _write_rows(out_csv, ("mu", "batch", "median_err_pct"),
                [(r["mu"], r["batch"], r["median_err_pct"]) for r in sweep_rows])
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    levels = sorted({float(r["mu"]) for r in sweep_rows})
    for mu in levels:
        pts = sorted((int(r["batch"]), float(r["median_err_pct"]))
                     for r in sweep_rows if float(r["mu"]) == mu)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-", ms=3.5,
                label=f"mu={mu:g}")
    ax.set_xscale("log")
    ax.set_xlabel("batch size")
    ax.set_ylabel("median midpoint error [%]")
    ax.legend(fontsize=7, ncols=2)
    ax.grid(alpha=0.3, which="both")
    _save(fig, out_svg)


def sfs_curve_figure(path_rows: list[dict], out_svg: Path, out_csv: Path) -> None:
    plt = _plt()
    _write_rows(out_csv, ("step", "feature", "cv_mape_pct"),
                [(r["step"], r["feature"], r["cv_mape_pct"]) for r in path_rows])
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    steps = [int(r["step"]) for r in path_rows]
    scores = [float(r["cv_mape_pct"]) for r in path_rows]
    ax.plot(steps, scores, "o-", ms=4)
    ax.set_xlabel("selected feature count")
    ax.set_ylabel("selection CV MAPE [%]")
    ax.grid(alpha=0.3)
    _save(fig, out_svg)


def extreme_box_figure(result_rows: list[dict], out_svg: Path, out_csv: Path) -> None:
    """Absolute percent error per extreme manoeuvre as box data."""
    plt = _plt()
    by_scenario: dict[str, list[float]] = {}
    twin = []
    for r in result_rows:
        label = float(r["label"])
        err = abs(float(r["prediction"]) - label) / label * 100.0
        by_scenario.setdefault(r["scenario"], []).append(err)
        twin.append((r["run_id"], r["scenario"], repr(err)))
    _write_rows(out_csv, ("run_id", "scenario", "abs_err_pct"), twin)
    names = sorted(by_scenario)
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    ax.boxplot([by_scenario[n] for n in names], tick_labels=names)
    ax.set_ylabel("absolute error [%]")
    ax.grid(axis="y", alpha=0.3)
    _save(fig, out_svg)


def evaluation_figures(eval_dir: Path, cfg) -> None:
    """The three core held-out figures, drawn next to their CSV twins."""
    eval_dir = Path(eval_dir)
    scatter_rows = _read_csv(eval_dir / "scatter.csv")
    scatter_figure(scatter_rows, eval_dir / "fig_scatter.svg",
                   eval_dir / "fig_scatter.csv")
    mape_rows = _read_csv(eval_dir / "mape.csv")
    mape_bars_figure(mape_rows, eval_dir / "fig_mape.svg", eval_dir / "fig_mape.csv")
    residuals = np.array([float(r["residual"]) for r in scatter_rows])
    residual_hist_figure(residuals, eval_dir / "fig_residuals.svg",
                         eval_dir / "fig_residuals.csv")


def cmd_report(cfg, out: Path) -> dict:
    """Gather every available artifact under out/ into report/ figures."""
    out = Path(out)
    report_dir = out / "report"
    eval_dir = out / "eval"
    if not (eval_dir / "scatter.csv").exists():
        from .harness import HarnessError
        raise HarnessError("no evaluation outputs found; run evaluate first")
    report_dir.mkdir(parents=True, exist_ok=True)

    figures: dict[str, dict] = {}

    def made(name: str) -> None:
        figures[name] = {"svg": f"{name}.svg", "csv": f"{name}.csv"}

    scatter_rows = _read_csv(eval_dir / "scatter.csv")
    scatter_figure(scatter_rows, report_dir / "scatter_global.svg",
                   report_dir / "scatter_global.csv")
    made("scatter_global")

    mape_bars_figure(_read_csv(eval_dir / "mape.csv"),
                     report_dir / "mape_by_scenario.svg",
                     report_dir / "mape_by_scenario.csv")
    made("mape_by_scenario")

    residuals = np.array([float(r["residual"]) for r in scatter_rows])
    residual_hist_figure(residuals, report_dir / "residual_hist.svg",
                         report_dir / "residual_hist.csv")
    made("residual_hist")

    skipped = []
    sweep_csv = out / "sweep" / "batch_sweep.csv"
    if sweep_csv.exists():
        batch_sweep_figure(_read_csv(sweep_csv), report_dir / "batch_sweep.svg",
                           report_dir / "batch_sweep.csv")
        made("batch_sweep")
    else:
        skipped.append("batch_sweep")

    sfs_csv = out / "sfs" / "sfs_path.csv"
    if sfs_csv.exists():
        sfs_curve_figure(_read_csv(sfs_csv), report_dir / "sfs_curve.svg",
                         report_dir / "sfs_curve.csv")
        made("sfs_curve")
    else:
        skipped.append("sfs_curve")

    extreme_csv = out / "extreme" / "extreme_results.csv"
    if extreme_csv.exists():
        extreme_box_figure(_read_csv(extreme_csv), report_dir / "extreme_box.svg",
                           report_dir / "extreme_box.csv")
        made("extreme_box")
    else:
        skipped.append("extreme_box")

    headline: dict = {}
    eval_json = eval_dir / "evaluation.json"
    if eval_json.exists():
        payload = json.loads(eval_json.read_text(encoding="utf-8"))
        headline["global_combined_mape"] = payload["global"]["combined_mape"]
        headline["residual_mean"] = payload["residual_mean"]
    for rel, keys in (("sweep/sweep_summary.json",
                       ("monotone_per_level", "worst_median_err_pct_by_batch")),
                      ("sfs/sfs_summary.json", ("cv_scores",)),
                      ("extreme/extreme_summary.json",
                       ("mape", "normal_combined_mape"))):
        path = out / rel
        if path.exists():
            payload = json.loads(path.read_text(encoding="utf-8"))
            for key in keys:
                headline[key] = payload.get(key)

    manifest = {"figures": figures, "skipped": skipped, "headline": headline}
    (report_dir / "report.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
