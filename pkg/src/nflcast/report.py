"""Delimited report tables and figures for backtest runs.

Every table starts with ``#`` comment lines carrying a fingerprint of the run
configuration, so identical inputs and flags give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

from .harness import TASKS, BacktestRow, SelectionResult, profitability

TABLE_FILE = "accuracy.csv"
WEEKLY_FILE = "weekly.csv"
TRAJECTORY_FILE = "trajectory.csv"


def fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _header(fh, name, config):
    fh.write(f"# nflcast {name}\n")
    fh.write(f"# fingerprint: {fingerprint(config)}\n")
    fh.write(f"# config: {json.dumps(config, sort_keys=True, default=str)}\n")


def _fmt(x):
    return "" if x is None or x != x else f"{x:.6f}"


def write_table(path, header, rows, name, config):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _header(fh, name, config)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def accuracy_table(rows: list[BacktestRow]):
    """Feature sets down, tasks across (accuracy, games, expected units)."""
    tasks = [t for t in TASKS if any(r.task == t for r in rows)]
    by = {(r.feature_set, r.task): r for r in rows}
    sets = list(dict.fromkeys(r.feature_set for r in rows))
    header = ["feature_set"]
    for t in tasks:
        header += [f"{t}_accuracy", f"{t}_games", f"{t}_units"]
    out = []
    for s in sets:
        line = [s]
        for t in tasks:
            r = by.get((s, t))
            if r is None or not r.n_games:
                line += ["", "", ""]
                continue
            units = profitability(r.accuracy, r.n_games).units
            line += [_fmt(r.accuracy), r.n_games, f"{units:.2f}"]
        out.append(line)
    return header, out


def weekly_table(rows: list[BacktestRow]):
    header = ["feature_set", "task", "week", "n_correct", "n_games", "n_push", "accuracy",
              "penalty", "lambda", "dev_accuracy"]
    out = [[r.feature_set, r.task, f.week, f.n_correct, f.n_games, f.n_push, _fmt(f.accuracy),
            f.penalty, f"{f.lam:g}", _fmt(f.dev_accuracy)]
           for r in rows for f in r.folds]
    return header, out


def trajectory_table(results: list[SelectionResult]):
    header = ["task", "window", "week", "chosen", "n_correct", "n_games", "accuracy", "changed",
              "hindsight_best", "hindsight_accuracy"]
    out = []
    for res in results:
        for s in res.steps:
            out.append([res.task, res.window, s.week, s.chosen, s.n_correct, s.n_games,
                        _fmt(s.accuracy), int(s.changed), res.hindsight_best,
                        _fmt(res.hindsight_weekly.get(s.week))])
    return header, out


def write_report(out_dir, rows, selections=(), config=None, figures=True) -> list[Path]:
    """Write the three tables (trajectory only with selections) and optional PNGs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = config or {}
    written = []
    for name, fn, data in ((TABLE_FILE, accuracy_table, rows), (WEEKLY_FILE, weekly_table, rows),
                           (TRAJECTORY_FILE, trajectory_table, list(selections))):
        if name == TRAJECTORY_FILE and not data:
            continue
        header, body = fn(data)
        write_table(out / name, header, body, name.split(".")[0], config)
        written.append(out / name)
    if figures:
        written += render_figures(out)
    return written


def read_table(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# -- figures ------------------------------------------------------------------


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams.update({"font.size": 9, "axes.spines.top": False,
                         "axes.spines.right": False, "svg.hashsalt": "nflcast"})
    return plt


def render_figures(out_dir) -> list[Path]:
    """PNG figures from the tables already in ``out_dir``."""
    out = Path(out_dir)
    made = []
    if (out / TABLE_FILE).exists():
        made += plot_accuracies(read_table(out / TABLE_FILE), out / "accuracy.png")
    if (out / TRAJECTORY_FILE).exists():
        made += plot_trajectories(read_table(out / TRAJECTORY_FILE), out)
    return made


def plot_accuracies(rows, path, top=20):
    plt = _pyplot()
    tasks = [t for t in TASKS if rows and f"{t}_accuracy" in rows[0]]
    if not tasks:
        return []
    fig, axes = plt.subplots(1, len(tasks), figsize=(4.2 * len(tasks), 0.28 * min(top, len(rows))
                                                     + 1.4), squeeze=False)
    for ax, t in zip(axes[0], tasks):
        vals = [(r["feature_set"], float(r[f"{t}_accuracy"])) for r in rows
                if r[f"{t}_accuracy"]]
        vals = sorted(vals, key=lambda kv: (-kv[1], kv[0]))[:top][::-1]
        ax.barh(range(len(vals)), [v for _, v in vals], color="0.55")
        ax.set_yticks(range(len(vals)), [n for n, _ in vals], fontsize=7)
        ax.axvline(11 / 21, color="firebrick", lw=0.8, ls="--", label="breakeven")
        ax.set_xlim(0.3, 1.0)
        ax.set_title(t)
        ax.set_xlabel("accuracy")
    axes[0][0].legend(loc="lower right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return [Path(path)]


def plot_trajectories(rows, out_dir):
    """Weekly accuracy of each selection run against the best set in hindsight."""
    plt = _pyplot()
    made = []
    runs = {}
    for r in rows:
        runs.setdefault((r["task"], r["window"]), []).append(r)
    for (task, window), steps in sorted(runs.items()):
        weeks = [int(s["week"]) for s in steps]
        fig, ax = plt.subplots(figsize=(6.4, 3.2))
        ax.plot(weeks, [float(s["accuracy"] or "nan") for s in steps], "o-", color="k",
                label=f"selected ({window})")
        ax.plot(weeks, [float(s["hindsight_accuracy"] or "nan") for s in steps], "s--",
                color="0.5", label=f"hindsight: {steps[0]['hindsight_best']}")
        for s, wk in zip(steps, weeks):
            if s["changed"] == "1" or wk == weeks[0]:
                ax.annotate(s["chosen"], (wk, float(s["accuracy"] or 0)), fontsize=6,
                            rotation=45, xytext=(2, 4), textcoords="offset points")
        ax.set_xlabel("week")
        ax.set_ylabel("accuracy")
        ax.set_ylim(-0.05, 1.15)
        ax.set_title(f"{task}: weekly accuracy")
        ax.legend(fontsize=7, loc="lower left")
        fig.tight_layout()
        path = Path(out_dir) / f"trajectory_{task}_{window}.png"
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
        made.append(path)
    return made
