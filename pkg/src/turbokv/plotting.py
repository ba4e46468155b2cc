"""SVG figures from the result CSVs: throughput vs skew, vs write ratio, latency CDFs.

Only CSVs are read, so plots can be regenerated without rerunning anything.
The SVG hash salt and metadata are pinned so identical CSVs give identical files.
"""

from __future__ import annotations

import csv
import re
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

MODE_ORDER = ("InSwitch", "ServerDriven", "ClientDrivenIdeal")
MODE_STYLE = {"InSwitch": ("#1b6ca8", "o"), "ServerDriven": ("#c0392b", "s"),
              "ClientDrivenIdeal": ("#7f8c8d", "^")}

RC = {
    "svg.hashsalt": "turbokv",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "figure.figsize": (5.0, 3.2),
}


def _read(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _modes(present) -> list[str]:
    return [m for m in MODE_ORDER if m in present] + sorted(set(present) - set(MODE_ORDER))


def _mean_throughput(rows) -> dict:
    acc = defaultdict(list)
    for r in rows:
        acc[r["key"], r["mode"]].append(float(r["throughput_ops_per_s"]))
    return {k: sum(v) / len(v) for k, v in acc.items()}


def _bars(ax, xs: list, series: dict, modes: list[str], fmt) -> None:
    width = 0.8 / max(1, len(modes))
    for j, mode in enumerate(modes):
        color, _ = MODE_STYLE.get(mode, ("#333333", "o"))
        vals = [series.get((x, mode), 0.0) for x in xs]
        ax.bar([i + (j - (len(modes) - 1) / 2) * width for i in range(len(xs))], vals, width,
               label=mode, color=color)
    ax.set_xticks(range(len(xs)))
    ax.set_xticklabels([fmt(x) for x in xs])
    ax.set_ylabel("throughput (ops/s)")
    ax.legend(fontsize=7)


def throughput_vs_skew(results: list[dict], path: Path) -> Path | None:
    rows = [dict(r, key=(r["distribution"], float(r["theta"]))) for r in results
            if float(r["write_ratio"]) == 0 and r["workload"].endswith("r0")]
    if not rows:
        return None
    series = _mean_throughput(rows)
    xs = sorted({r["key"] for r in rows}, key=lambda k: (k[0] != "uniform", k[1]))
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        _bars(ax, xs, series, _modes({r["mode"] for r in rows}),
              lambda k: "uniform" if k[0] == "uniform" else f"zipf-{k[1]:g}")
        ax.set_xlabel("workload skew (read-only)")
        return _save(fig, path)


def throughput_vs_write_ratio(results: list[dict], path: Path) -> Path | None:
    dists = sorted({(r["distribution"], r["theta"]) for r in results})
    ratios = {float(r["write_ratio"]) for r in results}
    if len(ratios) < 2:
        return None
    dist = ("uniform", "0") if ("uniform", "0") in dists else dists[0]
    rows = [dict(r, key=float(r["write_ratio"])) for r in results
            if (r["distribution"], r["theta"]) == dist]
    series = _mean_throughput(rows)
    xs = sorted({r["key"] for r in rows})
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        _bars(ax, xs, series, _modes({r["mode"] for r in rows}), lambda w: f"{w:g}")
        ax.set_xlabel("write ratio")
        return _save(fig, path)


def latency_cdfs(cdf_rows: list[dict], out: Path) -> list[Path]:
    by_workload = defaultdict(list)
    for r in cdf_rows:
        by_workload[r["workload"]].append(r)
    paths = []
    for wl, rows in sorted(by_workload.items()):
        ops = sorted({r["op"] for r in rows}, key=lambda o: ("get", "put", "del", "range").index(o))
        with plt.rc_context(RC):
            fig, axes = plt.subplots(1, len(ops), figsize=(2.6 * len(ops) + 0.6, 2.8), squeeze=False)
            for ax, op in zip(axes[0], ops):
                for mode in _modes({r["mode"] for r in rows if r["op"] == op}):
                    pts = sorted((float(r["latency_us"]), int(r["percentile"])) for r in rows
                                 if r["op"] == op and r["mode"] == mode)
                    color, marker = MODE_STYLE.get(mode, ("#333333", "o"))
                    ax.plot([p[0] for p in pts], [p[1] / 100 for p in pts], color=color,
                            marker=marker, markevery=20, markersize=3, lw=1.2, label=mode)
                ax.set_title(op.upper())
                ax.set_xlabel("latency (us)")
                ax.set_ylim(0, 1.02)
            axes[0][0].set_ylabel("CDF")
            axes[0][0].legend(fontsize=7)
            slug = re.sub(r"[^A-Za-z0-9.]+", "_", wl).strip("_")
            paths.append(_save(fig, out / f"cdf_{slug}.svg"))
    return paths


def plot_results(in_dir: str | Path) -> tuple[list[Path], list[str]]:
    """Render every figure whose input exists; returns (written files, problems)."""
    in_dir = Path(in_dir)
    out = in_dir / "figures"
    out.mkdir(parents=True, exist_ok=True)
    written, problems = [], []
    results_csv = in_dir / "results.csv"
    if results_csv.exists():
        results = _read(results_csv)
        for name, fn in (("throughput_vs_skew.svg", throughput_vs_skew),
                         ("throughput_vs_write_ratio.svg", throughput_vs_write_ratio)):
            p = fn(results, out / name)
            if p is None:
                problems.append(f"{name}: no matching cells in results.csv")
            else:
                written.append(p)
    else:
        problems.append("throughput figures: results.csv missing")
    cdf = in_dir / "cdf.csv"
    if cdf.exists():
        written += latency_cdfs(_read(cdf), out)
    else:
        problems.append("latency CDFs: cdf.csv missing")
    return written, problems
