"""Summary tables and dependency-free SVG plots for a run directory."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .errors import MissingArtifact

_COLORS = {"gt": "#222222", "raw": "#d62728", "fused": "#1f77b4"}
_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_csv_rows(path, rows: list[dict], fieldnames: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# --- SVG ---------------------------------------------------------------------------


class _Canvas:
    def __init__(self, xs, ys, width=640, height=480, margin=50, equal=False):
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        self.w, self.h, self.m = width, height, margin
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
        if x1 == x0:
            x0, x1 = x0 - 1, x1 + 1
        if y1 == y0:
            y0, y1 = y0 - 1, y1 + 1
        sx = (width - 2 * margin) / (x1 - x0)
        sy = (height - 2 * margin) / (y1 - y0)
        if equal:
            sx = sy = min(sx, sy)
        self.x0, self.y0, self.sx, self.sy = x0, y0, sx, sy
        self.bounds = (x0, x1, y0, y1)
        self.parts: list[str] = []

    def pt(self, x, y) -> str:
        px = self.m + (x - self.x0) * self.sx
        py = self.h - self.m - (y - self.y0) * self.sy
        return f"{px:.2f},{py:.2f}"

    def polyline(self, xs, ys, color, width=1.5):
        pts = " ".join(self.pt(x, y) for x, y in zip(xs, ys))
        self.parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>')

    def text(self, x, y, s, size=12, anchor="start"):
        self.parts.append(f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" text-anchor="{anchor}" '
                          f'font-family="sans-serif">{s}</text>')

    def legend(self, entries):
        for i, (name, color) in enumerate(entries):
            y = self.m / 2 + 14 * i
            self.parts.append(f'<line x1="{self.w - 150}" y1="{y - 4}" x2="{self.w - 130}" y2="{y - 4}" '
                              f'stroke="{color}" stroke-width="2"/>')
            self.text(self.w - 125, y, name)

    def render(self, title, xlabel, ylabel) -> str:
        x0, x1, y0, y1 = self.bounds
        m = self.m
        axes = (f'<rect x="{m}" y="{m}" width="{self.w - 2 * m}" height="{self.h - 2 * m}" '
                f'fill="none" stroke="#999999"/>')
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">')
        labels = [
            f'<text x="{self.w / 2:.1f}" y="20" font-size="14" text-anchor="middle" font-family="sans-serif">{title}</text>',
            f'<text x="{self.w / 2:.1f}" y="{self.h - 10}" font-size="12" text-anchor="middle" font-family="sans-serif">'
            f'{xlabel} [{x0:.3g}, {x1:.3g}]</text>',
            f'<text x="14" y="{self.h / 2:.1f}" font-size="12" text-anchor="middle" font-family="sans-serif" '
            f'transform="rotate(-90 14 {self.h / 2:.1f})">{ylabel} [{y0:.3g}, {y1:.3g}]</text>',
        ]
        return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', axes] + labels + self.parts + ["</svg>\n"])


def trajectory_svg(trajectories: dict[str, np.ndarray], title="Trajectories (top view)") -> str:
    allxy = np.vstack([t[:, :2] for t in trajectories.values()])
    c = _Canvas(allxy[:, 0], allxy[:, 1], equal=True)
    entries = []
    for i, (name, t) in enumerate(trajectories.items()):
        color = _COLORS.get(name, _PALETTE[i % len(_PALETTE)])
        c.polyline(t[:, 0], t[:, 1], color)
        entries.append((name, color))
    c.legend(entries)
    return c.render(title, "x [m]", "y [m]")


def loss_svg(curves: dict[str, list[float]], title="Training loss") -> str:
    """Loss against epoch on a log10 axis."""
    ys = {k: np.log10(np.maximum(np.asarray(v, dtype=np.float64), 1e-12)) for k, v in curves.items()}
    allx = np.concatenate([np.arange(len(v)) for v in ys.values()])
    ally = np.concatenate(list(ys.values()))
    c = _Canvas(allx, ally)
    entries = []
    for i, (name, y) in enumerate(ys.items()):
        color = _PALETTE[i % len(_PALETTE)]
        c.polyline(np.arange(len(y)), y, color)
        entries.append((name, color))
    c.legend(entries)
    return c.render(title, "epoch", "log10 mean L1 loss [m]")


# --- run summary ---------------------------------------------------------------


SUMMARY_FIELDS = ["stage", "metric", "value", "config_hash"]


def _kv_rows(path) -> list[dict]:
    return read_csv_rows(path) if Path(path).exists() else []


def build_report(run_dir) -> tuple[list[dict], dict[str, str]]:
    """Collect stage summaries into one table plus SVG documents keyed by file name.

    Raises MissingArtifact when no stage summary exists at all.
    """
    run = Path(run_dir)
    sources = {
        "train-classifier": run / "classifier" / "summary.csv",
        "train-scr": run / "scr" / "summary.csv",
        "localize": run / "localize" / "summary.csv",
        "fuse": run / "fuse" / "summary.csv",
    }
    rows = []
    for stage, path in sources.items():
        for r in _kv_rows(path):
            rows.append({"stage": stage, "metric": r["metric"], "value": r["value"], "config_hash": r["config_hash"]})
    if not rows:
        raise MissingArtifact(f"no stage summaries under {run}")
    plots = {}
    fuse = run / "fuse"
    if all((fuse / f"{k}.csv").exists() for k in ("gt", "raw", "fused")):
        plots["trajectories.svg"] = trajectory_svg({k: _read_traj(fuse / f"{k}.csv") for k in ("gt", "raw", "fused")})
    hist = run / "scr" / "loss_history.csv"
    if hist.exists():
        plots["loss.svg"] = loss_svg({"train-scr": [float(r["mean_loss"]) for r in read_csv_rows(hist)]})
    return rows, plots


def _read_traj(path) -> np.ndarray:
    return np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in read_csv_rows(path)])


def markdown_table(rows: list[dict]) -> str:
    lines = ["| stage | metric | value | config |", "|---|---|---|---|"]
    for r in rows:
        v = r["value"]
        try:
            f = float(v)
            v = f"{f:.6g}" if math.isfinite(f) and not float(f).is_integer() else v
        except ValueError:
            pass
        lines.append(f"| {r['stage']} | {r['metric']} | {v} | {r['config_hash']} |")
    return "\n".join(lines) + "\n"
