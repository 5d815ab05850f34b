"""Serialization of run results: deterministic JSON and CSV, plus optional
rendered figures next to them. Nothing here embeds timestamps or host state,
so identical runs produce identical bytes."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

SWEEP_COLUMNS = ("value", "miou", "fwiou", "mvc8", "mvc16")


def _jsonable(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_report_json(path, obj: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(obj, sort_keys=True, indent=2, default=_jsonable)
    path.write_text(text + "\n", encoding="utf-8")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_per_class_csv(path, per_class_iou) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("class_id", "iou"))
        for cls, iou in enumerate(per_class_iou):
            writer.writerow((cls, _cell(iou)))


def write_sweep_csv(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            writer.writerow(tuple(_cell(row[col]) for col in SWEEP_COLUMNS))


# ---------------------------------------------------------------- figures


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_per_class_figure(path, per_class_iou) -> None:
    plt = _pyplot()
    values = [float("nan") if v is None else v for v in per_class_iou]
    fig, ax = plt.subplots(figsize=(max(4, len(values) * 0.25), 3.5))
    ax.bar(range(len(values)), values, color="#4878d0")
    ax.set_xlabel("class id")
    ax.set_ylabel("IoU")
    ax.set_ylim(0.0, 1.0)
    ax.set_title("per-class IoU")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_before_after_figure(path, before: dict, after: dict) -> None:
    """Grouped bars for the headline scores of two metric dicts."""
    plt = _pyplot()
    names, pairs = [], []
    for key in ("miou", "fwiou", "mbiou"):
        if before.get(key) is not None and after.get(key) is not None:
            names.append(key)
            pairs.append((before[key], after[key]))
    for n in sorted(before.get("mvc", {}), key=int):
        b, a = before["mvc"][n], after.get("mvc", {}).get(n)
        if b is not None and a is not None:
            names.append(f"mvc{n}")
            pairs.append((b, a))
    xs = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(4, len(names) * 1.2), 3.5))
    ax.bar(xs - 0.18, [p[0] for p in pairs], width=0.36, label="before",
           color="#d65f5f")
    ax.bar(xs + 0.18, [p[1] for p in pairs], width=0.36, label="after",
           color="#4878d0")
    ax.set_xticks(xs, names)
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    ax.set_title("refinement effect")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_sweep_figure(path, rows, parameter: str) -> None:
    plt = _pyplot()
    xs = range(len(rows))
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for col in SWEEP_COLUMNS[1:]:
        ys = [float("nan") if row[col] is None else row[col] for row in rows]
        ax.plot(xs, ys, marker="o", label=col)
    ax.set_xticks(list(xs), [str(row["value"]) for row in rows])
    ax.set_xlabel(parameter)
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.set_title(f"sweep over {parameter}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
