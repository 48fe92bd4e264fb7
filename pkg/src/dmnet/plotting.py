"""Report figures written next to the text outputs."""
from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIGSIZE = (6.4, 3.6)
DPI = 120


def read_loss_log(path) -> dict:
    cols = defaultdict(list)
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        it, lr, lp, lf, lt = line.split()
        cols["iter"].append(int(it))
        cols["lr"].append(float(lr))
        cols["l_pixel"].append(float(lp))
        cols["l_fre"].append(float(lf))
        cols["l_total"].append(float(lt))
    return dict(cols)


def plot_loss_curve(log_path, out_path) -> Path:
    cols = read_loss_log(log_path)
    fig, (ax, ax_lr) = plt.subplots(1, 2, figsize=(FIGSIZE[0] * 1.5, FIGSIZE[1]))
    for key, label in (("l_total", "total"), ("l_pixel", "pixel L1"), ("l_fre", "frequency")):
        ax.plot(cols.get("iter", []), cols.get(key, []), label=label)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss (interval mean)")
    ax.legend(frameon=False)
    ax_lr.plot(cols.get("iter", []), cols.get("lr", []), color="k")
    ax_lr.set_xlabel("iteration")
    ax_lr.set_ylabel("learning rate")
    fig.tight_layout()
    return _save(fig, out_path)


def plot_eval_report(report, out_path) -> Path:
    names = [e.image for e in report.entries]
    vals = [e.psnr if math.isfinite(e.psnr) else float("nan") for e in report.entries]
    fig, ax = plt.subplots(figsize=(max(FIGSIZE[0], 0.35 * len(names)), FIGSIZE[1]))
    ax.bar(range(len(names)), vals, color="0.6")
    if math.isfinite(report.mean_psnr):
        ax.axhline(report.mean_psnr, color="C3", lw=1, label=f"mean {report.mean_psnr:.2f} dB")
        ax.legend(frameon=False, loc="lower right")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=90, fontsize=7)
    ax.set_ylabel("Y-PSNR (dB)")
    ax.set_title(f"{report.dataset}  x{report.scale}", fontsize=9)
    fig.tight_layout()
    return _save(fig, out_path)


def plot_layer_params(rows: Sequence, out_path) -> Path:
    """Parameter share per layer kind (the last component of each layer name)."""
    totals = defaultdict(int)
    for row in rows:
        parts = row.name.split(".")
        kind = ".".join(parts[-2:]) if len(parts) > 1 else parts[0]
        totals[kind] += row.params
    kinds = sorted(totals, key=totals.get, reverse=True)
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.barh(range(len(kinds)), [totals[k] / 1e3 for k in kinds], color="0.5")
    ax.set_yticks(range(len(kinds)))
    ax.set_yticklabels(kinds, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("parameters (K)")
    fig.tight_layout()
    return _save(fig, out_path)


def _save(fig, out_path) -> Path:
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return out_path
