"""Test-set evaluation: mIoU per rate, CSV and SVG reports."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from vxc.autodiff.tensor import Tensor, no_grad
from vxc.codec import format_ratio, to_internal
from vxc.exceptions import ConfigurationError
from vxc.joint import JointModel
from vxc.recon3d import IOU_THRESHOLD, batch_iou, significance_bins

REPORT_COLUMNS = ("rate_param", "rate", "rate_value", "mIoU", "std", "n")


def predict_occupancy(model: JointModel, views01: np.ndarray, n_iter: Optional[int] = None,
                      batch_size: int = 8, threads: int = 1) -> np.ndarray:
    """Inference-mode occupancy probabilities (n, D, D, D) for (n, V, H, W, 3) views."""
    views01 = np.asarray(views01)
    starts = list(range(0, len(views01), batch_size))

    def run(s):
        x = Tensor(to_internal(views01[s:s + batch_size], model.dtype))
        with no_grad():
            return model(x, n_iter=n_iter, train=False).p.data

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    return np.concatenate(parts)


def rate_settings(model: JointModel, rates: Optional[Sequence[int]]) -> list:
    """Validate requested rate parameters: N for codec models, K for the implicit model."""
    if model.kind == "implicit":
        rates = [model.K] if rates is None else list(rates)
        bad = [k for k in rates if k != model.K]
        if bad:
            raise ConfigurationError(f"implicit checkpoint has K={model.K}; K={bad} needs its own trained model")
        return rates
    n_max = model.cfg.codec.n_iter_max
    rates = list(range(1, n_max + 1)) if rates is None else list(rates)
    bad = [n for n in rates if not 1 <= n <= n_max]
    if bad:
        raise ConfigurationError(f"N={bad} unachievable: model supports 1..{n_max} iterations")
    return rates


@dataclass
class RateResult:
    rate_param: int
    rate: Fraction
    miou: float
    std: float
    ious: np.ndarray

    def row(self) -> list:
        return [self.rate_param, format_ratio(self.rate), f"{float(self.rate):.6g}", f"{self.miou:.6f}",
                f"{self.std:.6f}", len(self.ious)]


def evaluate(model: JointModel, views01: np.ndarray, grids: np.ndarray, rates: Optional[Sequence[int]] = None,
             n_views: int = 5, batch_size: int = 8, threads: int = 1, tau: float = IOU_THRESHOLD) -> list[RateResult]:
    """Mean and standard deviation of IoU over the examples at each rate, using the first ``n_views`` views."""
    views01 = np.asarray(views01)[:, :n_views]
    results = []
    for r in rate_settings(model, rates):
        n_iter = None if model.kind == "implicit" else r
        p = predict_occupancy(model, views01, n_iter, batch_size, threads)
        ious = batch_iou(p, grids, tau)
        rate = model.rate() if model.kind == "implicit" else model.rate(r)
        results.append(RateResult(r, rate, float(ious.mean()), float(ious.std()), ious))
    return results


def write_report_csv(path, results: Sequence[RateResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in results:
            w.writerow(r.row())


def write_examples_csv(path, ids: Sequence[str], results: Sequence[RateResult]) -> None:
    """Per-example IoU rows for every rate, each rate followed by mean and std summary rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("example_id", "rate_param", "iou"))
        for r in results:
            if len(ids) != len(r.ious):
                raise ValueError(f"{len(ids)} ids for {len(r.ious)} IoU values")
            for ex, v in zip(ids, r.ious):
                w.writerow((ex, r.rate_param, f"{v:.6f}"))
            w.writerow(("mean", r.rate_param, f"{r.miou:.6f}"))
            w.writerow(("std", r.rate_param, f"{r.std:.6f}"))


def write_bins_csv(path, ious) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("bin", "count", "mean", "std", "lo", "hi"))
        for i, b in enumerate(significance_bins(ious)):
            w.writerow((i, b.count, f"{b.mean:.6f}", f"{b.std:.6f}", f"{b.lo:.6f}", f"{b.hi:.6f}"))


def svg_line_chart(series: dict, title: str = "mIoU vs compression rate", width: int = 480,
                   height: int = 320) -> str:
    """Minimal SVG line chart; ``series`` maps a label to (x, y) point lists.  x uses a log scale."""
    pad = 48
    pts = [p for s in series.values() for p in s]
    if not pts:
        raise ValueError("nothing to plot")
    xs = np.log10([max(p[0], 1e-12) for p in pts])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5

    def sx(x):
        return pad + (np.log10(x) - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def sy(y):
        return height - pad - y * (height - 2 * pad)

    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">rate (log scale)</text>',
           f'<text x="14" y="{height / 2}" font-size="12" transform="rotate(-90 14 {height / 2})">mIoU</text>']
    for tick in (0.0, 0.5, 1.0):
        out.append(f'<text x="{pad - 6}" y="{sy(tick) + 4:.1f}" text-anchor="end" font-size="10">{tick:g}</text>')
    for i, (label, s) in enumerate(series.items()):
        c = colors[i % len(colors)]
        s = sorted(s)
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in s)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{c}" stroke-width="2"/>')
        for x, y in s:
            out.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{c}"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * i}" text-anchor="end" font-size="11" fill="{c}">'
                   f'{label}</text>')
    out.append("</svg>")
    return "\n".join(out)


def write_report(out_dir, results: Sequence[RateResult], label: str, bins: bool = False,
                 ids: Optional[Sequence[str]] = None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out_dir / "eval.csv", "svg": out_dir / "eval.svg"}
    write_report_csv(paths["csv"], results)
    if ids is not None:
        paths["examples"] = out_dir / "eval_examples.csv"
        write_examples_csv(paths["examples"], ids, results)
    paths["svg"].write_text(svg_line_chart({label: [(float(r.rate), r.miou) for r in results]}))
    if bins:
        paths["bins"] = out_dir / "significance_bins.csv"
        write_bins_csv(paths["bins"], results[-1].ious)
    return paths
