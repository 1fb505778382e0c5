"""Evaluation: per-joint mean distance, success-frame curves, forward-time
benchmarking and multi-method comparison reports with file exports.

Conventions: a frame is a success at threshold T when every joint's error
is strictly below T mm. The overall mean error averages per-joint means
(identical to per-frame averaging when all frames carry all joints).
Timing assertions are relative (orderings, ratios), never absolute.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "EvalReport",
    "TimingStats",
    "mean_joint_error",
    "joint_errors",
    "success_rate",
    "success_curve",
    "evaluate",
    "benchmark_forward",
    "compare_report",
    "ComparisonReport",
    "write_curve_csv",
    "write_curve_svg",
    "DEFAULT_THRESHOLDS",
]

DEFAULT_THRESHOLDS = tuple(float(t) for t in range(0, 81))  # 0..80 mm, 1 mm grid


def _as_joint_array(items):
    """List of HandAnnotation or array-likes -> (N, J, 3) float64."""
    rows = [np.asarray(getattr(x, "joints", x), dtype=np.float64) for x in items]
    arr = np.stack(rows)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (N, J, 3) joint positions, got {arr.shape}")
    return arr


def joint_errors(preds, gts):
    """(N, J) Euclidean distances in mm."""
    p = _as_joint_array(preds)
    g = _as_joint_array(gts)
    if p.shape != g.shape:
        raise ValueError(f"prediction/ground-truth shape mismatch: {p.shape} vs {g.shape}")
    return np.linalg.norm(p - g, axis=2)


def mean_joint_error(preds, gts):
    """(per-joint mean distances (J,), overall mean) in mm."""
    err = joint_errors(preds, gts)
    per_joint = err.mean(axis=0)
    return per_joint, float(per_joint.mean())


def success_rate(preds, gts, threshold):
    """Fraction of frames whose worst joint error is strictly below
    `threshold` mm."""
    if threshold <= 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    err = joint_errors(preds, gts)
    return float(np.mean(err.max(axis=1) < threshold))

def success_curve(preds, gts, thresholds=DEFAULT_THRESHOLDS):
    """[(threshold, fraction)] over a sorted threshold grid; thresholds of
    zero (the grid origin) count exactly-perfect frames."""
    ths = list(thresholds)
    if sorted(ths) != ths:
        raise ValueError("thresholds must be sorted ascending")
    err = joint_errors(preds, gts)
    worst = err.max(axis=1)
    return [(float(t), float(np.mean(worst < t)) if t > 0 else float(np.mean(worst == 0.0)))
            for t in ths]


@dataclass
class TimingStats:
    mean_ms: float
    p50_ms: float
    p95_ms: float
    reps: int

    def __str__(self):
        return f"{self.mean_ms:.3f} ms mean, {self.p50_ms:.3f} p50, {self.p95_ms:.3f} p95"


@dataclass
class EvalReport:
    per_joint_error_mm: np.ndarray
    mean_error_mm: float
    success_curve: list  # (threshold mm, fraction)
    frame_count: int
    timing: TimingStats | None = None

    def __post_init__(self):
        fr = [f for _, f in self.success_curve]
        if any(not 0.0 <= f <= 1.0 for f in fr):
            raise ValueError("success fractions must lie in [0, 1]")
        if any(b < a - 1e-12 for a, b in zip(fr, fr[1:])):
            raise ValueError("success curve must be non-decreasing")
        if self.mean_error_mm < 0:
            raise ValueError("mean error must be >= 0")

    def to_text(self):
        lines = [
            f"frames: {self.frame_count}",
            f"mean joint error: {self.mean_error_mm:.3f} mm",
            "per-joint error (mm): "
            + " ".join(f"{v:.2f}" for v in self.per_joint_error_mm),
        ]
        if self.timing:
            lines.append(f"forward time: {self.timing}")
        return "\n".join(lines)


def evaluate(preds, gts, thresholds=DEFAULT_THRESHOLDS, timing=None):
    per_joint, overall = mean_joint_error(preds, gts)
    curve = success_curve(preds, gts, thresholds)
    return EvalReport(
        per_joint_error_mm=per_joint,
        mean_error_mm=overall,
        success_curve=curve,
        frame_count=len(preds),
        timing=timing,
    )


def benchmark_forward(predictor, batch, warmup=3, reps=20):
    """Wall-clock per-forward stats for a model/ensemble `.predict`-able.

    Runs single-worker; the first `warmup` calls are discarded.
    """
    if reps < 10:
        raise ValueError(f"reps must be >= 10, got {reps}")
    fn = predictor.predict if hasattr(predictor, "predict") else predictor
    for _ in range(warmup):
        fn(batch)
    times = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter()
        fn(batch)
        times[i] = time.perf_counter() - t0
    ms = times * 1e3
    return TimingStats(
        mean_ms=float(ms.mean()),
        p50_ms=float(np.percentile(ms, 50)),
        p95_ms=float(np.percentile(ms, 95)),
        reps=reps,
    )


@dataclass
class ComparisonReport:
    """Aligned mean-error/timing table; rows keep their declared order."""

    rows: list  # (name, EvalReport)
    baseline: str

    def improvements(self):
        """name -> relative improvement (%) of mean error vs the baseline."""
        base = dict(self.rows)[self.baseline].mean_error_mm
        out = {}
        for name, rep in self.rows:
            out[name] = 100.0 * (base - rep.mean_error_mm) / base if base > 0 else 0.0
        return out

    def to_text(self):
        imp = self.improvements()
        header = f"{'method':<20} {'error(mm)':>10} {'time(ms)':>10} {'vs ' + self.baseline:>12}"
        lines = [header, "-" * len(header)]
        for name, rep in self.rows:
            t = f"{rep.timing.mean_ms:.3f}" if rep.timing else "-"
            lines.append(
                f"{name:<20} {rep.mean_error_mm:>10.3f} {t:>10} {imp[name]:>11.2f}%"
            )
        return "\n".join(lines)

    def to_csv(self):
        imp = self.improvements()
        lines = ["method,error_mm,time_ms,improvement_pct"]
        for name, rep in self.rows:
            t = f"{rep.timing.mean_ms:.6g}" if rep.timing else ""
            lines.append(f"{name},{rep.mean_error_mm:.6g},{t},{imp[name]:.6g}")
        return "\n".join(lines) + "\n"


def compare_report(named_reports, baseline=None):
    """Build a comparison across named EvalReports (declared order kept)."""
    rows = list(named_reports)
    if not rows:
        raise ValueError("need at least one report")
    names = [n for n, _ in rows]
    if baseline is None:
        baseline = names[0]
    if baseline not in names:
        raise ValueError(f"baseline {baseline!r} not among {names}")
    return ComparisonReport(rows=rows, baseline=baseline)


def write_curve_csv(curve, path):
    lines = ["threshold_mm,fraction"]
    lines += [f"{t:.10g},{f:.10g}" for t, f in curve]
    Path(path).write_text("\n".join(lines) + "\n")


def write_curve_svg(curves, path, width=640, height=420):
    """Minimal SVG line chart of success curves (threshold 0-80 mm on x,
    fraction 0-1 on y); `curves` maps name -> [(threshold, fraction)]."""
    pad = 48
    x0, y0 = pad, height - pad
    x1, y1 = width - pad // 2, pad // 2
    tmax = max((t for curve in curves.values() for t, _ in curve), default=80.0) or 80.0

    def sx(t):
        return x0 + (t / tmax) * (x1 - x0)

    def sy(f):
        return y0 - f * (y0 - y1)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        parts.append(
            f'<text x="{x0 - 6}" y="{sy(frac) + 4}" font-size="11" text-anchor="end">{frac:g}</text>'
        )
    for t in range(0, int(tmax) + 1, 20):
        parts.append(
            f'<text x="{sx(t)}" y="{y0 + 16}" font-size="11" text-anchor="middle">{t}</text>'
        )
    parts.append(
        f'<text x="{(x0 + x1) / 2}" y="{height - 8}" font-size="12" '
        f'text-anchor="middle">threshold (mm)</text>'
    )
    for k, (name, curve) in enumerate(curves.items()):
        pts = " ".join(f"{sx(t):.1f},{sy(f):.1f}" for t, f in curve)
        color = colors[k % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{x1 - 120}" y="{y1 + 14 + 14 * k}" font-size="12" '
            f'fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))
