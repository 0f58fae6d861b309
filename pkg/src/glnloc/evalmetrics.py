"""Localization evaluation: Recall@k, CDF@k, interpolated median error
distance, meter-level accuracy, and CDF curve emission for plotting.

Thresholds are closed (error <= k counts toward CDF@k), so CDF@0 is exact-
match accuracy and meter-level accuracy is CDF@1. The median uses the
fractional-index percentile convention: value at index 0.5 * (n - 1) of the
sorted errors, linearly interpolated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .floorplan import FloorPlan, error_distance

DEFAULT_KS = (1, 2, 3, 5, 10)


@dataclass
class EvalReport:
    n: int
    recall: dict = field(default_factory=dict)       # k -> fraction
    cdf: dict = field(default_factory=dict)          # distance -> fraction
    med: float = 0.0
    meter_level: float = 0.0

    def lines(self):
        out = [f"n {self.n}"]
        out += [f"recall@{k} {self.recall[k]!r}" for k in sorted(self.recall)]
        out += [f"cdf@{d:g} {self.cdf[d]!r}" for d in sorted(self.cdf)]
        out.append(f"med {self.med!r}")
        out.append(f"meter_level {self.meter_level!r}")
        return out


def recall_at_k(rankings, truths, k: int) -> float:
    """Fraction of samples whose true id is among the first k ranked ids."""
    if len(rankings) == 0:
        raise ValueError("recall_at_k needs at least one ranking")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    hits = sum(1 for ranked, truth in zip(rankings, truths) if truth in list(ranked[:k]))
    return hits / len(rankings)


def prediction_errors(top1_ids, truths, plan: FloorPlan) -> np.ndarray:
    return np.array([error_distance(plan, int(p), int(t))
                     for p, t in zip(top1_ids, truths)])


def cdf_at_k(top1_ids, truths, plan: FloorPlan, k_meters: float) -> float:
    """Fraction of predictions whose error distance is <= k_meters."""
    if k_meters < 0:
        raise ValueError(f"k_meters must be >= 0, got {k_meters}")
    errors = prediction_errors(top1_ids, truths, plan)
    return float((errors <= k_meters).mean())


def median_error_distance(errors) -> float:
    """50th percentile with linear interpolation between sorted neighbors."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("median of empty error list")
    ordered = np.sort(errors)
    pos = 0.5 * (ordered.size - 1)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    frac = pos - lo
    return float(ordered[lo] * (1 - frac) + ordered[hi] * frac)


def emit_cdf_curve(errors, max_distance: float, step: float):
    """(distance, fraction <= distance) points from 0 to max_distance."""
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")
    errors = np.asarray(errors, dtype=np.float64)
    points = []
    d = 0.0
    while d <= max_distance + 1e-9:
        points.append((round(d, 10), float((errors <= d + 1e-12).mean())))
        d += step
    return points


def write_cdf_curve(path, points) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d, frac in points:
            fh.write(f"{d:g} {frac!r}\n")


def build_report(rankings, truths, plan: FloorPlan, ks=DEFAULT_KS) -> EvalReport:
    """Full report from per-sample rankings (best first) and true locations."""
    rankings = [np.asarray(r) for r in rankings]
    truths = np.asarray(truths)
    if len(rankings) != truths.shape[0] or len(rankings) == 0:
        raise ValueError("rankings and truths must be non-empty and aligned")
    top1 = np.array([r[0] for r in rankings])
    errors = prediction_errors(top1, truths, plan)
    report = EvalReport(n=len(rankings))
    for k in ks:
        report.recall[k] = recall_at_k(rankings, truths, k)
    for d in ks:
        report.cdf[float(d)] = float((errors <= d).mean())
    report.med = median_error_distance(errors)
    report.meter_level = float((errors <= 1.0).mean())
    return report


def write_report(path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.lines()) + "\n")


def read_report(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            key, value = line.split()
            out[key] = float(value) if key != "n" else int(value)
    return out
