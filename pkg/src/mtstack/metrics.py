"""Evaluation metrics: RMSE, RPT, aRRMSE, RPD quality bands, Pearson matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

REPORT_SCHEMA = "mtstack-report/1"

RPD_BANDS = (
    (1.0, "very_poor"),
    (1.4, "poor"),
    (1.8, "fair"),
    (2.0, "good"),
    (2.5, "very_good"),
    (math.inf, "excellent"),
)


def rmse(actual, predicted) -> float:
    """Root mean squared error, sqrt(sum((y - yhat)^2) / N)."""
    actual = np.asarray(actual, dtype=float).ravel()
    predicted = np.asarray(predicted, dtype=float).ravel()
    if actual.shape != predicted.shape:
        raise ValueError(f"length mismatch: {actual.shape} vs {predicted.shape}")
    if actual.size == 0:
        raise ValueError("rmse of empty vectors is undefined")
    return float(np.sqrt(np.mean((actual - predicted) ** 2)))


def rpt(rmse_st: float, rmse_mtr: float) -> float:
    """Relative performance per target: ST error over MTR error (>1 = improved)."""
    if rmse_st <= 0 or rmse_mtr <= 0:
        raise ValueError("rpt requires strictly positive RMSE values")
    return rmse_st / rmse_mtr


def arrmse(actual, predicted, target_names=None) -> float:
    """Average relative RMSE over targets.

    Each target's RMSE is normalised by the dispersion of the actual values
    around their evaluation-set mean, then the per-target ratios are averaged.
    """
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape != predicted.shape or actual.ndim != 2:
        raise ValueError("actual and predicted must be matrices of equal shape")
    d = actual.shape[1]
    total = 0.0
    for t in range(d):
        y = actual[:, t]
        denom = np.sum((y - y.mean()) ** 2)
        if denom <= 0:
            name = target_names[t] if target_names else f"column {t}"
            raise ValueError(f"target '{name}' is constant over the evaluation set")
        total += math.sqrt(np.sum((y - predicted[:, t]) ** 2) / denom)
    return total / d


def rpd(reference_sd: float, rmse_value: float) -> float:
    """Ratio of reference standard deviation to prediction RMSE.

    A zero RMSE (perfect prediction) maps to +inf, which lands in the
    'excellent' band.
    """
    if reference_sd <= 0:
        raise ValueError("reference_sd must be > 0")
    if rmse_value < 0:
        raise ValueError("rmse must be >= 0")
    if rmse_value == 0:
        return math.inf
    return reference_sd / rmse_value


def rpd_band(rpd_value: float) -> str:
    """Quality band for an RPD value (left-closed interval convention)."""
    if not rpd_value > 0:
        raise ValueError("rpd_value must be > 0")
    for upper, name in RPD_BANDS:
        if rpd_value < upper:
            return name
    return "excellent"


def pearson_matrix(y, target_names=None) -> np.ndarray:
    """Pairwise Pearson correlation between target columns."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[0] < 2:
        raise ValueError("pearson_matrix needs a matrix with at least 2 rows")
    centered = y - y.mean(axis=0)
    norms = np.sqrt(np.sum(centered**2, axis=0))
    for t, nv in enumerate(norms):
        if nv <= 0:
            name = target_names[t] if target_names else f"column {t}"
            raise ValueError(f"target '{name}' is constant")
    corr = (centered.T @ centered) / np.outer(norms, norms)
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


@dataclass(frozen=True)
class TargetScore:
    target_name: str
    rmse: float
    rrmse: float
    rpd: float
    rpd_band: str
    rpt: float | None = None


@dataclass(frozen=True)
class EvaluationReport:
    per_target: tuple[TargetScore, ...]
    arrmse: float
    provenance: dict = field(default_factory=dict)


def build_report(actual, predicted, target_names, provenance=None,
                 st_rmses=None) -> EvaluationReport:
    """Score a prediction matrix target by target plus the aRRMSE aggregate.

    ``st_rmses`` maps target name to the single-target baseline RMSE for the
    same base learner; when present the per-target RPT is attached.
    """
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    scores = []
    for t, name in enumerate(target_names):
        y = actual[:, t]
        e = rmse(y, predicted[:, t])
        denom = np.sum((y - y.mean()) ** 2)
        if denom <= 0:
            raise ValueError(f"target '{name}' is constant over the evaluation set")
        rr = math.sqrt(np.sum((y - predicted[:, t]) ** 2) / denom)
        sd = float(np.std(y, ddof=1))
        r = rpd(sd, e)
        rp = None
        if st_rmses and name in st_rmses:
            rp = rpt(st_rmses[name], e)
        scores.append(TargetScore(name, e, rr, r, rpd_band(r), rp))
    agg = arrmse(actual, predicted, target_names)
    return EvaluationReport(tuple(scores), agg, dict(provenance or {}))


def _fmt(v) -> str:
    if v is None:
        return ""
    if math.isinf(v):
        return "inf"
    return format(v, ".12g")


def report_to_csv(report: EvaluationReport) -> str:
    """One row per target plus an aggregate row; schema-tagged first line."""
    lines = [f"# {REPORT_SCHEMA}"]
    lines.append("row,target,rmse,rrmse,rpt,rpd,rpd_band")
    for s in report.per_target:
        lines.append(
            f"target,{s.target_name},{_fmt(s.rmse)},{_fmt(s.rrmse)},"
            f"{_fmt(s.rpt)},{_fmt(s.rpd)},{s.rpd_band}"
        )
    lines.append(f"aggregate,arrmse,{_fmt(report.arrmse)},,,,")
    return "\n".join(lines) + "\n"


def report_summary(report: EvaluationReport) -> str:
    """Human-readable structured-text summary of a report."""
    lines = [f"schema: {REPORT_SCHEMA}"]
    for k in sorted(report.provenance):
        lines.append(f"{k}: {report.provenance[k]}")
    lines.append(f"arrmse: {_fmt(report.arrmse)}")
    for s in report.per_target:
        extra = f" rpt={_fmt(s.rpt)}" if s.rpt is not None else ""
        lines.append(
            f"target {s.target_name}: rmse={_fmt(s.rmse)} "
            f"rpd={_fmt(s.rpd)} ({s.rpd_band}){extra}"
        )
    return "\n".join(lines) + "\n"
