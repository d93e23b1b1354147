"""Evaluation metrics: rank correlation, significance, help-rate curves.

Conventions:

* Samples carry a *confidence* (higher = expected to succeed). Uncertainty
  scores are converted with ``confidence = -U`` before they arrive here.
* The help-rate grid is ``k/n`` for ``k = 0..n``: at ``k/n`` the ``k``
  least-confident tasks are handed to a human and count as successes.
  Equal confidences are ordered by ascending id.
* SR-HR-AUC normalises the trapezoidal area under that curve between the
  random-ordering line ``(0, y0) -> (1, 1)`` (score 0) and the perfect
  ordering ``(0, y0) -> (1 - y0, 1) -> (1, 1)`` (score 1).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, NamedTuple, Sequence

import numpy as np

from .errors import DegenerateBaselineError, ShapeError, UndefinedCorrelationError, ValidationError

EXACT_MAX_N = 9
EXACT = "exact_permutation"
T_APPROX = "t_approximation"


# ---------------------------------------------------------------- ranks


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("average_ranks needs a non-empty 1-D sequence")
    if not np.all(np.isfinite(v)):
        raise ValidationError("average_ranks needs finite values")
    order = np.argsort(v, kind="mergesort")
    sorted_v = v[order]
    ranks = np.empty(v.size)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _has_ties(ranks: np.ndarray) -> bool:
    return np.unique(ranks).size != ranks.size


def spearman(s: Sequence[float], c: Sequence[float]) -> float:
    """Spearman's rho between two equal-length lists.

    Without ties this is ``1 - 6 sum(d^2) / (n (n^2 - 1))``; with ties it
    is the Pearson correlation of average ranks (identical when tie-free).
    """
    s = np.asarray(s, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if s.shape != c.shape or s.ndim != 1:
        raise ShapeError(f"length mismatch: {s.shape} vs {c.shape}")
    n = s.size
    if n < 2:
        raise ValidationError("spearman needs n >= 2")
    rs, rc = average_ranks(s), average_ranks(c)
    if not (_has_ties(rs) or _has_ties(rc)):
        d = rs - rc
        return float(1.0 - 6.0 * np.sum(d * d) / (n * (n * n - 1.0)))
    return _pearson_of_ranks(rs, rc)


def _pearson_of_ranks(rs: np.ndarray, rc: np.ndarray) -> float:
    xs, xc = rs - rs.mean(), rc - rc.mean()
    ss, sc = float(np.dot(xs, xs)), float(np.dot(xc, xc))
    if ss == 0.0 or sc == 0.0:
        raise UndefinedCorrelationError("rank correlation undefined: one list is entirely tied")
    rho = float(np.dot(xs, xc)) / math.sqrt(ss * sc)
    return max(-1.0, min(1.0, rho))


# ---------------------------------------------------------------- p-values


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValidationError("betainc needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise ValidationError(f"betainc needs x in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability ``P(|T| >= |t|)`` for Student's t."""
    if df <= 0:
        raise ValidationError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    return betainc(0.5 * df, 0.5, df / (df + t * t))


class PValue(NamedTuple):
    p: float
    method: str
    saturated: bool = False


@lru_cache(maxsize=EXACT_MAX_N + 1)
def _permutations(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64)


def _exact_pvalue(c_ranks: np.ndarray, s_ranks: np.ndarray) -> float:
    # doubled ranks are integers even with ties, so the comparison is exact
    n = c_ranks.size
    c2 = np.rint(2 * c_ranks).astype(np.int64)
    s2 = np.rint(2 * s_ranks).astype(np.int64)
    s_centered = n * s2 - s2.sum()
    observed = abs(int(np.dot(c2, s_centered)))
    stats = np.abs(c2[_permutations(n)] @ s_centered)
    return float(np.count_nonzero(stats >= observed)) / stats.size


def spearman_pvalue(rho: float, n: int, c_ranks=None, s_ranks=None, method: str | None = None) -> PValue:
    """Two-sided p-value for ``rho``.

    ``n <= 9`` uses the exact permutation distribution (every ordering of
    the C ranks against the fixed S ranks), which needs the rank vectors.
    Larger ``n`` uses ``t = rho * sqrt((n - 2) / (1 - rho^2))`` with the
    Student-t tail. ``method`` forces one or the other.
    """
    if n < 3:
        raise ValidationError("p-value needs n >= 3")
    if not -1.0 <= rho <= 1.0:
        raise ValidationError(f"rho must lie in [-1, 1], got {rho}")
    if method is None:
        method = EXACT if n <= EXACT_MAX_N else T_APPROX
    if method == EXACT:
        if c_ranks is None or s_ranks is None:
            raise ValidationError("exact permutation p-value needs both rank vectors")
        c_ranks, s_ranks = np.asarray(c_ranks, dtype=np.float64), np.asarray(s_ranks, dtype=np.float64)
        if c_ranks.size != n or s_ranks.size != n:
            raise ShapeError("rank vectors must have length n")
        if n > EXACT_MAX_N:
            raise ValidationError(f"exact permutation test is limited to n <= {EXACT_MAX_N}")
        return PValue(_exact_pvalue(c_ranks, s_ranks), EXACT)
    if method != T_APPROX:
        raise ValidationError(f"unknown p-value method {method!r}")
    if abs(rho) >= 1.0:
        return PValue(0.0, T_APPROX, saturated=True)
    df = n - 2
    t = rho * math.sqrt(df / (1.0 - rho * rho))
    return PValue(min(1.0, student_t_two_sided(t, df)), T_APPROX)


# ---------------------------------------------------------------- curves


@dataclass(frozen=True)
class ScoredOutcome:
    id: str
    confidence: float
    outcome: int

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise ValidationError(f"{self.id!r}: outcome must be 0 or 1")
        if not math.isfinite(self.confidence):
            raise ValidationError(f"{self.id!r}: confidence must be finite")


class CurvePoint(NamedTuple):
    help_rate: float
    success_rate: float


def help_success_curve(samples: Sequence[ScoredOutcome]) -> list[CurvePoint]:
    n = len(samples)
    if n == 0:
        raise ValidationError("help_success_curve needs at least one sample")
    ordered = sorted(samples, key=lambda s: (s.confidence, s.id))
    outcomes = [s.outcome for s in ordered]
    # successes among the tasks left to the robot after helping the first k
    remaining = [0] * (n + 1)
    for k in range(n - 1, -1, -1):
        remaining[k] = remaining[k + 1] + outcomes[k]
    return [CurvePoint(k / n, (k + remaining[k]) / n) for k in range(n + 1)]


def trapezoid_area(curve: Sequence[CurvePoint]) -> float:
    area = 0.0
    for (h0, s0), (h1, s1) in zip(curve, curve[1:]):
        area += 0.5 * (s0 + s1) * (h1 - h0)
    return area


def random_auc(y0: float) -> float:
    return 0.5 * (1.0 + y0)


def perfect_auc(y0: float) -> float:
    return 0.5 * (1.0 + 2.0 * y0 - y0 * y0)


def sr_hr_auc(curve: Sequence[CurvePoint], y0: float) -> float:
    """Normalised area: 1 for a perfect ordering, 0 for random, < 0 worse."""
    if not 0.0 <= y0 <= 1.0:
        raise ValidationError(f"y0 must lie in [0, 1], got {y0}")
    if y0 == 1.0 or y0 == 0.0:
        raise DegenerateBaselineError(f"base success rate is {y0:g}: random and perfect curves coincide")
    if len(curve) < 2:
        raise ValidationError("curve needs at least two points")
    hs = [p.help_rate for p in curve]
    if hs[0] != 0.0 or hs[-1] != 1.0 or any(b <= a for a, b in zip(hs, hs[1:])):
        raise ValidationError("curve help rates must increase strictly from 0 to 1")
    r = random_auc(y0)
    return (trapezoid_area(curve) - r) / (perfect_auc(y0) - r)


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    n: int
    spearman: float
    p_value: float
    p_value_method: str
    base_success_rate: float
    sr_hr_auc: float
    curve: list[CurvePoint]
    extra: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        out = {
            "n": self.n,
            "spearman": self.spearman,
            "p_value": self.p_value,
            "p_value_method": self.p_value_method,
            "base_success_rate": self.base_success_rate,
            "sr_hr_auc": self.sr_hr_auc,
            "curve": [list(p) for p in self.curve],
        }
        out.update(self.extra)
        return out


def evaluate(samples: Sequence[ScoredOutcome], p_method: str | None = None) -> EvalReport:
    """Spearman(outcome, confidence), its p-value, the curve and SR-HR-AUC."""
    if not samples:
        raise ValidationError("no usable samples to evaluate")
    ordered = sorted(samples, key=lambda s: s.id)
    outcomes = np.array([s.outcome for s in ordered], dtype=np.float64)
    conf = np.array([s.confidence for s in ordered], dtype=np.float64)
    n = len(ordered)
    rho = spearman(outcomes, conf)
    pv = spearman_pvalue(rho, n, average_ranks(conf), average_ranks(outcomes), method=p_method)
    curve = help_success_curve(ordered)
    y0 = curve[0].success_rate
    report = EvalReport(n, rho, pv.p, pv.method, y0, sr_hr_auc(curve, y0), curve)
    if pv.saturated:
        report.extra["p_value_saturated"] = True
    return report


@dataclass
class RunAggregate:
    help_rate: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    metrics: dict[str, tuple[float, float]]

    @property
    def lower(self) -> np.ndarray:
        return self.mean - 2.0 * self.std

    @property
    def upper(self) -> np.ndarray:
        return self.mean + 2.0 * self.std

    def display_band(self) -> tuple[np.ndarray, np.ndarray]:
        return np.clip(self.lower, 0.0, 1.0), np.clip(self.upper, 0.0, 1.0)


def aggregate_runs(curves: Sequence[Sequence[CurvePoint]], reports: Sequence[EvalReport] = ()) -> RunAggregate:
    """Pointwise mean and sample standard deviation over runs (``mean +- 2 sigma`` bands)."""
    if len(curves) < 2:
        raise ValidationError("aggregate_runs needs at least two runs")
    grid = np.array([p.help_rate for p in curves[0]])
    rows = []
    for c in curves:
        h = np.array([p.help_rate for p in c])
        if h.shape != grid.shape or not np.array_equal(h, grid):
            raise ValidationError("runs have mismatched help-rate grids")
        rows.append([p.success_rate for p in c])
    sr = np.array(rows)
    metrics = {}
    for name in ("spearman", "p_value", "sr_hr_auc", "base_success_rate"):
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        if vals.size >= 2:
            metrics[name] = (float(vals.mean()), float(vals.std(ddof=1)))
    return RunAggregate(grid, sr.mean(axis=0), sr.std(axis=0, ddof=1), metrics)


# ---------------------------------------------------------------- files


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_curve_csv(curve: Sequence[CurvePoint], path: str | Path) -> None:
    lines = ["help_rate,success_rate"] + [f"{_fmt(h)},{_fmt(s)}" for h, s in curve]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_band_csv(agg: RunAggregate, path: str | Path) -> None:
    lo, hi = agg.display_band()
    lines = ["help_rate,success_rate,ci_low,ci_high"]
    lines += [f"{_fmt(h)},{_fmt(m)},{_fmt(a)},{_fmt(b)}" for h, m, a, b in zip(agg.help_rate, agg.mean, lo, hi)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_report_json(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=False) + "\n", encoding="utf-8")


def aggregate_to_json(agg: RunAggregate, n_runs: int | None = None) -> dict[str, Any]:
    return {
        "n_runs": n_runs,
        "metrics": {name: {"mean": m, "std": s} for name, (m, s) in agg.metrics.items()},
    }
