"""In-memory estimate / evaluate / sweep, shared by the CLI and the tests."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .combiner import CombinerConfig, UncertaintyBreakdown, combine, to_confidence
from .data import Dataset
from .errors import ValidationError
from .metrics import EvalReport, ScoredOutcome, evaluate
from .rnd import SCORE_CHUNK, RndModel, rnd_score_batch
from .uan import UanModel, uan_infer_batch

ALPHA2_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))
ALPHA3_GRID = (0.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0, 3000.0)


def config_hash(config: Mapping[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _score_chunk(rnd: RndModel, uan: UanModel, x: np.ndarray):
    a_sim = rnd_score_batch(rnd, x)
    a_amb, p = uan_infer_batch(uan, x)
    return a_sim, a_amb, p


def estimate(
    records: Dataset,
    rnd: RndModel,
    uan: UanModel,
    cfg: CombinerConfig,
    a_amb_llm: Mapping[str, float | None] | None = None,
    c_knowno: Mapping[str, float] | None = None,
    threads: int = 1,
) -> list[UncertaintyBreakdown]:
    """One breakdown per record, ordered by id.

    Work is split into fixed ``SCORE_CHUNK``-row blocks regardless of
    ``threads``, so the floating-point results do not depend on the
    number of workers.
    """
    if records.dim != rnd.input_dim or records.dim != uan.input_dim:
        raise ValidationError(
            f"dataset dim {records.dim} does not match checkpoints (rnd {rnd.input_dim}, uan {uan.input_dim})"
        )
    needs_llm = cfg.variant != "cure"
    if needs_llm and a_amb_llm is None:
        raise ValidationError(f"variant {cfg.variant} needs LLM ambiguity verdicts (--ambiguity-file)")
    if cfg.variant == "knowno_ambiguity" and c_knowno is None:
        raise ValidationError("variant knowno_ambiguity needs KnowNo confidences (--knowno-file)")

    ordered = sorted(records, key=lambda r: r.id)
    x = np.stack([r.embedding for r in ordered]) if ordered else np.zeros((0, records.dim))
    starts = list(range(0, len(ordered), SCORE_CHUNK))
    chunks = [x[s : s + SCORE_CHUNK] for s in starts]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _score_chunk(rnd, uan, c), chunks))
    else:
        parts = [_score_chunk(rnd, uan, c) for c in chunks]

    out = []
    for part, s in zip(parts, starts):
        for j, (a_sim, a_amb, p) in enumerate(zip(*part)):
            rec = ordered[s + j]
            llm = ck = None
            if needs_llm:
                llm = a_amb_llm.get(rec.id)
                if llm is None:
                    raise ValidationError(f"no LLM ambiguity verdict for task {rec.id!r} in --ambiguity-file")
            if cfg.variant == "knowno_ambiguity":
                if rec.id not in c_knowno:
                    raise ValidationError(f"no KnowNo confidence for task {rec.id!r} in --knowno-file")
                ck = float(c_knowno[rec.id])
            b = UncertaintyBreakdown(rec.id, float(a_sim), float(a_amb), float(p), 0.0, cfg.variant, llm, ck)
            b.u = combine(b, cfg)
            out.append(b)
    return out


def breakdowns_to_jsonl(breakdowns: Sequence[UncertaintyBreakdown]) -> str:
    return "".join(json.dumps(b.to_json(), allow_nan=False) + "\n" for b in breakdowns)


def read_breakdowns(path: str | Path) -> list[UncertaintyBreakdown]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(UncertaintyBreakdown.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
    return out


def outcomes_from(dataset: Dataset) -> dict[str, int | None]:
    return {r.id: r.success for r in dataset}


def evaluate_breakdowns(
    breakdowns: Sequence[UncertaintyBreakdown],
    outcomes: Mapping[str, int | None],
    p_method: str | None = None,
    u_values: Sequence[float] | None = None,
    extra: Mapping[str, Any] | None = None,
) -> EvalReport:
    """Score breakdowns against outcomes using ``confidence = -u``.

    Tasks whose outcome is absent (or missing from ``outcomes``) are
    dropped and counted in ``n_excluded``.
    """
    samples, excluded = [], 0
    for i, b in enumerate(breakdowns):
        y = outcomes.get(b.id)
        if y is None:
            excluded += 1
            continue
        u = b.u if u_values is None else u_values[i]
        samples.append(ScoredOutcome(b.id, to_confidence(u), int(y)))
    if not samples:
        raise ValidationError("no breakdown has a recorded outcome; nothing to evaluate")
    report = evaluate(samples, p_method)
    report.extra["n_excluded"] = excluded
    if extra:
        report.extra.update(extra)
    return report


def sweep(
    breakdowns: Sequence[UncertaintyBreakdown],
    outcomes: Mapping[str, int | None],
    alpha2_grid: Sequence[float] = ALPHA2_GRID,
    alpha3_grid: Sequence[float] = ALPHA3_GRID,
    variant: str = "cure",
    alpha1: float = 1.0,
    p_method: str | None = None,
) -> list[dict[str, Any]]:
    """Re-combine cached components over an (alpha2, alpha3) grid; no retraining."""
    if not alpha2_grid or not alpha3_grid:
        raise ValidationError("sweep grid is empty")
    rows = []
    for a2 in alpha2_grid:
        for a3 in alpha3_grid:
            cfg = CombinerConfig(alpha1, float(a2), float(a3), variant)
            u = [combine(b, cfg) for b in breakdowns]
            rep = evaluate_breakdowns(breakdowns, outcomes, p_method, u_values=u)
            rows.append(
                {
                    "alpha2": float(a2),
                    "alpha3": float(a3),
                    "spearman": rep.spearman,
                    "p_value": rep.p_value,
                    "sr_hr_auc": rep.sr_hr_auc,
                }
            )
    return rows


SWEEP_COLUMNS = ("alpha2", "alpha3", "spearman", "p_value", "sr_hr_auc")


def sweep_to_csv(rows: Sequence[Mapping[str, float]]) -> str:
    # repr() gives the same digits json uses in the eval report
    lines = [",".join(SWEEP_COLUMNS)]
    lines += [",".join(repr(float(r[c])) for c in SWEEP_COLUMNS) for r in rows]
    return "\n".join(lines) + "\n"
