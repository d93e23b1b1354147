"""Combine familiarity, clarity and expected success into one uncertainty.

The main score is::

    U = 1 - alpha1 * (1 - alpha2 * a_amb) * p + alpha3 * a_sim

Larger ``U`` means less trust in the plan. ``U`` is a ranking score and
is deliberately not clamped to ``[0, 1]``.

Orientation convention: evaluation correlates outcomes with
``confidence = -U`` (see :func:`to_confidence`) so that a larger metric
always means a better estimator, whatever method produced the score.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any

from .errors import ValidationError

VARIANTS = ("cure", "cure_ambiguity", "ambiguity_only", "knowno_ambiguity")


@dataclass(frozen=True)
class CombinerConfig:
    alpha1: float = 1.0
    alpha2: float = 0.6
    alpha3: float = 30.0
    variant: str = "cure"

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


DEFAULT = CombinerConfig()


def _unit_interval(name: str, v: float) -> None:
    if not (0.0 <= v <= 1.0):
        raise ValidationError(f"{name} must lie in [0, 1], got {v!r}")


def _non_negative(name: str, v: float) -> None:
    if not (v >= 0.0 and math.isfinite(v)):
        raise ValidationError(f"{name} must be finite and >= 0, got {v!r}")


def cure(a_amb: float, p: float, a_sim: float, cfg: CombinerConfig = DEFAULT) -> float:
    _unit_interval("a_amb", a_amb)
    _unit_interval("p", p)
    _non_negative("a_sim", a_sim)
    return 1.0 - cfg.alpha1 * (1.0 - cfg.alpha2 * a_amb) * p + cfg.alpha3 * a_sim


def cure_ambiguity(a_amb_llm: float, a_amb_uan: float, p: float, a_sim: float, cfg: CombinerConfig = DEFAULT) -> float:
    """Average the LLM verdict and the network estimate before combining."""
    _unit_interval("a_amb_llm", a_amb_llm)
    _unit_interval("a_amb_uan", a_amb_uan)
    _unit_interval("p", p)
    _non_negative("a_sim", a_sim)
    return 1.0 - cfg.alpha1 * (1.0 - cfg.alpha2 * 0.5 * (a_amb_llm + a_amb_uan)) * p + cfg.alpha3 * a_sim


def ambiguity_only(a_amb_llm: float, p: float, a_sim: float, cfg: CombinerConfig = DEFAULT) -> float:
    _unit_interval("a_amb_llm", a_amb_llm)
    _unit_interval("p", p)
    _non_negative("a_sim", a_sim)
    return 1.0 - cfg.alpha1 * (1.0 - cfg.alpha2 * a_amb_llm) * p + cfg.alpha3 * a_sim


def knowno_ambiguity(a_amb_llm: float, p: float, c_knowno: float | None, cfg: CombinerConfig = DEFAULT) -> float:
    """Uses an external planner confidence; no familiarity term, fixed 0.5 weight."""
    if c_knowno is None:
        raise ValidationError("knowno_ambiguity requires c_knowno")
    _unit_interval("a_amb_llm", a_amb_llm)
    _unit_interval("p", p)
    _unit_interval("c_knowno", c_knowno)
    return 1.0 - cfg.alpha1 * (1.0 - 0.5 * a_amb_llm) * p * c_knowno


def to_confidence(u: float) -> float:
    if not math.isfinite(u):
        raise ValidationError(f"uncertainty must be finite, got {u!r}")
    return -u


@dataclass
class UncertaintyBreakdown:
    id: str
    a_sim: float
    a_amb: float
    p: float
    u: float
    variant: str
    a_amb_llm: float | None = None
    c_knowno: float | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "a_sim": self.a_sim,
            "a_amb": self.a_amb,
            "a_amb_llm": self.a_amb_llm,
            "p": self.p,
            "c_knowno": self.c_knowno,
            "u": self.u,
            "variant": self.variant,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "UncertaintyBreakdown":
        try:
            b = cls(
                id=str(obj["id"]),
                a_sim=float(obj["a_sim"]),
                a_amb=float(obj["a_amb"]),
                p=float(obj["p"]),
                u=float(obj["u"]),
                variant=str(obj["variant"]),
                a_amb_llm=None if obj.get("a_amb_llm") is None else float(obj["a_amb_llm"]),
                c_knowno=None if obj.get("c_knowno") is None else float(obj["c_knowno"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed breakdown record: {exc}") from None
        if b.variant not in VARIANTS:
            raise ValidationError(f"breakdown {b.id!r}: unknown variant {b.variant!r}")
        return b


def combine(b: UncertaintyBreakdown, cfg: CombinerConfig) -> float:
    """Recompute ``U`` for the components stored in ``b`` under ``cfg.variant``."""
    v = cfg.variant
    if v == "cure":
        return cure(b.a_amb, b.p, b.a_sim, cfg)
    if b.a_amb_llm is None:
        raise ValidationError(f"task {b.id!r}: variant {v} needs a_amb_llm")
    if v == "cure_ambiguity":
        return cure_ambiguity(b.a_amb_llm, b.a_amb, b.p, b.a_sim, cfg)
    if v == "ambiguity_only":
        return ambiguity_only(b.a_amb_llm, b.p, b.a_sim, cfg)
    return knowno_ambiguity(b.a_amb_llm, b.p, b.c_knowno, cfg)
