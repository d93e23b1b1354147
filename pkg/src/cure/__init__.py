"""Combined uncertainty estimation for LLM-based task planning.

Familiarity (random network distillation), task clarity and expected
success (a two-headed network) are combined into one uncertainty score,
and scored with rank correlation and help-rate/success-rate curves.
"""

from .combiner import (
    CombinerConfig,
    UncertaintyBreakdown,
    ambiguity_only,
    cure,
    cure_ambiguity,
    knowno_ambiguity,
    to_confidence,
)
from .data import (
    Dataset,
    SyntheticConfig,
    TaskRecord,
    load_checkpoint,
    load_jsonl,
    make_synthetic,
    save_checkpoint,
    save_jsonl,
)
from .metrics import (
    EvalReport,
    ScoredOutcome,
    aggregate_runs,
    average_ranks,
    evaluate,
    help_success_curve,
    spearman,
    spearman_pvalue,
    sr_hr_auc,
)
from .rnd import RndModel, rnd_init, rnd_score, rnd_train
from .uan import UanModel, uan_infer, uan_init, uan_train

__version__ = "0.1.0"
