"""End to end on synthetic tasks: train both models, combine, and score.

Synthetic embeddings come from a few clusters. A hidden hyperplane marks
tasks as ambiguous, another sets the success probability of clear tasks.
We fit the familiarity model and the two-headed assessment network on
the training split, combine their outputs into one uncertainty per test
task, and check how well low uncertainty predicts success. The generator
also exposes the true success probability, so we can compare against the
best possible ranking.

Run: python3 demos/02_uncertainty_pipeline.py   (about 20 s)
"""

import numpy as np

from cure.combiner import CombinerConfig
from cure.data import SyntheticConfig, make_synthetic, resolve_synthetic
from cure.metrics import ScoredOutcome, evaluate
from cure.pipeline import estimate, evaluate_breakdowns, outcomes_from, sweep
from cure.rnd import rnd_init, rnd_train
from cure.uan import uan_init, uan_train

cfg = SyntheticConfig(n_train=1000, n_test=400, seed=0)
data = make_synthetic(cfg)
train, test = data.split("train"), data.split("test")
print(f"{len(train)} training tasks, {len(test)} test tasks, dim {data.dim}")
print(f"test ambiguity rate {test.ambiguous().mean():.2f}, success rate {np.mean(test.success()):.2f}")

rnd = rnd_train(rnd_init(data.dim, 0), data, epochs=100, batch_size=64).model
uan = uan_train(uan_init(data.dim, 0), data, epochs=100, batch_size=64).model

rows = estimate(test, rnd, uan, CombinerConfig())
first = rows[0]
print(f"\nexample breakdown for {first.id}: a_sim={first.a_sim:.4f} a_amb={first.a_amb:.3f} p={first.p:.3f} -> U={first.u:.3f}")

acc = np.mean([(r.a_amb > 0.5) == bool(t.ambiguous) for r, t in zip(rows, sorted(test, key=lambda t: t.id))])
print(f"ambiguity head accuracy on test tasks: {acc:.3f}")

report = evaluate_breakdowns(rows, outcomes_from(test))
print(f"\ncombined score: spearman={report.spearman:.3f} (p={report.p_value:.2g})  sr_hr_auc={report.sr_hr_auc:.3f}")

world = resolve_synthetic(cfg)
p_true = world.success_probability(test.embeddings())
oracle = evaluate([ScoredOutcome(t.id, float(p), t.success) for t, p in zip(test, p_true)])
print(f"true probabilities: spearman={oracle.spearman:.3f}  sr_hr_auc={oracle.sr_hr_auc:.3f}")

# the weights can be re-tuned without retraining: U is recomputed from cached parts
print("\nsr_hr_auc over the familiarity weight (alpha2 = 0.6):")
for row in sweep(rows, outcomes_from(test), alpha2_grid=[0.6]):
    print(f"  alpha3={row['alpha3']:>6g}  sr_hr_auc={row['sr_hr_auc']:.3f}")
