"""Reading the help-rate / success-rate curve.

Tasks are sorted from least to most confident. Helping the first k of
them (a human steps in, so they count as successes) traces a curve from
the base success rate up to 1. A good estimator pushes failures to the
front, so the curve climbs fast; the normalised area scores that against
a random order (0) and a perfect one (1).

Run: python3 demos/03_help_curves.py
"""

from cure.metrics import (
    ScoredOutcome,
    help_success_curve,
    perfect_auc,
    random_auc,
    spearman,
    spearman_pvalue,
    sr_hr_auc,
    trapezoid_area,
)


def show(label, confidences, outcomes):
    samples = [ScoredOutcome(f"t{i}", c, y) for i, (c, y) in enumerate(zip(confidences, outcomes))]
    curve = help_success_curve(samples)
    y0 = curve[0].success_rate
    pts = " ".join(f"({h:.2f},{s:.2f})" for h, s in curve)
    print(f"{label}\n  curve {pts}")
    print(f"  area {trapezoid_area(curve):.4f}  random {random_auc(y0):.4f}  perfect {perfect_auc(y0):.4f}"
          f"  -> normalised {sr_hr_auc(curve, y0):+.3f}")


show("failures are the least confident:", [0.9, 0.1, 0.8, 0.2], [1, 0, 1, 0])
show("one failure is ranked most confident:", [0.9, 0.1, 0.2, 0.8], [1, 0, 1, 0])
show("every failure ranked most confident:", [0.1, 0.9, 0.2, 0.8], [1, 0, 1, 0])

# rank correlation and its exact permutation p-value for a small sample
s = [1, 2, 3, 4, 5]
c = [1, 2, 3, 5, 4]
rho = spearman(s, c)
p = spearman_pvalue(rho, 5, c_ranks=c, s_ranks=s)
print(f"\nspearman({s}, {c}) = {rho:.2f}, p = {p.p:.4f} via {p.method}")
