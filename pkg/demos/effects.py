"""
Estimate the total, direct and indirect effects on one simulated sample and
compare them with the known truths; then the dynamic treatment effect with a
binary mediator.

    python3 demos/effects.py [n]
"""

import sys

from seqid.dgp import TRUE_DYNAMIC_ATE, TRUE_EFFECTS, DgpConfig, simulate
from seqid.effects import EFFECT_NAMES, TrimPolicy, estimate_mediation, estimate_dynamic_ate

n = int(sys.argv[1]) if len(sys.argv) > 1 else 4000

est = estimate_mediation(simulate(DgpConfig(n=n, seed=5)), TrimPolicy(), seed=1)
print(f"{'effect':8s} {'estimate':>9s} {'se':>7s} {'truth':>7s}")
for name, value, se in zip(EFFECT_NAMES, est.values(), est.ses):
    print(f"{name:8s} {value:9.3f} {se:7.3f} {TRUE_EFFECTS[name]:7.3f}")
print(f"trimmed observations: {est.n_trimmed}")

data = simulate(DgpConfig(n=n, seed=5, binary_mediator=True))
ate, se, pval, trimmed = estimate_dynamic_ate(data, TrimPolicy(), seed=1)
print(f"E[Y(1,1)-Y(0,0)] = {ate:.3f} (se {se:.3f}), truth {TRUE_DYNAMIC_ATE}")
