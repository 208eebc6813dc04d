"""
Simulate data under the null and under two alternatives, then run the test.

A median over several sample splits is reported, as one would do on real
data, together with the first-stage relevance check.

    python3 demos/simulate_and_test.py [n]
"""

import sys

from seqid.dgp import DgpConfig, simulate
from seqid.idtest import TestSetup, first_stage_check, median_run

n = int(sys.argv[1]) if len(sys.argv) > 1 else 4000
setup = TestSetup(folds=2)

for label, delta, gamma in [("null", 0.0, 0.0), ("confounded mediator", 1.0, 0.0),
                            ("instrument affects Y", 0.0, 0.2)]:
    data = simulate(DgpConfig(n=n, p=200, delta=delta, gamma=gamma, seed=11))
    res = median_run(data, setup, runs=5, seed=3)
    print(f"{label:22s} theta={res.theta_hat:+.4f} se={res.se:.4f} p={res.pval:.3f}")

p_dz1, p_mz2 = first_stage_check(simulate(DgpConfig(n=n, seed=11)), setup)[:2]
print(f"first stage: p(D~Z1)={p_dz1:.2g} p(M~Z2)={p_mz2:.2g}")
