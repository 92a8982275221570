"""Checking that the covariate-outcome relation among controls is stable over time.

The first dataset satisfies stability. In the second, the link between the
covariate and the outcome weakens after baseline, and the linear-term test flags it.
"""

import numpy as np

from udid import PanelDataset
from udid.dgp import ContinuousOrec, simulate
from udid.sensitivity import covariate_invariance


def show(label, panel):
    rep = covariate_invariance(panel, ["income", "age"][: panel.p])
    print(label)
    for name, term, stat, reject in rep.rows():
        print(f"  {name:<7}{term:<10}{stat:>8.3f}  {'reject' if reject else ''}")


stable, _ = simulate(ContinuousOrec(n=600, seed=21, n_cov=2, cov_shift=0.5))
show("stable relation:", stable)

rng = np.random.default_rng(22)
n = 600
x = rng.normal(size=n)
y0 = 1.0 * x + rng.normal(size=n)
y1 = 0.3 * x + rng.normal(size=n)
show("relation drifts:", PanelDataset(y0, y1, np.r_[np.zeros(400), np.ones(200)], x[:, None]))
