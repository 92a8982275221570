"""A small Monte Carlo study of bias and interval coverage."""

import numpy as np

from udid.baseline_pt import pt_att_regression
from udid.dgp import ContinuousOrec, simulate
from udid.estimators import fit_udid

reps = 200
hits = {"glm": 0, "ipw": 0, "dr": 0}
means = {k: 0.0 for k in (*hits, "pt-reg")}
for rep in range(reps):
    panel, att = simulate(ContinuousOrec(n=2000, seed=1000 + rep, sigma_eps1=1.5, effect=-1.0))
    fit = fit_udid(panel)
    for name in hits:
        hits[name] += fit[name].ci_lo <= att <= fit[name].ci_hi
        means[name] += fit[name].estimate / reps
    means["pt-reg"] += pt_att_regression(panel).estimate / reps

print(f"{reps} replications, true ATT -1")
for name, mean in means.items():
    cover = f"  coverage {100 * hits[name] / reps:.1f}%" if name in hits else ""
    print(f"  {name:<7} mean {mean:+.3f}{cover}")
