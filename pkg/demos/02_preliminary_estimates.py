"""Preliminary estimates of population size, a stratum proportion and a
mean, with jackknife variances and confidence intervals.

Run with ``python3 demos/02_preliminary_estimates.py``.
"""

import numpy as np

from linktrace import (
    DesignParams,
    count_statistics,
    draw_sample,
    generate_synthetic,
    mean_estimate,
    proportion_estimate,
    size_estimate,
    stratum_size_estimates,
    surrogate_spec,
)

pop = generate_synthetic(surrogate_spec(), seed=1)
sample = draw_sample(pop, DesignParams.uniform(pop.K, 0.15, 0.2), np.random.default_rng(3))
x = sample.initial

stats = count_statistics(sample, x)
print("true stratum sizes:", pop.stratum_sizes.tolist())
print("estimated stratum sizes:", stratum_size_estimates(stats).round(1).tolist())
print("stabilized (add-one) sizes:", stratum_size_estimates(stats, stabilized=True).round(1).tolist())

# The size interval is placed on log(N - n), so it never dips below the
# number of units actually seen.
size = size_estimate(sample, x)
print(f"N = {size.point:.1f} (true {pop.N}), jackknife variance {size.variance:.1f}, "
      f"95% interval ({size.lo:.1f}, {size.hi:.1f})")

# Share of the population in stratum 2 under both jackknife scalings.
for scale in ("printed", "fpc"):
    p = proportion_estimate(sample, x, 2, scale=scale)
    print(f"proportion in stratum 2 ({scale}): {p.point:.3f}, interval ({p.lo:.3f}, {p.hi:.3f}), "
          f"true {pop.stratum_sizes[1] / pop.N:.3f}")

# Mean degree, stratified by estimated stratum sizes.
m = mean_estimate(sample, x, "degree")
print(f"mean degree {m.point:.3f}, interval ({m.lo:.3f}, {m.hi:.3f}), true {pop.response('degree').mean():.3f}")
