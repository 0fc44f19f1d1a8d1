"""Build a stratified network, draw a link-tracing sample and check the
count statistics against their design expectations.

Run with ``python3 demos/01_population_and_design.py``.
"""

import numpy as np

from linktrace import (
    DesignParams,
    count_statistics,
    draw_sample,
    generate_synthetic,
    link_counts,
    surrogate_spec,
)

# A 595-unit reciprocated network with two strata of 253 and 342 units.
pop = generate_synthetic(surrogate_spec(), seed=1)
print("population:", pop.summary())

# Each unit enters the initial sample with probability 0.15; each link out
# of the initial sample is traced with probability 0.2.
params = DesignParams.uniform(pop.K, alpha=0.15, beta=0.2)
sample = draw_sample(pop, params, np.random.default_rng(0))
print(f"initial sample per stratum {sample.n0.tolist()}, final sample size {sample.n}")

stats = count_statistics(sample, sample.initial)
print("links inside the initial sample r[l, k]:\n", stats.r)
print("links leaving the initial sample s[l, k]:\n", stats.s)

# Average the counts over many draws and compare with their expectations:
# E[n0k] = a_k N_k, E[r_lk] = a_l a_k w_lk, E[s_lk] = a_l (1 - a_k) w_lk,
# with w_lk the number of links between strata (no self-loops).
alpha = params.alpha
w = link_counts(pop).w_lk - np.diag(pop.stratum_sizes)
rng = np.random.default_rng(1)
draws = [count_statistics(d, d.initial) for d in (draw_sample(pop, params, rng) for _ in range(2000))]
print("mean n0:", np.mean([s.n0 for s in draws], axis=0).round(2), "expected:", (alpha * pop.stratum_sizes).round(2))
print("mean r:", np.mean([s.r for s in draws], axis=0).round(2).tolist(),
      "expected:", (np.outer(alpha, alpha) * w).round(2).tolist())
print("mean s:", np.mean([s.s for s in draws], axis=0).round(2).tolist(),
      "expected:", (np.outer(alpha, 1 - alpha) * w).round(2).tolist())
