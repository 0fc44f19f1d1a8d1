"""Over-dispersed chain seeds and the Gelman-Rubin statistic on one sample.

Run with ``python3 demos/04_convergence_diagnostics.py``.
"""

import numpy as np

from linktrace import (
    DesignParams,
    SeedSearchConfig,
    draw_sample,
    generate_synthetic,
    original_ordering,
    rb_mcmc,
    search_overdispersed,
    size_estimate,
    surrogate_spec,
)

pop = generate_synthetic(surrogate_spec(), seed=1)
sample = draw_sample(pop, DesignParams.uniform(pop.K, 0.15, 0.2), np.random.default_rng(5))
rng = np.random.default_rng(6)
gammas = (0.9, 0.1)

# Greedy searches for unusually improbable and unusually probable
# reorderings, used as starting points for two chains.
start = original_ordering(sample)
seeds = [search_overdispersed(sample, SeedSearchConfig(3000, d, gammas), start, rng) for d in ("lower", "upper")]
for name, v in zip(("original", "lower", "upper"), [start, *seeds]):
    print(f"{name:>8} seed: log P = {v.log_p:9.2f}, N = {size_estimate(sample, v.initial).point:.1f}")

res = rb_mcmc(sample, size_estimate, n_states=2000, gammas=gammas, rng=rng, seeds=seeds)
print(f"preliminary {res.preliminary:.1f}, Rao-Blackwell {res.rb_point:.1f}")
print(f"acceptance {res.acceptance_rate:.3f}, Gelman-Rubin {res.gelman_rubin:.3f} (values near 1 suggest convergence)")
