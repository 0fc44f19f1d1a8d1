"""Reorderings of a sample, exact and MCMC Rao-Blackwellization, and the
same-stratum swap move that keeps the chain irreducible.

Run with ``python3 demos/03_reorderings_and_rao_blackwell.py``.
"""

import numpy as np

from linktrace import (
    DesignParams,
    Population,
    count_statistics,
    enumerate_reorderings,
    observe,
    rb_exact,
    rb_mcmc,
    stratum_size_estimates,
)


def size_point(data, initial):
    return stratum_size_estimates(count_statistics(data, initial), stabilized=True).sum()


# Units 3 and 4 are linked only to unit 5.  The sample was drawn with
# initial units {1, 4, 5}; units 2 and 3 were reached by tracing.
pop = Population.from_edges([1, 2, 3, 4, 5], [1] * 5, [(1, 2), (2, 5), (3, 5), (4, 5)], symmetrize=True)
sample = observe(pop, [1, 4, 5], [2, 3], DesignParams.uniform(1, 0.5, 0.5))

# Every assignment of roles consistent with what was observed, with its
# probability given the initial sample.
reorderings = enumerate_reorderings(sample)
weights = np.exp([lp for _, lp in reorderings])
for (v, _), w in zip(reorderings, weights / weights.sum()):
    print(f"initial {sorted(v.initial_units.tolist())}: weight {w:.3f}, N = {size_point(sample, v.initial):.2f}")

exact = rb_exact(sample, size_point)
print(f"preliminary {exact.preliminary:.3f}, exact Rao-Blackwell {exact.rb_point:.3f}")

# Swapping wave-one units with their nominators never reaches the roles
# {1, 2, 5}: both wave-one units would need unit 5 as nominator.  Mixing in
# same-stratum swaps fixes this.
for swap_prob in (0.0, 0.3):
    mc = rb_mcmc(sample, size_point, n_states=20000, rng=np.random.default_rng(0), swap_prob=swap_prob)
    print(f"MCMC with swap_prob={swap_prob}: {mc.rb_point:.3f} (acceptance {mc.acceptance_rate:.2f})")
