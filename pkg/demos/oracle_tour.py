# %% [markdown]
# # Exact transport oracles
#
# Every neural number in barylab is checked against an exact solver.  This
# script walks through the three of them on tiny inputs where the answers can
# be read off by hand.

# %%
import numpy as np

from barylab import DiscreteDistribution, brute_force_ot, discrete_ot, dual_from_plan, fixed_support_barycenter
from barylab import wasserstein_1d

# %% [markdown]
# Two atoms of mass 1/2 each: moving 0 -> 1 and 2 -> 3 costs 1/2 + 1/2
# under the euclidean cost.

# %%
p = DiscreteDistribution.uniform([[0.0], [2.0]])
q = DiscreteDistribution.uniform([[1.0], [3.0]])
value, plan = discrete_ot(p, q, "euclidean")
print("simplex   ", value)
print("brute     ", brute_force_ot(p, q, "euclidean"))
print("quantiles ", wasserstein_1d(p, q, "W1"))
print(plan.matrix)

# %% [markdown]
# Kantorovich potentials recovered from the plan close the duality gap.

# %%
phi, f = dual_from_plan(p, q, "euclidean", plan)
print("phi", phi, "f", f, "dual objective", p.masses @ phi + q.masses @ f)

# %% [markdown]
# Random 2-d instance with non-uniform masses under the squared cost.

# %%
rng = np.random.default_rng(0)
p = DiscreteDistribution(rng.normal(size=(12, 2)), rng.dirichlet(np.ones(12)))
q = DiscreteDistribution(rng.normal(size=(9, 2)) + 1, rng.dirichlet(np.ones(9)))
value, plan = discrete_ot(p, q, "squared_euclidean")
phi, f = dual_from_plan(p, q, "squared_euclidean", plan)
print(f"primal {value:.12f}  dual {p.masses @ phi + q.masses @ f:.12f}")

# %% [markdown]
# Fixed-support barycenter of two 1-d Diracs at -1 and 1 with weights 1/4 and
# 3/4.  Under the squared cost the optimum is the Dirac at the weighted mean,
# 0.5, with value 1/4 * 1.5^2 + 3/4 * 0.5^2 = 0.75.

# %%
sources = [DiscreteDistribution.uniform([[-1.0]]), DiscreteDistribution.uniform([[1.0]])]
support = np.linspace(-1, 1, 9)[:, None]
q, val = fixed_support_barycenter(sources, [0.25, 0.75], support, "squared_euclidean")
print("barycenter masses", np.round(q.masses, 6), "value", val)
