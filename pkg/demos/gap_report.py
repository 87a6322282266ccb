# %% [markdown]
# # Duality gaps and the map error bound
#
# With affine potentials and the squared cost the inner infimum defining L(f)
# is available in closed form, so E1 and E2 are exact.  We build one instance
# by hand, print the gap report and compare both sides of the bound.

# %%
import numpy as np

from barylab import MlpSpec, Net, ParamStore, PotentialFamily, make_dataset, theorem2_check

rng = np.random.default_rng(4)
shifts = np.array([[-1.0], [2.0]])
u = rng.normal(size=(40, 1))
data = make_dataset([u + s for s in shifts])
truth = [u + data.weights @ shifts for _ in shifts]  # T*_k(z) = z - s_k + mean shift


def affine(w, b):
    flat = np.array([w, b], dtype=float)
    return Net(MlpSpec((1, 1)), ParamStore(flat, np.zeros(2)))


# a slightly wrong map, and congruent affine potentials (weighted sum zero)
T = affine(1.1, 0.3)
a = 0.4
potentials = PotentialFamily((affine(a, 0.0), affine(-a, 0.0)), data.weights)

# %%
rep = theorem2_check(data, T, potentials, truth, beta=2.0)
for key in ("f_value", "l_of_f", "l_star", "e1", "e2", "inner", "grid_error", "bound_lhs", "bound_rhs", "holds"):
    print(f"{key:10s} {getattr(rep, key)}")
