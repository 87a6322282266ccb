"""Randomised squared-cost instances with affine potentials and a known optimal map.

Sources share one point cloud up to scale and shift, so the empirical
barycenter and the optimal maps onto it are known exactly.
"""

import numpy as np

from barylab.core import make_dataset
from barylab.nets import MlpSpec, Net, ParamStore, PotentialFamily, init_params


def affine_instance(seed, use_true_map=False):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 3))
    K = int(rng.integers(1, 4))
    n = int(rng.integers(3, 12))
    u = rng.normal(size=(n, dim))
    scales = rng.uniform(0.5, 2.0, size=K)
    shifts = rng.normal(size=(K, dim)) * 3
    lam = rng.dirichlet(np.ones(K))
    ds = make_dataset([s * u + m for s, m in zip(scales, shifts)], lam)
    s_bar, m_bar = lam @ scales, lam @ shifts
    truth = [s_bar * u + m_bar for _ in range(K)]
    pot_spec = MlpSpec((dim, 1))
    pots = []
    for _ in range(K):
        flat = rng.normal(size=pot_spec.n_params) * rng.uniform(0.0, 3.0)
        pots.append(Net(pot_spec, ParamStore(flat, np.zeros_like(flat))))
    pots = PotentialFamily(tuple(pots), lam)
    if use_true_map:
        return ds, None, pots, truth, 2.0, None, 33, truth
    spec = MlpSpec((dim, 8, dim), "relu", skip=True)
    net = Net(spec, init_params(spec, rng.integers(2**32)))
    return ds, net, pots, truth, 2.0
