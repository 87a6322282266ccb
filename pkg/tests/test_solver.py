import dataclasses

import numpy as np
import pytest

from barylab.core import TrainConfig, make_dataset
from barylab.diagnostics import pushforward_distance
from barylab.disentangle import bro_loss, irc_loss
from barylab.nets import MlpSpec, Net, ParamStore, PotentialFamily, init_params
from barylab.optim import DivergenceError, rmsprop_step
from barylab.solver import (
    HISTORY_FIELDS,
    bary_terms,
    combined_bary_loss,
    init_state,
    map_update,
    mwb_loss,
    potential_update,
    sample_weights,
    train,
)

SMALL = dict(map_hidden=(16,), potential_hidden=(16,), batch_size=16)


def linear_net(W, b, skip=False):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    flat = np.concatenate([W.ravel(), np.ravel(b)]).astype(float)
    return Net(MlpSpec(W.shape, "relu", skip), ParamStore(flat, np.zeros_like(flat)))


def zero_net(spec):
    return Net(spec, ParamStore(np.zeros(spec.n_params), np.zeros(spec.n_params)))


def small_dataset(K=3, n=40, seed=0):
    rng = np.random.default_rng(seed)
    return make_dataset([rng.normal(size=(n, 2)) + 3 * k for k in range(K)])


def test_sample_weights_average_per_source():
    ids = np.array([0, 0, 0, 1, 2, 2])
    lam = np.array([0.5, 0.3, 0.2])
    x = np.array([1.0, 2.0, 3.0, 10.0, -1.0, 1.0])
    expected = 0.5 * 2.0 + 0.3 * 10.0 + 0.2 * 0.0
    assert np.mean(sample_weights(ids, lam) * x) == pytest.approx(expected)


def test_identity_map_zero_potentials():
    spec = MlpSpec((2, 8, 2), "relu", skip=True)
    pot_spec = MlpSpec((2, 4, 1), "tanh")
    pots = PotentialFamily((zero_net(pot_spec), zero_net(pot_spec)), np.array([0.5, 0.5]))
    z = np.random.default_rng(0).normal(size=(6, 2))
    for cost in ("euclidean", "squared_euclidean"):
        assert mwb_loss(z, np.arange(6) % 2, zero_net(spec), pots, cost) == 0.0


def test_single_source_is_mean_transport_cost():
    rng = np.random.default_rng(1)
    spec = MlpSpec((2, 5, 2), "relu")
    net = Net(spec, init_params(spec, 2))
    pots = PotentialFamily((Net(MlpSpec((2, 3, 1), "tanh"), init_params(MlpSpec((2, 3, 1), "tanh"), 3)),),
                           np.array([1.0]))
    z = rng.normal(size=(7, 2))
    expected = np.linalg.norm(z - net(z), axis=1).mean()
    assert mwb_loss(z, np.zeros(7, dtype=int), net, pots) == pytest.approx(expected, rel=1e-14)


def test_hand_set_instance():
    # lambda = (1/4, 3/4); T(z) = 2z + 1; g1(b) = b, g2(b) = 3; squared cost
    # mix = b/4 + 9/4, f1 = 3b/4 - 9/4, f2 = 3/4 - b/4
    # source 0: z=1 -> b=3: 4 - 0 = 4;  z=3 -> b=7: 16 - 3 = 13;  mean 8.5
    # source 1: z=-1 -> b=-1: 0 - 1 = -1
    T = linear_net([[2.0]], [1.0])
    pots = PotentialFamily((linear_net([[1.0]], [0.0]), linear_net([[0.0]], [3.0])), np.array([0.25, 0.75]))
    z = np.array([[1.0], [3.0], [-1.0]])
    ids = np.array([0, 0, 1])
    t = bary_terms(z, ids, T, pots, "squared_euclidean")
    assert t["mwb"].item() == pytest.approx(0.25 * 8.5 + 0.75 * -1.0, abs=1e-14)
    assert t["pot"].item() == pytest.approx(0.25 * 1.5 + 0.75 * 1.0, abs=1e-14)


def test_combined_loss():
    rng = np.random.default_rng(4)
    ds = small_dataset()
    cfg = TrainConfig(**SMALL, cost="squared_euclidean")
    st = init_state(ds, cfg)
    z = rng.normal(size=(9, 2))
    ids = np.arange(9) % 3
    base = mwb_loss(z, ids, st.map_net, st.potentials, cfg.cost)
    no_reg = dataclasses.replace(cfg, alpha=0.0)
    assert combined_bary_loss(z, ids, st.map_net, st.potentials, no_reg) == base
    b = st.map_net(z)
    expected = base + cfg.alpha * (irc_loss(z - b, ids, cfg.tau).item() + bro_loss(b, z - b).item()) / 9
    assert combined_bary_loss(z, ids, st.map_net, st.potentials, cfg) == pytest.approx(expected, rel=1e-12)


def test_empty_batch():
    ds = small_dataset()
    st = init_state(ds, TrainConfig(**SMALL))
    with pytest.raises(ValueError):
        mwb_loss(np.zeros((0, 2)), np.zeros(0, dtype=int), st.map_net, st.potentials)


def test_potential_update_isolation_and_descent():
    ds = small_dataset()
    cfg = TrainConfig(**SMALL, cost="squared_euclidean", lr_potentials=1e-4)
    st = init_state(ds, cfg)
    batch = (ds.stacked()[0][::5], ds.stacked()[1][::5])
    new = potential_update(st, ds, batch)
    np.testing.assert_array_equal(new.map_net.store.params, st.map_net.store.params)
    before = bary_terms(*batch, st.map_net, st.potentials, cfg.cost)["pot"].item()
    after = bary_terms(*batch, new.map_net, new.potentials, cfg.cost)["pot"].item()
    assert after <= before
    assert any(not np.array_equal(a.store.params, b.store.params)
               for a, b in zip(new.potentials.nets, st.potentials.nets))


def test_potential_update_zero_gradient_single_source():
    ds = small_dataset(K=1)
    st = init_state(ds, TrainConfig(**SMALL))
    new = potential_update(st, ds)
    np.testing.assert_array_equal(new.potentials.nets[0].store.params, st.potentials.nets[0].store.params)


def test_map_update_single_step_and_isolation():
    ds = small_dataset()
    cfg = TrainConfig(**SMALL, cost="squared_euclidean")
    st = init_state(ds, cfg)
    batch = (ds.stacked()[0][::4], ds.stacked()[1][::4])
    new = map_update(st, ds, [batch])
    for a, b in zip(new.potentials.nets, st.potentials.nets):
        np.testing.assert_array_equal(a.store.params, b.store.params)
    t = bary_terms(*batch, st.map_net, st.potentials, cfg.cost, cfg.tau, cfg.alpha, grad_map=True)
    t["total"].backward()
    manual = rmsprop_step(st.map_net.store, t["traced_map"].flat_grad(), cfg.lr_map, cfg.rmsprop_decay, cfg.rmsprop_eps)
    np.testing.assert_array_equal(new.map_net.store.params, manual.params)


def test_map_update_overfits_one_batch():
    ds = small_dataset(K=2)
    cfg = TrainConfig(map_hidden=(16,), potential_hidden=(4,), map_skip=False, alpha=0.0, lr_map=3e-3,
                      cost="squared_euclidean", inner_iters=3000)
    st = init_state(ds, cfg)
    zero = MlpSpec((2, 4, 1), "tanh")
    st = dataclasses.replace(st, potentials=PotentialFamily((zero_net(zero), zero_net(zero)), ds.weights))
    batch = (ds.stacked()[0][::8], ds.stacked()[1][::8])
    start = mwb_loss(*batch, st.map_net, st.potentials, cfg.cost)
    st = map_update(st, ds, [batch] * cfg.inner_iters)
    end = mwb_loss(*batch, st.map_net, st.potentials, cfg.cost)
    assert end < 1e-3 * start
    np.testing.assert_allclose(st.map_net(batch[0]), batch[0], atol=0.05)


def test_train_history_and_determinism():
    ds = small_dataset()
    cfg = TrainConfig(**SMALL, steps=15, seed=3)
    a, b = train(ds, cfg), train(ds, cfg)
    assert len(a.history) == 15 and a.step == 15
    assert list(a.history[0]) == list(HISTORY_FIELDS)
    assert a.history == b.history
    np.testing.assert_array_equal(a.map_net.store.params, b.map_net.store.params)
    c = train(ds, dataclasses.replace(cfg, seed=4))
    assert c.history != a.history


def test_train_resumes_from_state():
    ds = small_dataset()
    cfg = TrainConfig(**SMALL, steps=5)
    st = train(ds, cfg)
    st = train(ds, cfg, state=st)
    assert st.step == 10 and len(st.history) == 10


def test_identical_sources_map_identically():
    z = np.random.default_rng(6).normal(size=(30, 2))
    ds = make_dataset([z, z.copy()])
    st = train(ds, TrainConfig(**SMALL, steps=50))
    assert pushforward_distance(st.map_net, ds, 0, 1) < 1e-2


def test_single_source_short_run_moves_toward_identity():
    ds = small_dataset(K=1, n=64)
    z = ds.sources[0]
    cfg = TrainConfig(steps=300, alpha=0.0, cost="squared_euclidean", lr_map=1e-3)
    st0 = init_state(ds, cfg)
    st = train(ds, cfg)
    msd = lambda net: float(((z - net(z)) ** 2).sum(axis=1).mean())
    assert msd(st.map_net) < 0.1 * msd(st0.map_net)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_keeps_partial_history():
    ds = small_dataset()
    cfg = TrainConfig(**SMALL, steps=200, lr_map=1e300, lr_potentials=1e300, cost="squared_euclidean")
    with pytest.raises(DivergenceError) as info:
        train(ds, cfg)
    st = info.value.state
    assert st is not None
    assert 0 <= len(st.history) < 200
    assert all(np.isfinite(h["loss_T"]) for h in st.history)


def test_early_stop_on_plateau():
    ds = small_dataset(K=1)
    cfg = TrainConfig(**SMALL, steps=5000, alpha=0.0, early_stop=True, early_stop_window=20, early_stop_rtol=1.0)
    st = train(ds, cfg)
    assert len(st.history) == 40


def test_ascend_option_changes_direction():
    ds = small_dataset()
    batch = (ds.stacked()[0][::5], ds.stacked()[1][::5])
    st = init_state(ds, TrainConfig(**SMALL))
    up = potential_update(dataclasses.replace(st, config=TrainConfig(**SMALL, potential_direction="ascend")), ds, batch)
    down = potential_update(st, ds, batch)
    for u, d, s in zip(up.potentials.nets, down.potentials.nets, st.potentials.nets):
        np.testing.assert_allclose(u.store.params - s.store.params, -(d.store.params - s.store.params))
