import numpy as np
import pytest

from barylab.core import make_dataset
from barylab.diagnostics import (
    affine_coefficients,
    bro_mean,
    candidate_set,
    certify_beta,
    congruence_check,
    duality_gaps,
    exact_l_of_f,
    export_embeddings,
    functional_f,
    l_of_f,
    loss_trend,
    pushforward_distance,
    pushforward_matrix,
    residual_separability,
    separability_from_residuals,
    theorem2_check,
)
from barylab.nets import MlpSpec, Net, ParamStore, PotentialFamily, init_params, make_potentials
from barylab.oracles import DiscreteDistribution, discrete_ot, fixed_support_barycenter
from barylab.solver import mwb_loss
from affine import affine_instance


def linear_net(W, b, skip=False):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    flat = np.concatenate([W.ravel(), np.ravel(b)]).astype(float)
    return Net(MlpSpec(W.shape, "relu", skip), ParamStore(flat, np.zeros_like(flat)))


def identity(dim):
    return linear_net(np.eye(dim), np.zeros(dim))


def zero_potentials(dim, lam):
    return PotentialFamily(tuple(linear_net(np.zeros((dim, 1)), [0.0]) for _ in lam), np.asarray(lam, float))


def test_functional_identity_zero():
    ds = make_dataset([np.random.default_rng(0).normal(size=(5, 2))] * 2)
    assert functional_f(ds, identity(2), zero_potentials(2, [0.5, 0.5]), "euclidean") == 0.0


def test_functional_equals_mwb_on_full_dataset():
    rng = np.random.default_rng(1)
    ds = make_dataset([rng.normal(size=(7, 2)), rng.normal(size=(3, 2)), rng.normal(size=(5, 2))], [0.2, 0.3, 0.5])
    spec = MlpSpec((2, 6, 2), "relu", skip=True)
    net = Net(spec, init_params(spec, 0))
    pots = make_potentials(2, ds.weights, (5,), "tanh", [1, 2, 3])
    z, ids = ds.stacked()
    for cost in ("euclidean", "squared_euclidean"):
        assert functional_f(ds, net, pots, cost) == pytest.approx(mwb_loss(z, ids, net, pots, cost), rel=1e-13)


def test_functional_hand_value():
    # K=1 so f = 0; T(z) = z + 1 in 1-d; squared cost: mean of 1
    ds = make_dataset([[[0.0], [2.0]]])
    assert functional_f(ds, linear_net([[1.0]], [1.0]), zero_potentials(1, [1.0]), "squared_euclidean") == 1.0


def test_l_of_f_zero_potentials():
    rng = np.random.default_rng(2)
    ds = make_dataset([rng.normal(size=(6, 2)), rng.normal(size=(4, 2))])
    pots = zero_potentials(2, ds.weights)
    cands, _ = candidate_set(ds, grid_size=0)
    assert l_of_f(ds, pots, "euclidean", cands) == 0.0
    single = make_dataset([rng.normal(size=(6, 2))])
    pots1 = make_potentials(2, [1.0], (4,), "tanh", [0])
    assert l_of_f(single, pots1, "squared_euclidean", single.sources[0]) == 0.0


def test_l_of_f_linear_hand_value():
    # two sources with one point each (z=0 and z=2), lambda=(1/2,1/2), g1(b)=b, g2(b)=0
    # f1(b) = b/2, f2(b) = -b/2; candidates {0, 1, 2}; squared cost
    # source 1: min over b of b^2 - b/2 -> 0 (b=0), 0.5, 3  => 0
    # source 2: min of (2-b)^2 + b/2 -> 4, 1.5, 1          => 1
    ds = make_dataset([[[0.0]], [[2.0]]])
    pots = PotentialFamily((linear_net([[1.0]], [0.0]), linear_net([[0.0]], [0.0])), np.array([0.5, 0.5]))
    assert l_of_f(ds, pots, "squared_euclidean", [[0.0], [1.0], [2.0]]) == pytest.approx(0.5)
    # exact infimum: b = z + a/2 gives -1/16 and 2 - 1/4 - ... computed in closed form
    a1, a2 = 0.5, -0.5
    exact = 0.5 * (-a1 * 0 - a1**2 / 4) + 0.5 * (-a2 * 2 - a2**2 / 4)
    assert exact_l_of_f(ds, pots, "squared_euclidean") == pytest.approx(exact)


def test_affine_coefficients():
    pots = PotentialFamily((linear_net([[1.0], [2.0]], [1.0]), linear_net([[3.0], [0.0]], [-1.0])), np.array([0.5, 0.5]))
    A, c = affine_coefficients(pots)
    np.testing.assert_allclose(A, [[-1.0, 1.0], [1.0, -1.0]])
    np.testing.assert_allclose(c, [1.0, -1.0])
    b = np.random.default_rng(0).normal(size=(5, 2))
    np.testing.assert_allclose(pots.values(b), b @ A.T + c, atol=1e-14)
    assert affine_coefficients(make_potentials(2, [0.5, 0.5], (3,), "tanh", [0, 1])) is None


def test_gaps_single_source_identity():
    rng = np.random.default_rng(3)
    ds = make_dataset([rng.normal(size=(20, 2))])
    pots = make_potentials(2, [1.0], (8,), "tanh", [0])
    rep = duality_gaps(ds, identity(2), pots, ds.sources[0], "squared_euclidean")
    assert rep.e1 == pytest.approx(0.0, abs=1e-12)
    assert rep.e2 == pytest.approx(0.0, abs=1e-9)
    assert rep.beta == 2.0


def test_gaps_untrained_zero_potentials():
    rng = np.random.default_rng(4)
    ds = make_dataset([rng.normal(size=(8, 2)) - 2, rng.normal(size=(8, 2)) + 2])
    spec = MlpSpec((2, 6, 2), "relu")
    net = Net(spec, init_params(spec, 1))
    pots = zero_potentials(2, ds.weights)
    support = np.concatenate(ds.sources)[::2]
    for cost in ("euclidean", "squared_euclidean"):
        rep = duality_gaps(ds, net, pots, support, cost)
        expected = sum(0.5 * np.mean(discrete_cost(z, net(z), cost)) for z in ds.sources)
        assert rep.e1 == pytest.approx(expected)
        _, lstar = fixed_support_barycenter([DiscreteDistribution.uniform(z) for z in ds.sources], ds.weights,
                                            support, cost)
        assert rep.e2 == pytest.approx(lstar, abs=1e-12) and rep.e2 >= 0


def discrete_cost(z, b, cost):
    d2 = ((z - b) ** 2).sum(axis=1)
    return d2 if cost == "squared_euclidean" else np.sqrt(d2)


def test_gap_report_euclidean_has_no_bound_fields():
    ds = make_dataset([[[0.0, 0.0]], [[1.0, 0.0]]])
    rep = duality_gaps(ds, identity(2), zero_potentials(2, ds.weights), [[0.5, 0.0]], "euclidean").to_dict()
    assert "bound_lhs" not in rep and "holds" not in rep
    assert rep["warning"] and rep["beta"] is None


def test_gaps_support_cap():
    ds = make_dataset([[[0.0]]])
    with pytest.raises(ValueError):
        duality_gaps(ds, identity(1), zero_potentials(1, [1.0]), np.zeros((65, 1)), "euclidean")


def test_certify_beta():
    pots = zero_potentials(2, [0.5, 0.5])
    assert certify_beta(pots, "squared_euclidean") == 2.0
    assert certify_beta(pots, "euclidean") is None
    relu = PotentialFamily(tuple(Net(MlpSpec((2, 3, 1), "relu"), init_params(MlpSpec((2, 3, 1), "relu"), s))
                                 for s in range(2)), np.array([0.5, 0.5]))
    assert certify_beta(relu, "squared_euclidean") is None
    tiny = make_potentials(2, [0.5, 0.5], (3,), "tanh", [0, 1])
    beta = certify_beta(tiny, "squared_euclidean")
    assert beta is None or 0 < beta < 2


def test_map_bound_single_dirac():
    ds = make_dataset([[[0.0]]])
    T = linear_net([[1.0]], [1.0])  # T(0) = 1
    rep = theorem2_check(ds, T, zero_potentials(1, [1.0]), [np.array([[0.0]])], beta=2.0)
    assert rep.e1 == pytest.approx(1.0)
    assert rep.e2 == pytest.approx(0.0, abs=1e-12)
    assert rep.bound_lhs == pytest.approx(1.0)
    assert rep.bound_rhs == pytest.approx(2.0)
    assert rep.holds is True


def test_map_bound_true_map_has_zero_lhs():
    inst = affine_instance(0, use_true_map=True)
    rep = theorem2_check(*inst)
    assert rep.bound_lhs == pytest.approx(0.0, abs=1e-12)
    assert rep.holds is True


def test_map_bound_randomised_affine():
    for seed in range(20):
        rep = theorem2_check(*affine_instance(seed))
        assert rep.inner == "exact_affine" and rep.beta == 2.0
        assert rep.holds, (seed, rep)


def test_map_bound_refuses_uncertified_beta():
    ds = make_dataset([[[0.0], [1.0]], [[2.0], [3.0]]])
    relu = PotentialFamily(tuple(Net(MlpSpec((1, 3, 1), "relu"), init_params(MlpSpec((1, 3, 1), "relu"), s))
                                 for s in range(2)), np.array([0.5, 0.5]))
    rep = theorem2_check(ds, identity(1), relu, [np.array([[1.0], [2.0]])] * 2)
    assert rep.holds is None and rep.warning
    assert "holds" not in rep.to_dict()


def test_pushforward_distances():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(30, 2))
    ds = make_dataset([z, z + np.array([3.0, 4.0])])
    spec = MlpSpec((2, 6, 2), "relu", skip=True)
    net = Net(spec, init_params(spec, 2))
    assert pushforward_distance(net, ds, 1, 1) == 0.0
    same = make_dataset([z, z.copy()])
    assert pushforward_distance(net, same, 0, 1) == pytest.approx(0.0, abs=1e-9)
    # identity map: the translation is recovered exactly
    assert pushforward_distance(identity(2), ds, 0, 1) == pytest.approx(5.0, abs=1e-9)
    assert pushforward_distance(identity(2), ds, 0, 1, order="W1") == pytest.approx(5.0, abs=1e-9)
    M = pushforward_matrix(net, ds)
    assert M[0, 0] == M[1, 1] == 0.0 and M[0, 1] == M[1, 0]
    with pytest.raises(IndexError):
        pushforward_distance(net, ds, 0, 2)


def test_separability():
    rng = np.random.default_rng(6)
    consts = [np.tile(c, (20, 1)) for c in ([0.0, 0.0], [5.0, 0.0], [0.0, 5.0])]
    assert separability_from_residuals(consts) == 1.0
    same = [rng.normal(size=(200, 2)) for _ in range(3)]
    assert abs(separability_from_residuals(same) - 1 / 3) < 0.15
    z = [rng.normal(size=(30, 2)) + 10 * k for k in range(3)]
    assert residual_separability(linear_net(np.zeros((2, 2)), np.zeros(2)), make_dataset(z)) == 1.0


def test_congruence_probes():
    lam = np.array([0.1, 0.6, 0.3])
    pots = make_potentials(2, lam, (16, 16), "tanh", [4, 5, 6])
    assert congruence_check(pots, 1000, 0) <= 1e-9
    assert congruence_check(make_potentials(2, [1.0], (4,), "tanh", [0]), 10, 0) == 0.0
    with pytest.raises(ValueError):
        congruence_check(pots, 0)


def test_embeddings_export(tmp_path):
    rng = np.random.default_rng(7)
    ds = make_dataset([rng.normal(size=(4, 3)), rng.normal(size=(6, 3))])
    spec = MlpSpec((3, 5, 3), "relu", skip=True)
    net = Net(spec, init_params(spec, 0))
    rows = export_embeddings(net, ds, tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert rows == 10 * 3 == len(lines) - 1
    assert lines[0] == "source_id,kind,x1,x2,x3"
    assert {l.split(",")[0] for l in lines[1:]} == {"1", "2"}
    assert 0.0 <= bro_mean(net, ds) <= 1.0


def test_loss_trend():
    rng = np.random.default_rng(8)
    flat = [{"loss_T": 1.0 + 0.01 * rng.normal()} for _ in range(1000)]
    assert loss_trend(flat)["status"] == "pass"
    rising = [{"loss_T": 0.01 * i} for i in range(1000)]
    assert loss_trend(rising)["status"] == "warn"


def test_grid_route_brackets_exact_infimum():
    from barylab.diagnostics import _f_bounds, grid_error

    for seed in range(30):
        ds, net, pots, _, _ = affine_instance(seed)
        if ds.dim > 2:
            continue
        exact = exact_l_of_f(ds, pots, "squared_euclidean")
        pad = max(L for L, _ in _f_bounds(pots)) / 2
        cands, spacing = candidate_set(ds, [net(s) for s in ds.sources], 33, pad=pad)
        approx = l_of_f(ds, pots, "squared_euclidean", cands)
        err = grid_error(pots, "squared_euclidean", spacing, ds.dim)
        assert exact - 1e-12 <= approx <= exact + err + 1e-12
