"""Duality gaps, the map error bound, and embedding-quality metrics.

Notation: F(f, T) is the MWB objective, L(f) = inf_T F(f, T) and L* the
barycenter value.  E1 = F(f, T) - L(f) measures how well the map solves the
inner problem, E2 = L* - L(f) how well the potentials solve the outer one.
With a beta-strongly convex inner objective,
``sum_k lambda_k W2^2(T#P_k, T*#P_k) <= 4 / beta * (E1 + E2)``.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .core import SourceDataset
from .disentangle import EmbeddingBatch
from .nets import Net, PotentialFamily, hessian_bound, lipschitz_bound
from .oracles import MAX_ATOMS, DiscreteDistribution, cost_matrix, discrete_ot, fixed_support_barycenter

BOUND_TOL = 1e-6


def _per_source(dataset, map_net=None, map_values=None):
    if map_values is not None:
        return [np.asarray(v, dtype=float) for v in map_values]
    return [map_net(s) for s in dataset.sources]


def _pointwise_cost(z, b, cost):
    d2 = ((z - b) ** 2).sum(axis=1)
    return d2 if cost == "squared_euclidean" else np.sqrt(d2)


def functional_f(dataset: SourceDataset, map_net: Net, potentials: PotentialFamily, cost: str,
                 map_values=None) -> float:
    """F(f, T) = sum_k lambda_k mean_{z in source k} [c(z, T z) - f_k(T z)] over the full dataset."""
    outs = _per_source(dataset, map_net, map_values)
    total = 0.0
    for k, (z, b) in enumerate(zip(dataset.sources, outs)):
        fk = potentials.values(b)[:, k]
        total += dataset.weights[k] * float(np.mean(_pointwise_cost(z, b, cost) - fk))
    return total


def candidate_set(dataset: SourceDataset, map_outputs=(), grid_size: int = 33, max_grid_dim: int = 2,
                  pad: float = 0.0):
    """Dataset points, map outputs and (for D <= 2) a uniform grid over their bounding box.

    The box is widened by ``pad`` on every side.  Returns the candidates and
    the grid spacing (``None`` without a grid).
    """
    pts = [np.concatenate(dataset.sources, axis=0)] + [np.asarray(o, dtype=float) for o in map_outputs]
    allpts = np.concatenate(pts, axis=0)
    D = dataset.dim
    if D > max_grid_dim or grid_size < 2:
        return np.unique(allpts, axis=0), None
    lo, hi = allpts.min(axis=0) - pad, allpts.max(axis=0) + pad
    axes = [np.linspace(lo[d], hi[d], grid_size) for d in range(D)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, D)
    spacing = float(((hi - lo) / (grid_size - 1)).max())
    return np.unique(np.concatenate([allpts, grid], axis=0), axis=0), spacing


def affine_coefficients(potentials: PotentialFamily):
    """``(A, c)`` with ``f_k(b) = A[k] . b + c[k]`` when every f_k is affine, else ``None``.

    A single source always qualifies since congruence forces ``f_1 = 0``.
    """
    dim = potentials.nets[0].spec.n_in
    K = potentials.n_sources
    if K == 1:
        return np.zeros((1, dim)), np.zeros(1)
    if any(len(n.spec.layer_widths) != 2 for n in potentials.nets):
        return None
    G = np.array([n.store.params[:dim] for n in potentials.nets])
    g0 = np.array([n.store.params[dim] for n in potentials.nets])
    lam = potentials.weights
    return G - lam @ G, g0 - lam @ g0


def exact_l_of_f(dataset: SourceDataset, potentials: PotentialFamily, cost: str) -> float | None:
    """Closed-form L(f) for affine potentials and the squared cost, else ``None``.

    ``min_b |z - b|^2 - a.b - c`` is attained at ``b = z + a / 2`` with value
    ``-a.z - |a|^2 / 4 - c``.
    """
    coef = affine_coefficients(potentials)
    if coef is None or cost != "squared_euclidean":
        return None
    A, c = coef
    total = 0.0
    for k, z in enumerate(dataset.sources):
        total += dataset.weights[k] * float(np.mean(-(z @ A[k]) - A[k] @ A[k] / 4.0 - c[k]))
    return total


def l_of_f(dataset: SourceDataset, potentials: PotentialFamily, cost: str, candidates) -> float:
    """L(f) with the inner infimum taken over an explicit candidate set.

    Per sample this is the c-transform ``min_b [c(z, b) - f_k(b)]``.
    """
    cands = np.asarray(candidates, dtype=float)
    if len(cands) == 0:
        raise ValueError("empty candidate set")
    F = potentials.values(cands)
    total = 0.0
    for k, z in enumerate(dataset.sources):
        C = cost_matrix(z, cands, cost)
        total += dataset.weights[k] * float(np.mean((C - F[None, :, k]).min(axis=1)))
    return total


def _f_bounds(potentials: PotentialFamily):
    """(lipschitz, hessian) bounds of each congruent potential, ``None`` if unavailable."""
    lam = potentials.weights
    lips = [lipschitz_bound(n) for n in potentials.nets]
    hess = [hessian_bound(n) for n in potentials.nets]
    out = []
    for k in range(potentials.n_sources):
        coef = -lam.copy()
        coef[k] += 1.0
        L = float(np.abs(coef) @ lips)
        H = None if any(h is None for h in hess) else float(np.abs(coef) @ hess)
        out.append((L, H))
    return out


def certify_beta(potentials: PotentialFamily, cost: str) -> float | None:
    """Strong-convexity constant of ``b -> c(z, b) - f_k(b)``, or ``None`` if it cannot be certified.

    Only the squared cost is strongly convex (constant 2); the potentials'
    Hessian bound is subtracted.  Affine potentials give exactly 2.
    """
    if cost != "squared_euclidean":
        return None
    hs = [h for _, h in _f_bounds(potentials)]
    if any(h is None for h in hs):
        return None
    beta = 2.0 - max(hs)
    return beta if beta > 0 else None


def grid_error(potentials: PotentialFamily, cost: str, spacing: float | None, dim: int) -> float | None:
    """Bound on how much the candidate minimum can exceed the true infimum.

    Assumes each minimiser lies inside the gridded box: it is then within
    ``delta = spacing * sqrt(D) / 2`` of a candidate.  Squared cost:
    ``(2 + H_f) delta^2 / 2``; euclidean cost: ``(1 + Lip_f) delta``.
    """
    if spacing is None:
        return None
    delta = spacing * np.sqrt(dim) / 2.0
    bounds = _f_bounds(potentials)
    if cost == "squared_euclidean":
        if any(h is None for _, h in bounds):
            return None
        return float(max((2.0 + h) * delta**2 / 2.0 for _, h in bounds))
    return float(max((1.0 + L) * delta for L, _ in bounds))


@dataclass
class GapReport:
    f_value: float
    l_of_f: float
    l_star: float
    e1: float
    e2: float
    cost: str
    candidate_grid_size: int
    n_candidates: int
    inner: str = "grid"
    grid_spacing: float | None = None
    grid_error: float | None = None
    beta: float | None = None
    bound_lhs: float | None = None
    bound_rhs: float | None = None
    holds: bool | None = None
    warning: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.cost != "squared_euclidean" or self.beta is None:
            for key in ("bound_lhs", "bound_rhs", "holds"):
                d.pop(key)
        return d


def duality_gaps(
    dataset: SourceDataset,
    map_net: Net,
    potentials: PotentialFamily,
    oracle_support,
    cost: str,
    grid_size: int = 33,
    map_values=None,
) -> GapReport:
    """E1, E2 and their ingredients; L* comes from the exact fixed-support LP."""
    support = np.asarray(oracle_support, dtype=float)
    if support.ndim == 1:
        support = support[:, None]
    if len(support) > MAX_ATOMS:
        raise ValueError(f"oracle support has {len(support)} atoms, cap is {MAX_ATOMS}")
    outs = _per_source(dataset, map_net, map_values)
    F = functional_f(dataset, map_net, potentials, cost, outs)
    exact = exact_l_of_f(dataset, potentials, cost)
    # under the squared cost a minimiser sits within Lip(f)/2 of its sample
    pad = max(Lf for Lf, _ in _f_bounds(potentials)) / 2.0 if cost == "squared_euclidean" else 0.0
    cands, spacing = candidate_set(dataset, outs, grid_size, pad=pad)
    if exact is not None:
        L, inner, err = exact, "exact_affine", 0.0
    else:
        L = l_of_f(dataset, potentials, cost, cands)
        inner = "grid" if spacing is not None else "candidates"
        err = grid_error(potentials, cost, spacing, dataset.dim)
    sources = [DiscreteDistribution.uniform(s) for s in dataset.sources]
    _, l_star = fixed_support_barycenter(sources, dataset.weights, support, cost)
    beta = certify_beta(potentials, cost)
    warning = None
    if cost != "squared_euclidean":
        warning = "euclidean cost is not strongly convex; no map error bound"
    elif beta is None:
        warning = "strong convexity could not be certified for these potentials"
    return GapReport(
        f_value=F,
        l_of_f=L,
        l_star=l_star,
        e1=F - L,
        e2=l_star - L,
        cost=cost,
        candidate_grid_size=grid_size if spacing is not None else 0,
        n_candidates=len(cands),
        inner=inner,
        grid_spacing=spacing,
        grid_error=err,
        beta=beta,
        warning=warning,
    )


def _subsample(n, cap, rng):
    return np.arange(n) if n <= cap else np.sort(rng.choice(n, cap, replace=False))


def theorem2_check(
    dataset: SourceDataset,
    map_net: Net,
    potentials: PotentialFamily,
    true_map_values,
    beta: float | None = None,
    oracle_support=None,
    grid_size: int = 33,
    map_values=None,
    seed: int = 0,
) -> GapReport:
    """Evaluate both sides of the map error bound for the squared cost.

    ``true_map_values[k]`` holds T*(z) for the points of source k.  The
    default oracle support is the set of those images, which is the support
    of the true barycenter, so the LP returns L* exactly.  The left side uses
    exact OT between T#P_k and T*#P_k on common (sub)samples of <= 64 points.
    ``holds`` is ``None`` when beta cannot be certified.
    """
    cost = "squared_euclidean"
    truth = [np.asarray(t, dtype=float) for t in true_map_values]
    outs = _per_source(dataset, map_net, map_values)
    if oracle_support is None:
        oracle_support = np.unique(np.concatenate(truth, axis=0), axis=0)
    rep = duality_gaps(dataset, map_net, potentials, oracle_support, cost, grid_size, outs)
    if beta is None:
        beta = rep.beta
    rep.beta = beta
    if beta is None or beta <= 0:
        rep.warning = "strong convexity could not be certified; gaps only"
        return rep
    if rep.grid_error is None:
        rep.warning = "inner infimum is not certified without a grid; gaps only"
        return rep
    rng = np.random.default_rng(seed)
    lhs = 0.0
    for k, (b, t) in enumerate(zip(outs, truth)):
        idx = _subsample(len(b), MAX_ATOMS, rng)
        val, _ = discrete_ot(DiscreteDistribution.uniform(b[idx]), DiscreteDistribution.uniform(t[idx]), cost)
        lhs += dataset.weights[k] * val
    rhs = 4.0 / beta * (rep.e1 + rep.e2)
    # the candidate minimum overestimates L(f), which can only shrink the right side
    slack = BOUND_TOL + 8.0 / beta * rep.grid_error
    rep.bound_lhs, rep.bound_rhs = lhs, rhs
    rep.holds = bool(lhs <= rhs + slack)
    return rep


# ------------------------------------------------------------- pushforwards


def empirical_distance(x, y, order="W2") -> float:
    """Exact W1 or W2 (not squared) between uniform empirical measures of <= 64 points."""
    cost = "euclidean" if order in ("W1", 1) else "squared_euclidean"
    val, _ = discrete_ot(DiscreteDistribution.uniform(x), DiscreteDistribution.uniform(y), cost)
    return val if cost == "euclidean" else float(np.sqrt(max(val, 0.0)))


def pushforward_distance(map_net: Net, dataset: SourceDataset, k: int, j: int, order="W2",
                         n_max: int = MAX_ATOMS, seed: int = 0) -> float:
    """Distance between T#P_k and T#P_j on seeded subsamples of at most ``n_max`` points."""
    K = dataset.n_sources
    if not (0 <= k < K and 0 <= j < K):
        raise IndexError(f"source index out of range for K={K}")
    if k == j:
        return 0.0
    rng = np.random.default_rng(seed)
    zk, zj = dataset.sources[k], dataset.sources[j]
    bk = map_net(zk[_subsample(len(zk), n_max, rng)])
    bj = map_net(zj[_subsample(len(zj), n_max, rng)])
    return empirical_distance(bk, bj, order)


def pushforward_matrix(map_net: Net, dataset: SourceDataset, order="W2", n_max=MAX_ATOMS, seed=0) -> np.ndarray:
    K = dataset.n_sources
    M = np.zeros((K, K))
    for k in range(K):
        for j in range(k + 1, K):
            M[k, j] = M[j, k] = pushforward_distance(map_net, dataset, k, j, order, n_max, seed)
    return M


# ------------------------------------------------------ embedding structure


def _split(n, rng, frac=0.8):
    perm = rng.permutation(n)
    cut = max(1, min(n - 1, int(round(frac * n)))) if n > 1 else n
    return perm[:cut], perm[cut:]


def separability_from_residuals(residuals, seed: int = 0) -> float:
    """Nearest-centroid accuracy of the source label on a seeded 80/20 split per source."""
    rng = np.random.default_rng(seed)
    if len(residuals) < 2:
        raise ValueError("need at least two sources")
    cents, tests = [], []
    for k, r in enumerate(residuals):
        tr, te = _split(len(r), rng)
        cents.append(r[tr].mean(axis=0))
        tests.append((r[te], k))
    C = np.array(cents)
    correct = total = 0
    for r, k in tests:
        if len(r) == 0:
            continue
        d = ((r[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)
        correct += int((d.argmin(axis=1) == k).sum())
        total += len(r)
    return correct / total


def residual_separability(map_net: Net, dataset: SourceDataset, seed: int = 0) -> float:
    return separability_from_residuals([s - map_net(s) for s in dataset.sources], seed)


def congruence_check(potentials: PotentialFamily, n_probes: int, rng=None, scale: float = 5.0) -> float:
    """Largest |sum_k lambda_k f_k(b)| over Gaussian probe points."""
    if n_probes < 1:
        raise ValueError("need at least one probe")
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    dim = potentials.nets[0].spec.n_in
    b = scale * gen.standard_normal((n_probes, dim))
    return float(np.abs(potentials.values(b) @ potentials.weights).max())


def embedding_batch(map_net: Net, dataset: SourceDataset) -> EmbeddingBatch:
    z, ids = dataset.stacked()
    return EmbeddingBatch(z, map_net(z), ids)


def bro_mean(map_net: Net, dataset: SourceDataset) -> float:
    """Mean squared cosine between barycenter and residual embeddings over all pairs."""
    return embedding_batch(map_net, dataset).mean_sq_cosine()


def export_embeddings(map_net: Net, dataset: SourceDataset, path) -> int:
    """Write ``source_id, kind, x1..xD`` rows (kinds z, b, r; 1-based ids). Returns the row count."""
    batch = embedding_batch(map_net, dataset)
    header = ["source_id", "kind"] + [f"x{i + 1}" for i in range(dataset.dim)]
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for kind, arr in (("z", batch.z), ("b", batch.b), ("r", batch.r)):
            for sid, row in zip(batch.source_ids, arr):
                w.writerow([int(sid) + 1, kind, *map(repr, row.tolist())])
                rows += 1
    return rows


def loss_trend(history, frac: float = 0.1, window: int = 50) -> dict:
    """Check that the moving average of L^T is non-increasing over the final window.

    The band is three standard errors of a ``window``-point average of the
    per-step losses.  Returns the verdict and its ingredients; it is a soft
    report, not a gate.
    """
    vals = np.array([h["loss_T"] for h in history], dtype=float)
    tail = vals[-max(int(len(vals) * frac), window + 1):]
    w = min(window, len(tail))
    ma = np.convolve(tail, np.ones(w) / w, mode="valid")
    sigma = float(np.std(tail))
    band = 3.0 * sigma / np.sqrt(w)
    running_min = np.minimum.accumulate(ma)
    excess = float((ma - running_min).max()) if len(ma) else 0.0
    return {"status": "pass" if excess <= band else "warn", "max_rise": excess, "band": band,
            "ma_start": float(ma[0]), "ma_end": float(ma[-1])}
