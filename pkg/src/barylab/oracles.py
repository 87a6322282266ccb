"""Exact optimal transport and barycenter computations on small discrete problems.

These are the ground truth used to check every learned map.  The transport
LP is solved by a transportation (network) simplex written here; the
fixed-support barycenter LP, which couples K plans through a shared marginal,
goes to HiGHS through :func:`scipy.optimize.linprog`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

MAX_ATOMS = 64
MASS_TOL = 1e-12
MARGINAL_TOL = 1e-9


class AtomCapError(ValueError):
    """A marginal exceeds the atom cap of the exact solver."""


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        m = np.asarray(self.masses, dtype=float)
        if m.shape != (len(pts),):
            raise ValueError("need one mass per atom")
        if len(pts) == 0:
            raise ValueError("distribution has no atoms")
        if np.any(m < 0):
            raise ValueError("masses must be nonnegative")
        if abs(m.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {m.sum()!r}, expected 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", m)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.masses)

    @classmethod
    def uniform(cls, points) -> "DiscreteDistribution":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        return cls(pts, np.full(len(pts), 1.0 / len(pts)))

    @classmethod
    def dirac(cls, point) -> "DiscreteDistribution":
        return cls(np.atleast_2d(np.asarray(point, dtype=float)), np.ones(1))


@dataclass(frozen=True, eq=False)
class TransportPlan:
    matrix: np.ndarray

    def check(self, p: DiscreteDistribution, q: DiscreteDistribution, tol=MARGINAL_TOL):
        pi = self.matrix
        if pi.shape != (len(p), len(q)):
            raise ValueError("plan shape does not match the marginals")
        if np.any(pi < -tol):
            raise ValueError("plan has negative entries")
        rows = np.abs(pi.sum(axis=1) - p.masses).max()
        cols = np.abs(pi.sum(axis=0) - q.masses).max()
        if max(rows, cols) > tol:
            raise ValueError(f"marginal residuals rows={rows:.3g} cols={cols:.3g}")


def cost_matrix(x: np.ndarray, y: np.ndarray, cost: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch {x.shape[1]} vs {y.shape[1]}")
    d2 = ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1)
    if cost == "squared_euclidean":
        return d2
    if cost == "euclidean":
        return np.sqrt(d2)
    raise ValueError(f"unknown cost {cost!r}")


# ---------------------------------------------------------------- simplex


def _northwest(a, b):
    m, n = len(a), len(b)
    X = np.zeros((m, n))
    basis = []
    ra, rb = a.copy(), b.copy()
    i = j = 0
    while True:
        x = min(ra[i], rb[j])
        X[i, j] = x
        basis.append((i, j))
        ra[i] -= x
        rb[j] -= x
        if i == m - 1 and j == n - 1:
            break
        # advance exactly one index so the basis stays a spanning tree
        if (ra[i] <= rb[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return X, basis


def _tree_duals(m, n, basis, C):
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    pot = np.full(m + n, np.nan)
    pot[0] = 0.0
    stack = [0]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if np.isnan(pot[w]):
                # u_i + v_j = C_ij
                pot[w] = C[v, w - m] - pot[v] if v < m else C[w, v - m] - pot[v]
                stack.append(w)
    return pot[:m], pot[m:], adj


def _tree_path(adj, src, dst):
    parent = {src: None}
    stack = [src]
    while stack:
        v = stack.pop()
        if v == dst:
            break
        for w in adj[v]:
            if w not in parent:
                parent[w] = v
                stack.append(w)
    path = [dst]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def transport_simplex(a, b, C, max_iter=100_000):
    """Solve min <C, X> over couplings of ``a`` and ``b``.

    Returns the optimal vertex plan and the MODI potentials (u, v) of the
    final basis.  Dantzig pricing, switching to Bland's rule after a run of
    degenerate pivots to rule out cycling.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    b = b * (a.sum() / b.sum())
    m, n = C.shape
    X, basis = _northwest(a, b)
    in_basis = np.zeros((m, n), dtype=bool)
    for cell in basis:
        in_basis[cell] = True
    tol = 1e-12 * max(1.0, float(np.abs(C).max()))
    degenerate_run = 0
    for _ in range(max_iter):
        u, v, adj = _tree_duals(m, n, basis, C)
        R = C - u[:, None] - v[None, :]
        R[in_basis] = 0.0
        bland = degenerate_run > m + n
        if bland:
            neg = np.flatnonzero(R.ravel() < -tol)
            if len(neg) == 0:
                return X, u, v
            flat = neg[0]
        else:
            flat = int(np.argmin(R))
            if R.flat[flat] >= -tol:
                return X, u, v
        ei, ej = divmod(flat, n)
        path = _tree_path(adj, ei, m + ej)
        cells = [
            (path[k], path[k + 1] - m) if path[k] < m else (path[k + 1], path[k] - m)
            for k in range(len(path) - 1)
        ]
        # walking back from the entering column the signs alternate -, +, -, ...
        minus = cells[::-1][0::2]
        plus = cells[::-1][1::2]
        flows = [X[c] for c in minus]
        theta = min(flows)
        if bland:
            cand = [c for c, f in zip(minus, flows) if f == theta]
            leave = min(cand)
        else:
            leave = minus[int(np.argmin(flows))]
        degenerate_run = degenerate_run + 1 if theta == 0 else 0
        for c in minus:
            X[c] -= theta
        for c in plus:
            X[c] += theta
        X[ei, ej] = theta
        X[leave] = 0.0
        in_basis[leave] = False
        in_basis[ei, ej] = True
        basis.remove(leave)
        basis.append((ei, ej))
    raise OracleError("transport simplex did not converge")


def discrete_ot(
    p: DiscreteDistribution,
    q: DiscreteDistribution,
    cost: str = "euclidean",
    max_atoms: int | None = MAX_ATOMS,
) -> tuple[float, TransportPlan]:
    """Exact OT value and an optimal vertex plan between two discrete distributions."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch {p.dim} vs {q.dim}")
    if max_atoms is not None and max(len(p), len(q)) > max_atoms:
        raise AtomCapError(f"{max(len(p), len(q))} atoms exceed the cap of {max_atoms}")
    C = cost_matrix(p.points, q.points, cost)
    X, _, _ = transport_simplex(p.masses, q.masses, C)
    plan = TransportPlan(X)
    try:
        plan.check(p, q)
    except ValueError as exc:
        raise OracleError(f"numerical failure: {exc}") from None
    return float((X * C).sum()), plan


def dual_from_plan(
    p: DiscreteDistribution,
    q: DiscreteDistribution,
    cost: str,
    plan: TransportPlan,
    gap_tol: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray]:
    """Kantorovich potentials complementary to ``plan``.

    Solves ``phi_i + f_j <= C_ij`` with equality on the support of the plan as
    a shortest-path problem (Bellman-Ford from a virtual root): rows carry
    ``phi``, columns carry ``-f``, arcs col->row have weight ``C_ij`` and arcs
    row->col on the support have weight ``-C_ij``.  A negative cycle means the
    plan is not optimal.
    """
    C = cost_matrix(p.points, q.points, cost)
    pi = plan.matrix
    m, n = C.shape
    supp = pi > MASS_TOL
    d_row = np.zeros(m)
    d_col = np.zeros(n)
    eps = 1e-13 * max(1.0, float(np.abs(C).max()))
    neg_C = np.where(supp, -C, np.inf)
    for _ in range(m + n + 2):
        new_row = np.minimum(d_row, (d_col[None, :] + C).min(axis=1))
        new_col = np.minimum(d_col, (new_row[:, None] + neg_C).min(axis=0))
        changed = np.any(new_row < d_row - eps) or np.any(new_col < d_col - eps)
        d_row, d_col = new_row, new_col
        if not changed:
            break
    else:
        raise OracleError("plan is not optimal: negative cycle in the residual graph")
    phi, f = d_row, -d_col
    primal = float((pi * C).sum())
    dual = float(p.masses @ phi + q.masses @ f)
    if abs(primal - dual) > gap_tol * max(1.0, abs(primal)):
        raise OracleError(f"plan is not optimal: duality gap {abs(primal - dual):.3g}")
    return phi, f


def _order(order) -> int:
    table = {1: 1, 2: 2, "W1": 1, "W2": 2, "w1": 1, "w2": 2}
    if order not in table:
        raise ValueError(f"order must be W1 or W2, got {order!r}")
    return table[order]


def wasserstein_1d(p: DiscreteDistribution, q: DiscreteDistribution, order="W1") -> float:
    """Transport cost between 1-d distributions via quantile functions.

    ``order="W1"`` returns W1 = int |F_p^-1 - F_q^-1|; ``order="W2"`` returns
    the squared distance W2^2 = int (F_p^-1 - F_q^-1)^2, i.e. the OT value for
    the squared cost.  The integrand is piecewise constant on the merged mass
    breakpoints, so the sum is exact.
    """
    k = _order(order)
    if p.dim != 1 or q.dim != 1:
        raise ValueError("wasserstein_1d needs 1-d distributions")
    ip = np.argsort(p.points[:, 0], kind="stable")
    iq = np.argsort(q.points[:, 0], kind="stable")
    x, wx = p.points[ip, 0], p.masses[ip]
    y, wy = q.points[iq, 0], q.masses[iq]
    cx, cy = np.cumsum(wx), np.cumsum(wy)
    cx[-1] = cy[-1] = 1.0
    t = np.union1d(cx, cy)
    t = t[t > 0]
    lo = np.concatenate([[0.0], t[:-1]])
    dt = t - lo
    mid = 0.5 * (lo + t)
    qx = x[np.minimum(np.searchsorted(cx, mid), len(x) - 1)]
    qy = y[np.minimum(np.searchsorted(cy, mid), len(y) - 1)]
    return float((dt * np.abs(qx - qy) ** k).sum())


def brute_force_ot(p: DiscreteDistribution, q: DiscreteDistribution, cost: str = "euclidean") -> float:
    """Minimum over assignments for equal-size uniform distributions (n <= 5).

    Uniform couplings of equal size have permutation matrices as vertices, so
    enumerating permutations gives the exact optimum.
    """
    n = len(p)
    if n != len(q):
        raise ValueError("brute force needs equal support sizes")
    if n > 5:
        raise AtomCapError("brute force is limited to 5 atoms")
    if not (np.allclose(p.masses, 1.0 / n, atol=1e-15) and np.allclose(q.masses, 1.0 / n, atol=1e-15)):
        raise ValueError("brute force needs uniform masses")
    C = cost_matrix(p.points, q.points, cost)
    rows = np.arange(n)
    return min(C[rows, list(perm)].sum() for perm in itertools.permutations(range(n))) / n


def fixed_support_barycenter(
    sources: list[DiscreteDistribution],
    weights,
    support,
    cost: str = "euclidean",
) -> tuple[DiscreteDistribution, float]:
    """Exact barycenter on a fixed candidate support.

    Joint LP over the barycenter masses ``q`` and one plan per source:
    minimise sum_k lambda_k <C_k, pi_k> subject to pi_k 1 = p_k and
    pi_k^T 1 = q.  Returns the barycenter and the optimal objective.
    """
    if len(sources) == 0:
        raise ValueError("need at least one source")
    lam = np.asarray(weights, dtype=float)
    if lam.shape != (len(sources),):
        raise ValueError("one weight per source required")
    S = np.asarray(support, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if len(S) == 0:
        raise ValueError("empty support")
    ns = len(S)
    costs, blocks_row, blocks_col, rhs = [], [], [], []
    offsets = [0]
    for k, src in enumerate(sources):
        C = cost_matrix(src.points, S, cost)
        costs.append(lam[k] * C.ravel())
        offsets.append(offsets[-1] + C.size)
    n_var = offsets[-1] + ns
    rows_A = []
    for k, src in enumerate(sources):
        mk = len(src)
        left = sp.csr_matrix((mk, offsets[k]))
        right = sp.csr_matrix((mk, n_var - offsets[k + 1]))
        rows_A.append(sp.hstack([left, sp.kron(sp.eye(mk), np.ones((1, ns))), right]))
        rhs.append(src.masses)
    for k, src in enumerate(sources):
        mk = len(src)
        left = sp.csr_matrix((ns, offsets[k]))
        mid = sp.csr_matrix((ns, offsets[-1] - offsets[k + 1]))
        rows_A.append(sp.hstack([left, sp.kron(np.ones((1, mk)), sp.eye(ns)), mid, -sp.eye(ns)]))
        rhs.append(np.zeros(ns))
    A = sp.vstack(rows_A).tocsr()
    c = np.concatenate(costs + [np.zeros(ns)])
    res = linprog(
        c,
        A_eq=A,
        b_eq=np.concatenate(rhs),
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise OracleError(f"barycenter LP failed: {res.message}")
    q = np.clip(res.x[offsets[-1] :], 0.0, None)
    q = q / q.sum()
    return DiscreteDistribution(S, q), float(res.fun)


def weighted_median(values, weights) -> float:
    """Lower weighted median: smallest v whose cumulative normalised weight reaches 1/2."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.size == 0:
        raise ValueError("empty input")
    if v.shape != w.shape:
        raise ValueError("values and weights must have equal length")
    if w.sum() <= 0 or np.any(w < 0):
        raise ValueError("weights must be nonnegative with positive sum")
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(w[order]) / w.sum()
    return float(v[order][np.searchsorted(cum, 0.5 - 1e-12)])


def gaussian_w2_barycenter_1d(means, stds, weights) -> tuple[float, float]:
    """Closed-form W2 barycenter of 1-d Gaussians: averaged means and stds."""
    mu = np.asarray(means, dtype=float)
    sd = np.asarray(stds, dtype=float)
    lam = np.asarray(weights, dtype=float)
    if np.any(sd <= 0):
        raise ValueError("standard deviations must be positive")
    return float(lam @ mu), float(lam @ sd)
