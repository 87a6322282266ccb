"""MLPs for the barycenter map and the congruent potential family."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths (input first, output last) and the hidden activation.

    The output layer is always linear.  ``skip`` adds the input to the output,
    which requires equal input and output widths.
    """

    layer_widths: tuple[int, ...]
    activation: str = "relu"
    skip: bool = False

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"need at least two positive layer widths, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.skip and widths[0] != widths[-1]:
            raise ValueError("skip connection needs equal input and output widths")

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]

    @property
    def shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        w = self.layer_widths
        return [((w[i], w[i + 1]), (w[i + 1],)) for i in range(len(w) - 1)]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for (a, b), _ in self.shapes)

    def to_dict(self) -> dict:
        return {"layer_widths": list(self.layer_widths), "activation": self.activation, "skip": self.skip}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["layer_widths"]), d.get("activation", "relu"), bool(d.get("skip", False)))


@dataclass(frozen=True, eq=False)
class ParamStore:
    """Flat parameter vector (W1, b1, W2, b2, ...) plus its RMSProp accumulator."""

    params: np.ndarray
    accum: np.ndarray

    def __post_init__(self):
        if self.params.shape != self.accum.shape or self.params.ndim != 1:
            raise ValueError("params and accum must be 1-d arrays of equal length")

    def copy(self) -> "ParamStore":
        return ParamStore(self.params.copy(), self.accum.copy())


def init_params(spec: MlpSpec, seed) -> ParamStore:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for (fan_in, fan_out), (nb,) in spec.shapes:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(nb))
    params = np.concatenate(chunks)
    return ParamStore(params, np.zeros_like(params))


def unpack(spec: MlpSpec, flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of the flat vector as (W, b) per layer."""
    if flat.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} parameters, got {flat.shape}")
    out, i = [], 0
    for (a, b), _ in spec.shapes:
        W = flat[i : i + a * b].reshape(a, b)
        i += a * b
        out.append((W, flat[i : i + b]))
        i += b
    return out


def _act(name, x):
    return np.maximum(x, 0.0) if name == "relu" else np.tanh(x)


def forward(spec: MlpSpec, store: ParamStore, x) -> np.ndarray:
    """Evaluate the network on a batch ``x`` of shape (N, n_in) or a single point."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != spec.n_in:
        raise ValueError(f"input width {h.shape[1]} does not match network input {spec.n_in}")
    layers = unpack(spec, store.params)
    out = h
    for i, (W, b) in enumerate(layers):
        out = out @ W + b
        if i < len(layers) - 1:
            out = _act(spec.activation, out)
    if spec.skip:
        out = out + h
    return out[0] if single else out


class Traced:
    """Parameter leaves for one network inside an autodiff graph."""

    def __init__(self, spec: MlpSpec, store: ParamStore, requires_grad: bool = True):
        self.spec = spec
        make = ad.leaf if requires_grad else ad.const
        self.layers = [(make(W), make(b)) for W, b in unpack(spec, store.params)]

    def __call__(self, x) -> ad.Var:
        x = ad.const(x)
        out = x
        n = len(self.layers)
        for i, (W, b) in enumerate(self.layers):
            out = out @ W + b
            if i < n - 1:
                out = ad.relu(out) if self.spec.activation == "relu" else ad.tanh(out)
        if self.spec.skip:
            out = out + x
        return out

    def flat_grad(self) -> np.ndarray:
        parts = []
        for W, b in self.layers:
            for p in (W, b):
                g = p.grad if p.grad is not None else np.zeros_like(p.value)
                parts.append(g.ravel())
        return np.concatenate(parts)


@dataclass(frozen=True, eq=False)
class Net:
    spec: MlpSpec
    store: ParamStore

    def __call__(self, x) -> np.ndarray:
        return forward(self.spec, self.store, x)

    def with_store(self, store: ParamStore) -> "Net":
        return Net(self.spec, store)


@dataclass(frozen=True, eq=False)
class PotentialFamily:
    """Scalar networks g_1..g_K exposed through the congruent view.

    ``f_k(b) = g_k(b) - sum_i lambda_i g_i(b)`` so that ``sum_k lambda_k f_k``
    vanishes identically, whatever the parameters.
    """

    nets: tuple[Net, ...]
    weights: np.ndarray

    def __post_init__(self):
        if len(self.nets) != len(self.weights):
            raise ValueError("one network per weight required")
        for n in self.nets:
            if n.spec.n_out != 1:
                raise ValueError("potential networks must be scalar-valued")

    @property
    def n_sources(self) -> int:
        return len(self.nets)

    def raw(self, b) -> np.ndarray:
        """(N, K) matrix of g_k(b)."""
        b = np.atleast_2d(np.asarray(b, dtype=float))
        return np.concatenate([n(b) for n in self.nets], axis=1)

    def values(self, b) -> np.ndarray:
        """(N, K) matrix of f_k(b)."""
        G = self.raw(b)
        return G - (G @ self.weights)[:, None]

    def with_stores(self, stores) -> "PotentialFamily":
        return PotentialFamily(tuple(n.with_store(s) for n, s in zip(self.nets, stores)), self.weights)


def traced_potentials(pot: PotentialFamily, b, requires_grad: bool) -> tuple[ad.Var, list[Traced]]:
    """Congruent potential matrix F (N, K) built inside the autodiff graph."""
    traced = [Traced(n.spec, n.store, requires_grad) for n in pot.nets]
    cols = [t(b) for t in traced]
    G = cols[0]
    for c in cols[1:]:
        G = _hstack(G, c)
    mix = G @ pot.weights[:, None]
    return G - mix, traced


def _hstack(a: ad.Var, b: ad.Var) -> ad.Var:
    na = a.shape[1]

    def back(g):
        return g[:, :na], g[:, na:]

    return ad._node(np.concatenate([a.value, b.value], axis=1), (a, b), back)


def make_potentials(dim: int, weights, hidden, activation, seeds) -> PotentialFamily:
    spec = MlpSpec((dim, *hidden, 1), activation)
    nets = tuple(Net(spec, init_params(spec, s)) for s in seeds)
    return PotentialFamily(nets, np.asarray(weights, dtype=float))


# ---------------------------------------------------------------- checkpoints


def net_to_json(net: Net, step: int = 0, seed=None) -> dict:
    return {
        "spec": net.spec.to_dict(),
        "params": net.store.params.tolist(),
        "accum": net.store.accum.tolist(),
        "step": int(step),
        "seed": seed,
    }


def net_from_json(doc: dict) -> Net:
    spec = MlpSpec.from_dict(doc["spec"])
    store = ParamStore(np.asarray(doc["params"], dtype=float), np.asarray(doc["accum"], dtype=float))
    if store.params.shape != (spec.n_params,):
        raise ValueError("checkpoint parameter count does not match its spec")
    return Net(spec, store)


# ------------------------------------------------------- curvature certificates

# sup |tanh''| = 4 / (3 sqrt 3)
_TANH_D2 = 4.0 / (3.0 * np.sqrt(3.0))


def lipschitz_bound(net: Net) -> float:
    """Upper bound on the Lipschitz constant (spectral-norm product)."""
    L = 1.0
    for W, _ in unpack(net.spec, net.store.params):
        L *= np.linalg.norm(W, 2)
    return L + (1.0 if net.spec.skip else 0.0)


def hessian_bound(net: Net) -> float | None:
    """Upper bound on the spectral norm of the Hessian of a scalar tanh network.

    Returns ``None`` for relu networks with hidden layers (not twice
    differentiable).  Layer recursion: with ``L`` the Lipschitz and ``H`` the
    second-derivative bound of the hidden map, a tanh layer gives
    ``H' = c |W|^2 L^2 + |W| H`` and ``L' = |W| L``.
    """
    layers = unpack(net.spec, net.store.params)
    if len(layers) > 1 and net.spec.activation != "tanh":
        return None
    L, H = 1.0, 0.0
    for W, _ in layers[:-1]:
        s = np.linalg.norm(W, 2)
        H = _TANH_D2 * s * s * L * L + s * H
        L = s * L
    return float(np.linalg.norm(layers[-1][0], 2) * H)
