"""Synthetic multisource datasets: one base distribution, shifted and scaled per source.

Source k draws ``scale_k * u + shift_k`` with ``u`` from the base, using
independent base draws per source (the sources are unpaired).  Under the
squared cost such a location-scale family has a closed-form barycenter,
``mean(scale) * u + mean(shift)`` with lambda-weighted means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core import SourceDataset, make_dataset
from .oracles import weighted_median


@dataclass(frozen=True)
class ShiftFamilySpec:
    """Base distribution plus per-source translations and scales.

    ``base`` is a dict with ``kind`` one of ``gaussian`` (``mean``, ``var``
    diagonal; zero variance gives a Dirac), ``mixture`` (``components``: list
    of gaussian dicts with ``weight``) or ``ring`` (``radius``,
    ``thickness``; 2-d only).
    """

    base: dict
    shifts: tuple
    scales: tuple | None = None
    n_per_source: tuple | int = 100
    seed: int = 0
    weights: tuple | None = None

    def __post_init__(self):
        shifts = np.atleast_2d(np.asarray(self.shifts, dtype=float))
        object.__setattr__(self, "shifts", tuple(map(tuple, shifts)))
        K, D = shifts.shape
        if K < 1:
            raise ValueError("need at least one source")
        if self.base_dim != D:
            raise ValueError(f"shift dimension {D} does not match base dimension {self.base_dim}")
        if self.scales is not None:
            sc = tuple(float(s) for s in self.scales)
            if len(sc) != K or min(sc) <= 0:
                raise ValueError("need one positive scale per source")
            object.__setattr__(self, "scales", sc)
        n = self.n_per_source
        n = (int(n),) * K if np.isscalar(n) else tuple(int(v) for v in n)
        if len(n) != K or min(n) < 1:
            raise ValueError("need a positive sample count per source")
        object.__setattr__(self, "n_per_source", n)

    @property
    def n_sources(self) -> int:
        return len(self.shifts)

    @property
    def base_dim(self) -> int:
        kind = self.base.get("kind")
        if kind == "gaussian":
            return len(self.base["mean"])
        if kind == "mixture":
            return len(self.base["components"][0]["mean"])
        if kind == "ring":
            return 2
        raise ValueError(f"unknown base kind {kind!r}")

    @property
    def shift_array(self) -> np.ndarray:
        return np.asarray(self.shifts, dtype=float)

    @property
    def scale_array(self) -> np.ndarray:
        return np.ones(self.n_sources) if self.scales is None else np.asarray(self.scales)

    def lam(self) -> np.ndarray:
        if self.weights is not None:
            return np.asarray(self.weights, dtype=float)
        n = np.asarray(self.n_per_source, dtype=float)
        return n / n.sum()

    def to_dict(self) -> dict:
        return {
            "base": self.base,
            "shifts": [list(s) for s in self.shifts],
            "scales": None if self.scales is None else list(self.scales),
            "n_per_source": list(self.n_per_source),
            "seed": self.seed,
            "weights": None if self.weights is None else list(self.weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShiftFamilySpec":
        known = {"base", "shifts", "scales", "n_per_source", "seed", "weights"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown spec keys: {sorted(extra)}")
        return cls(**d)


def sample_base(base: dict, n: int, rng: np.random.Generator) -> np.ndarray:
    kind = base["kind"]
    if kind == "gaussian":
        mean = np.asarray(base["mean"], dtype=float)
        var = np.asarray(base.get("var", np.ones_like(mean)), dtype=float)
        if np.any(var < 0):
            raise ValueError("variances must be nonnegative")
        return mean + np.sqrt(var) * rng.standard_normal((n, len(mean)))
    if kind == "mixture":
        comps = base["components"]
        w = np.asarray([c.get("weight", 1.0) for c in comps], dtype=float)
        which = rng.choice(len(comps), size=n, p=w / w.sum())
        out = np.empty((n, len(comps[0]["mean"])))
        for j, c in enumerate(comps):
            idx = np.flatnonzero(which == j)
            out[idx] = sample_base({"kind": "gaussian", **c}, len(idx), rng)
        return out
    if kind == "ring":
        theta = rng.uniform(0.0, 2 * np.pi, n)
        rad = base["radius"] + base.get("thickness", 0.1) * rng.standard_normal(n)
        return np.column_stack([rad * np.cos(theta), rad * np.sin(theta)])
    raise ValueError(f"unknown base kind {kind!r}")


def generate(spec: ShiftFamilySpec) -> SourceDataset:
    """Independent draws per source; deterministic per ``spec.seed``."""
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(spec.n_sources)]
    sc, sh = spec.scale_array, spec.shift_array
    sources = [sc[k] * sample_base(spec.base, spec.n_per_source[k], rngs[k]) + sh[k] for k in range(spec.n_sources)]
    return make_dataset(sources, spec.weights)


def coupled_samples(spec: ShiftFamilySpec, n: int, seed) -> tuple[np.ndarray, list[np.ndarray]]:
    """Fresh draws from every source built on one shared set of base draws.

    Each returned source still has the correct marginal law; sharing the base
    draws removes the sampling noise when comparing pushforwards.
    """
    u = sample_base(spec.base, n, np.random.default_rng(seed))
    sc, sh = spec.scale_array, spec.shift_array
    return u, [sc[k] * u + sh[k] for k in range(spec.n_sources)]


def ground_truth_barycenter(spec: ShiftFamilySpec, cost: str) -> dict:
    """Describe the exact barycenter when it is known in closed form.

    - squared cost: ``{"kind": "location_scale", "scale", "shift", "base"}``
      (plus ``mean``/``var`` for a gaussian base);
    - euclidean cost in 1-d: ``{"kind": "quantile_median", ...}``, the pointwise
      weighted median of the source quantile functions;
    - a single source: the source itself;
    - otherwise ``{"kind": "unknown"}``.
    """
    lam = spec.lam()
    sc, sh = spec.scale_array, spec.shift_array
    if spec.n_sources == 1:
        return {"kind": "location_scale", "base": spec.base, "scale": float(sc[0]), "shift": sh[0].tolist(),
                **_gaussian_fields(spec.base, sc[0], sh[0])}
    if cost == "squared_euclidean":
        s_bar = float(lam @ sc)
        m_bar = lam @ sh
        return {"kind": "location_scale", "base": spec.base, "scale": s_bar, "shift": m_bar.tolist(),
                **_gaussian_fields(spec.base, s_bar, m_bar)}
    if cost == "euclidean" and spec.base_dim == 1:
        return {"kind": "quantile_median", "base": spec.base, "scales": sc.tolist(),
                "shifts": sh[:, 0].tolist(), "weights": lam.tolist()}
    return {"kind": "unknown"}


def _gaussian_fields(base, scale, shift) -> dict:
    if base["kind"] != "gaussian":
        return {}
    mean = np.asarray(base["mean"], dtype=float)
    var = np.asarray(base.get("var", np.ones_like(mean)), dtype=float)
    return {"mean": (scale * mean + np.asarray(shift)).tolist(), "var": (scale**2 * var).tolist()}


def base_quantile(base: dict, t) -> np.ndarray:
    """Quantile function of a 1-d gaussian base (Diracs allowed)."""
    if base["kind"] != "gaussian" or len(base["mean"]) != 1:
        raise ValueError("quantiles are available for 1-d gaussian bases only")
    mu = float(base["mean"][0])
    sd = float(np.sqrt(base.get("var", [1.0])[0]))
    t = np.asarray(t, dtype=float)
    return mu + sd * norm.ppf(t) if sd > 0 else np.full_like(t, mu)


def barycenter_quantile(truth: dict, t) -> np.ndarray:
    """Evaluate the quantile function of a known 1-d barycenter at levels ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if truth["kind"] == "location_scale":
        return truth["scale"] * base_quantile(truth["base"], t) + truth["shift"][0]
    if truth["kind"] == "quantile_median":
        qu = base_quantile(truth["base"], t)
        vals = np.outer(qu, truth["scales"]) + np.asarray(truth["shifts"])
        return np.array([weighted_median(row, truth["weights"]) for row in vals])
    raise ValueError("barycenter is not known in closed form")


def true_map(spec: ShiftFamilySpec, k: int, z) -> np.ndarray:
    """Optimal map from source k onto the squared-cost barycenter."""
    lam = spec.lam()
    sc, sh = spec.scale_array, spec.shift_array
    s_bar, m_bar = lam @ sc, lam @ sh
    return (s_bar / sc[k]) * (np.asarray(z, dtype=float) - sh[k]) + m_bar
