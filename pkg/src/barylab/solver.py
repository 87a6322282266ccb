"""Adversarial max-min training of a barycenter map against congruent potentials.

Each outer step first moves the potentials on a fresh batch, then takes
``inner_iters`` descent steps on the map, each on its own fresh batch.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .core import SourceDataset, TrainConfig, sample_batch
from .disentangle import bro_loss, irc_loss
from .nets import MlpSpec, Net, PotentialFamily, Traced, init_params, make_potentials, traced_potentials
from .optim import DivergenceError, rmsprop_step

HISTORY_FIELDS = ("step", "loss_f", "loss_T", "mwb", "irc", "bro")


@dataclass(eq=False)
class SolverState:
    map_net: Net
    potentials: PotentialFamily
    config: TrainConfig
    rng: np.random.Generator
    step: int = 0
    history: list = field(default_factory=list)
    last: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return self.potentials.weights


def transport_cost(residual: ad.Var, cost: str) -> ad.Var:
    if cost == "euclidean":
        return ad.row_norm(residual)
    if cost == "squared_euclidean":
        return ad.square(residual).sum(axis=1)
    raise ValueError(f"unknown cost {cost!r}")


def _onehot(ids, K):
    out = np.zeros((len(ids), K))
    out[np.arange(len(ids)), ids] = 1.0
    return out


def sample_weights(ids, weights) -> np.ndarray:
    """Per-sample multipliers ``|B| lambda_k / n_k``.

    Averaging ``w_i x_i`` over the batch gives ``sum_k lambda_k mean_k(x)``,
    an unbiased estimate of the lambda-weighted expectation for any batch
    composition.
    """
    ids = np.asarray(ids)
    counts = np.bincount(ids, minlength=len(weights))
    return len(ids) * np.asarray(weights)[ids] / counts[ids]


def bary_terms(points, source_ids, map_net, potentials, cost, tau=0.07, alpha=0.0,
               grad_map=False, grad_potentials=False, map_values=None):
    """Build the autodiff graph of the per-batch objective.

    Returns a dict of Vars: ``mwb`` (``sum_k lambda_k`` times the batch mean
    over source k of ``c(z, T z) - f_k(T z)``), ``pot`` (same weighting of
    ``f_k(T z)``), ``irc``, ``bro`` (only if ``alpha > 0``), the ``total``
    ``mwb + alpha (irc + bro) / |B|``, plus the traced networks so callers can
    read gradients.  ``map_values`` replaces the map output with
    fixed points (used when the map is frozen).
    """
    z = np.asarray(points, dtype=float)
    ids = np.asarray(source_ids)
    if len(z) == 0:
        raise ValueError("empty batch")
    K = potentials.n_sources
    w = sample_weights(ids, potentials.weights)
    if map_values is not None:
        traced_map = None
        b = ad.const(map_values)
    else:
        traced_map = Traced(map_net.spec, map_net.store, requires_grad=grad_map)
        b = traced_map(z)
    F, traced_pot = traced_potentials(potentials, b, requires_grad=grad_potentials)
    f_sel = (F * _onehot(ids, K)).sum(axis=1)
    r = ad.const(z) - b
    c = transport_cost(r, cost)
    out = {
        "mwb": ad.mean((c - f_sel) * w),
        "pot": ad.mean(f_sel * w),
        "traced_map": traced_map,
        "traced_pot": traced_pot,
        "b": b,
    }
    total = out["mwb"]
    if alpha > 0:
        out["irc"] = irc_loss(r, ids, tau)
        out["bro"] = bro_loss(b, r)
        total = total + (out["irc"] + out["bro"]) * (alpha / len(z))
    out["total"] = total
    return out


def mwb_loss(points, source_ids, map_net, potentials, cost="euclidean") -> float:
    """Batch estimate of the MWB objective ``sum_k lambda_k E_k[c(z, T z) - f_k(T z)]``."""
    val = bary_terms(points, source_ids, map_net, potentials, cost)["mwb"].item()
    if not math.isfinite(val):
        raise DivergenceError("non-finite MWB loss")
    return val


def combined_bary_loss(points, source_ids, map_net, potentials, config: TrainConfig) -> float:
    """Map objective ``mwb + alpha (irc + bro) / |B|`` as estimated on one batch."""
    t = bary_terms(points, source_ids, map_net, potentials, config.cost, config.tau, config.alpha)
    return t["total"].item()


# ------------------------------------------------------------------ state


def map_spec(dim: int, config: TrainConfig) -> MlpSpec:
    return MlpSpec((dim, *config.map_hidden, dim), config.map_activation, skip=config.map_skip)


def init_state(dataset: SourceDataset, config: TrainConfig) -> SolverState:
    seeds = np.random.SeedSequence(config.seed).spawn(dataset.n_sources + 2)
    spec = map_spec(dataset.dim, config)
    map_net = Net(spec, init_params(spec, seeds[0]))
    pots = make_potentials(
        dataset.dim, dataset.weights, config.potential_hidden, config.potential_activation, seeds[2:]
    )
    return SolverState(map_net, pots, config, np.random.default_rng(seeds[1]))


def _allocation(dataset: SourceDataset, config: TrainConfig):
    if config.batch_allocation == "uniform":
        return np.full(dataset.n_sources, 1.0 / dataset.n_sources)
    return None


def _draw(state: SolverState, dataset: SourceDataset):
    return sample_batch(dataset, state.config.batch_size, state.rng, _allocation(dataset, state.config))


def potential_update(state: SolverState, dataset: SourceDataset, batch=None) -> SolverState:
    """One RMSProp step on the potentials; the map is frozen.

    The step descends ``L^f = mean(lambda_k f_k(T z))`` (or ascends it when
    ``config.potential_direction == "ascend"``).
    """
    cfg = state.config
    z, ids = batch if batch is not None else _draw(state, dataset)
    b = state.map_net(z)
    t = bary_terms(z, ids, state.map_net, state.potentials, cfg.cost, map_values=b, grad_potentials=True)
    loss = t["pot"]
    if not math.isfinite(loss.item()):
        raise DivergenceError("non-finite potential loss", state)
    loss.backward()
    stores = []
    for net, tr in zip(state.potentials.nets, t["traced_pot"]):
        try:
            stores.append(
                rmsprop_step(net.store, tr.flat_grad(), cfg.lr_potentials, cfg.rmsprop_decay,
                             cfg.rmsprop_eps, cfg.potential_direction)
            )
        except DivergenceError as exc:
            raise DivergenceError(str(exc), state) from None
    last = {**state.last, "loss_f": loss.item()}
    return dataclasses.replace(state, potentials=state.potentials.with_stores(stores), last=last)


def map_update(state: SolverState, dataset: SourceDataset, batches=None) -> SolverState:
    """``inner_iters`` RMSProp descent steps on the map; potentials are frozen."""
    cfg = state.config
    net = state.map_net
    last = dict(state.last)
    for it in range(cfg.inner_iters):
        z, ids = batches[it] if batches is not None else _draw(state, dataset)
        cur = dataclasses.replace(state, map_net=net)
        t = bary_terms(z, ids, net, state.potentials, cfg.cost, cfg.tau, cfg.alpha, grad_map=True)
        total = t["total"].item()
        if not math.isfinite(total):
            raise DivergenceError("non-finite map loss", cur)
        t["total"].backward()
        try:
            store = rmsprop_step(net.store, t["traced_map"].flat_grad(), cfg.lr_map,
                                 cfg.rmsprop_decay, cfg.rmsprop_eps, "descend")
        except DivergenceError as exc:
            raise DivergenceError(str(exc), cur) from None
        net = net.with_store(store)
        last.update(
            loss_T=total,
            mwb=t["mwb"].item(),
            irc=t["irc"].item() if "irc" in t else 0.0,
            bro=t["bro"].item() if "bro" in t else 0.0,
        )
    return dataclasses.replace(state, map_net=net, last=last)


def _plateau(history, window, rtol) -> bool:
    if len(history) < 2 * window:
        return False
    recent = np.mean([h["loss_T"] for h in history[-window:]])
    before = np.mean([h["loss_T"] for h in history[-2 * window : -window]])
    return abs(recent - before) <= rtol * max(abs(before), 1e-12)


def train(
    dataset: SourceDataset,
    config: TrainConfig,
    state: SolverState | None = None,
    callback: Callable[[SolverState], None] | None = None,
) -> SolverState:
    """Run ``config.steps`` outer iterations (potentials, then map).

    Deterministic per ``config.seed``.  On a non-finite loss a
    :class:`DivergenceError` is raised whose ``state`` holds the partial
    history.
    """
    if state is None:
        state = init_state(dataset, config)
    if state.potentials.n_sources != dataset.n_sources:
        raise ValueError("state and dataset disagree on the number of sources")
    for _ in range(config.steps):
        try:
            state = potential_update(state, dataset)
            state = map_update(state, dataset)
        except DivergenceError as exc:
            if exc.state is not None:
                exc.state.history = state.history
            raise
        state.step += 1
        state.history.append({"step": state.step, **{k: state.last[k] for k in HISTORY_FIELDS[1:]}})
        if callback is not None:
            callback(state)
        if config.early_stop and _plateau(state.history, config.early_stop_window, config.early_stop_rtol):
            break
    return state
