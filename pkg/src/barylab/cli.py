"""Command-line entry point: ``barylab {gen,train,gaps,eval,oracle}``.

Exit codes: 0 success, 2 input error, 3 divergence, 4 atom cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import DatasetError, TrainConfig, load_dataset_csv, load_dataset_json, save_dataset_json
from .diagnostics import (
    bro_mean,
    congruence_check,
    duality_gaps,
    export_embeddings,
    pushforward_matrix,
    residual_separability,
)
from .nets import PotentialFamily, net_from_json, net_to_json
from .optim import DivergenceError
from .oracles import MAX_ATOMS, AtomCapError, DiscreteDistribution, discrete_ot, dual_from_plan
from .solver import HISTORY_FIELDS, SolverState, train
from .synth import ShiftFamilySpec, generate, ground_truth_barycenter

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_CAP = 0, 2, 3, 4
ARTIFACT_VERSION = 1


class InputError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _read_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_data(path):
    try:
        if str(path).endswith(".csv"):
            return load_dataset_csv(path)
        return load_dataset_json(path)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except (OSError, DatasetError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _cost_flag(value):
    return None if value is None else {"squared": "squared_euclidean"}.get(value, value)


# ------------------------------------------------------------- checkpoints


def checkpoint_doc(state: SolverState) -> dict:
    return {
        "artifact_version": ARTIFACT_VERSION,
        "step": state.step,
        "config": state.config.to_dict(),
        "map": net_to_json(state.map_net, state.step, state.config.seed),
        "potentials": [net_to_json(n, state.step) for n in state.potentials.nets],
        "weights": state.potentials.weights.tolist(),
    }


def load_checkpoint(path):
    """Return ``(map_net, potentials, config)`` from a checkpoint JSON."""
    doc = _read_json(path)
    try:
        map_net = net_from_json(doc["map"])
        pots = PotentialFamily(tuple(net_from_json(p) for p in doc["potentials"]), np.asarray(doc["weights"]))
        config = TrainConfig.from_dict(doc["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed checkpoint ({exc})") from None
    return map_net, pots, config


def _check_dims(dataset, map_net, pots):
    if map_net.spec.n_in != dataset.dim or pots.n_sources != dataset.n_sources:
        raise InputError(
            f"checkpoint expects dim {map_net.spec.n_in} and K={pots.n_sources}, "
            f"data has dim {dataset.dim} and K={dataset.n_sources}"
        )


def write_losses(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["step"], *(repr(float(row[k])) for k in HISTORY_FIELDS[1:])])


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    doc = _read_json(args.spec)
    try:
        spec = ShiftFamilySpec.from_dict({**doc, **({"seed": args.seed} if args.seed is not None else {})})
        dataset = generate(spec)
    except (TypeError, ValueError, KeyError) as exc:
        raise InputError(f"{args.spec}: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset_json(dataset, out / "dataset.json")
    _write_json(out / "truth.json", ground_truth_barycenter(spec, _cost_flag(args.cost) or "squared_euclidean"))
    print(json.dumps({"dataset": str(out / "dataset.json"), "truth": str(out / "truth.json")}))
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    dataset = _load_data(args.data)
    raw = _read_json(args.config) if args.config else {}
    overrides = {"seed": args.seed, "steps": args.steps, "cost": _cost_flag(args.cost)}
    raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        config = TrainConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise InputError(f"config: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    status, code, message = "ok", EXIT_OK, None
    try:
        state = train(dataset, config)
    except DivergenceError as exc:
        state = exc.state
        status, code, message = "diverged", EXIT_DIVERGED, str(exc)

    losses = out / "losses.csv"
    write_losses(state.history if state is not None else [], losses)
    ckpts = []
    if state is not None:
        ckpt = out / "checkpoint.json"
        _write_json(ckpt, checkpoint_doc(state))
        ckpts.append(str(ckpt))
    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "dataset_path": str(args.data),
        "checkpoint_paths": ckpts,
        "report_paths": [str(losses)],
        "steps_completed": len(state.history) if state is not None else 0,
        "status": status,
        "partial": status != "ok",
        "message": message,
        "timestamps": {"started": started, "finished": _now()},
    }
    _write_json(out / "run_manifest.json", manifest)
    if message:
        print(f"training diverged: {message}", file=sys.stderr)
    return code


def _default_support(dataset, map_net, seed: int) -> np.ndarray:
    outs = np.concatenate([map_net(s) for s in dataset.sources], axis=0)
    outs = np.unique(outs, axis=0)
    if len(outs) <= MAX_ATOMS:
        return outs
    rng = np.random.default_rng(seed)
    return outs[np.sort(rng.choice(len(outs), MAX_ATOMS, replace=False))]


def _load_points(path) -> np.ndarray:
    doc = _read_json(path)
    pts = doc.get("points", doc) if isinstance(doc, dict) else doc
    try:
        arr = np.asarray(pts, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None
    return arr[:, None] if arr.ndim == 1 else arr


def cmd_gaps(args) -> int:
    dataset = _load_data(args.data)
    map_net, pots, config = load_checkpoint(args.checkpoint)
    _check_dims(dataset, map_net, pots)
    cost = _cost_flag(args.cost) or config.cost
    seed = args.seed if args.seed is not None else config.seed
    support = _load_points(args.support) if args.support else _default_support(dataset, map_net, seed)
    if len(support) > MAX_ATOMS:
        raise AtomCapError(f"oracle support has {len(support)} atoms, cap is {MAX_ATOMS}")
    report = duality_gaps(dataset, map_net, pots, support, cost).to_dict()
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = _load_data(args.data)
    map_net, pots, config = load_checkpoint(args.checkpoint)
    _check_dims(dataset, map_net, pots)
    seed = args.seed if args.seed is not None else config.seed
    metrics = {
        "pushforward": pushforward_matrix(map_net, dataset, seed=seed).tolist(),
        "separability": residual_separability(map_net, dataset, seed) if dataset.n_sources > 1 else None,
        "congruence": congruence_check(pots, 1000, seed),
        "bro_mean": bro_mean(map_net, dataset),
    }
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "metrics.json", metrics)
        export_embeddings(map_net, dataset, out / "embeddings.csv")
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def _load_distribution(path) -> DiscreteDistribution:
    doc = _read_json(path)
    try:
        if isinstance(doc, dict):
            pts = np.asarray(doc["points"], dtype=float)
            pts = pts[:, None] if pts.ndim == 1 else pts
            if len(pts) > MAX_ATOMS:
                raise AtomCapError(f"{path}: {len(pts)} atoms, cap is {MAX_ATOMS}")
            masses = doc.get("masses")
            return DiscreteDistribution(pts, np.asarray(masses, dtype=float)) if masses is not None \
                else DiscreteDistribution.uniform(pts)
        pts = np.asarray(doc, dtype=float)
        pts = pts[:, None] if pts.ndim == 1 else pts
        if len(pts) > MAX_ATOMS:
            raise AtomCapError(f"{path}: {len(pts)} atoms, cap is {MAX_ATOMS}")
        return DiscreteDistribution.uniform(pts)
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: malformed distribution ({exc})") from None
    except AtomCapError:
        raise
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_oracle(args) -> int:
    p, q = _load_distribution(args.p), _load_distribution(args.q)
    cost = _cost_flag(args.cost) or "euclidean"
    value, plan = discrete_ot(p, q, cost)
    phi, f = dual_from_plan(p, q, cost, plan)
    dual = float(p.masses @ phi + q.masses @ f)
    print(json.dumps({"value": value, "plan": plan.matrix.tolist(), "dual_gap": abs(value - dual)}))
    return EXIT_OK


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="barylab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"barylab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    costs = ["euclidean", "squared", "squared_euclidean"]

    g = sub.add_parser("gen", help="generate a synthetic dataset and its truth sidecar")
    g.add_argument("spec", help="ShiftFamilySpec JSON file")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int)
    g.add_argument("--cost", choices=costs, help="cost used to describe the true barycenter (default squared)")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a barycenter map")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="TrainConfig JSON (missing keys take defaults)")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--cost", choices=costs)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("gaps", help="duality gaps and the map error bound")
    d.add_argument("--data", required=True)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--support", help="JSON list of oracle support points (<= 64)")
    d.add_argument("--cost", choices=costs)
    d.add_argument("--seed", type=int)
    d.add_argument("--out", help="also write the report here")
    d.set_defaults(func=cmd_gaps)

    e = sub.add_parser("eval", help="pushforward distances and embedding metrics")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="directory for metrics.json and embeddings.csv")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oracle", help="exact discrete OT between two distributions")
    o.add_argument("p")
    o.add_argument("q")
    o.add_argument("--cost", choices=costs)
    o.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except AtomCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
