"""Command-line surface: preprocess | train | predict | eval | flops | synth.

Configuration precedence is flags > config file (flat JSON) > defaults. All
machine-readable output is JSON; errors exit with code 1 and the error class
name on stderr (argparse flag errors exit 2). Set TRAJKIT_LOG to error/info/
debug to control logging.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import TrajkitError
from .kinematics import estimate_state
from .map_prior import build_prior, prior_from_payload, prior_payload
from .metrics import min_ade, min_fde
from .predictor import ModelConfig, TrajectoryPredictor, count_flops, count_params, prepare_batch
from .scenario import SynthSpec, generate_synthetic, parse_scenario, serialize_scenario, to_target_frame
from .training import TrainConfig, evaluate, prepare_dataset, train
from .nn.checkpoint import load_checkpoint

log = logging.getLogger("trajkit")


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("TRAJKIT_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _model_config(doc: dict, args) -> ModelConfig:
    fields = {f.name for f in dataclasses.fields(ModelConfig)}
    kwargs = {k: v for k, v in doc.items() if k in fields}
    if getattr(args, "variant", None):
        kwargs["variant"] = args.variant
    if getattr(args, "seed", None) is not None:
        kwargs["seed"] = args.seed
    return ModelConfig(**kwargs)


def _train_config(doc: dict, args) -> TrainConfig:
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    kwargs = {k: v for k, v in doc.items() if k in fields}
    if getattr(args, "seed", None) is not None:
        kwargs["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        kwargs["epochs"] = args.epochs
    return TrainConfig(**kwargs)


def _load_scenarios(data_dir: str, fmt: str):
    root = Path(data_dir)
    suffix = ".json" if fmt == "native_json" else ".csv"
    paths = sorted(p for p in root.iterdir() if p.suffix == suffix)
    if not paths:
        raise TrajkitError(f"no {suffix} scenarios under {root}")
    return [parse_scenario(p.read_bytes(), format=fmt) for p in paths]


def _preprocess_one(payload: tuple[str, str, int]) -> tuple[str, str]:
    text, fmt, seed = payload
    scenario = parse_scenario(text, format=fmt)
    framed, _ = to_target_frame(scenario)
    state = estimate_state(framed.target.positions[:20])
    prior = build_prior(framed, state, seed=seed)
    return scenario.scenario_id, json.dumps(prior_payload(prior, state), sort_keys=True)


# --- subcommands ------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.n):
        spec = SynthSpec(
            n_agents=args.n_agents,
            motion=args.motion.upper(),
            lane_topology=args.topology,
            noise_sigma=args.noise,
            seed=args.seed + i,
        )
        s = generate_synthetic(spec)
        (out / f"{s.scenario_id}.json").write_text(serialize_scenario(s))
    print(json.dumps({"written": args.n, "dir": str(out)}))
    return 0


def cmd_preprocess(args) -> int:
    root = Path(args.data)
    fmt = args.format
    suffix = ".json" if fmt == "native_json" else ".csv"
    paths = sorted(p for p in root.iterdir() if p.suffix == suffix)
    if not paths:
        raise TrajkitError(f"no {suffix} scenarios under {root}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(p.read_text(), fmt, args.seed + i) for i, p in enumerate(paths)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_preprocess_one, jobs))
    else:
        results = [_preprocess_one(j) for j in jobs]
    for scenario_id, payload in results:
        (out / f"{scenario_id}.prior.json").write_text(payload)
    print(json.dumps({"written": len(results), "dir": str(out)}))
    return 0


def cmd_train(args) -> int:
    doc = _load_config_file(args.config)
    mcfg = _model_config(doc, args)
    tcfg = _train_config(doc, args)
    scenarios = _load_scenarios(args.data, args.format)
    if args.val_data:
        val = _load_scenarios(args.val_data, args.format)
    else:
        n_val = max(len(scenarios) // 10, 1)
        val, scenarios = scenarios[:n_val], scenarios[n_val:]
    model = TrajectoryPredictor(mcfg)
    _, history = train(tcfg, scenarios, val, model, out_dir=args.out)
    print(json.dumps(history[-1]))
    return 0


def cmd_predict(args) -> int:
    doc = _load_config_file(args.config)
    mcfg = _model_config(doc, args)
    scenarios = _load_scenarios(args.data, args.format)
    model = TrajectoryPredictor(mcfg)
    if args.checkpoint:
        load_checkpoint(model, args.checkpoint)
    data = prepare_dataset(scenarios, mcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    batch = prepare_batch(data.scenarios, mcfg, data.priors)
    sets = model.predict(batch)
    for i, (scenario, ps) in enumerate(zip(scenarios, sets)):
        payload = {
            "modes": [traj.tolist() for traj in ps.trajectories],
            "confidences": ps.confidences.tolist(),
        }
        (out / f"{scenario.scenario_id}.pred.json").write_text(
            json.dumps(payload, sort_keys=True))
        if args.svg:
            from .svg import render_scene

            prior = data.priors[i] if data.priors else None
            (out / f"{scenario.scenario_id}.svg").write_text(
                render_scene(data.scenarios[i], ps, prior))
    print(json.dumps({"written": len(sets), "dir": str(out)}))
    return 0


def cmd_eval(args) -> int:
    scenarios = _load_scenarios(args.data, args.format)
    pred_dir = Path(args.pred)
    sums = {"minade_k1": 0.0, "minfde_k1": 0.0, "minade_k6": 0.0, "minfde_k6": 0.0}
    n = 0
    for s in scenarios:
        path = pred_dir / f"{s.scenario_id}.pred.json"
        if not path.exists():
            raise TrajkitError(f"missing prediction for {s.scenario_id}")
        doc = json.loads(path.read_text())
        preds = np.asarray(doc["modes"], dtype=np.float64)
        conf = np.asarray(doc["confidences"], dtype=np.float64)
        framed, _ = to_target_frame(s)
        gt = framed.target.positions[20:]
        k = conf.shape[0]
        sums["minade_k1"] += min_ade(gt, preds, conf, 1)
        sums["minfde_k1"] += min_fde(gt, preds, conf, 1)
        sums["minade_k6"] += min_ade(gt, preds, conf, k)
        sums["minfde_k6"] += min_fde(gt, preds, conf, k)
        n += 1
    report = {key: val / n for key, val in sums.items()}
    report["n"] = n
    print(json.dumps(report, sort_keys=True))
    if args.out:
        Path(args.out).write_text(json.dumps(report, sort_keys=True))
    return 0


def cmd_flops(args) -> int:
    doc = _load_config_file(args.config)
    mcfg = _model_config(doc, args)
    report = {
        "variant": mcfg.variant,
        "params": count_params(mcfg),
        "flops": count_flops(mcfg, n_agents=args.agents),
        "convention": "1 multiply-accumulate = 1 FLOP; elementwise ops = 1 FLOP/element",
    }
    print(json.dumps(report, sort_keys=True))
    return 0


# --- wiring ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajkit",
                                description="lightweight multimodal trajectory prediction")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", default=None, help="flat JSON config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--variant", choices=("social", "map"), default=None)
        sp.add_argument("--format", choices=("native_json", "argoverse_csv"),
                        default="native_json")
        if data:
            sp.add_argument("--data", required=True, help="scenario directory")

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--n-agents", type=int, default=3)
    sp.add_argument("--motion", choices=("cv", "ctrv", "ctra"), default="cv")
    sp.add_argument("--topology", choices=("straight", "curve", "fork"), default="straight")
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("preprocess", help="emit per-scenario prior JSON")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_preprocess, seed=0)

    sp = sub.add_parser("train", help="train a model")
    common(sp)
    sp.add_argument("--val-data", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="emit per-scenario prediction JSON")
    common(sp)
    sp.add_argument("--checkpoint", default=None, help="checkpoint prefix")
    sp.add_argument("--out", required=True)
    sp.add_argument("--svg", action="store_true", help="also write SVG overlays")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("eval", help="score predictions against ground truth")
    common(sp)
    sp.add_argument("--pred", required=True, help="prediction directory")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("flops", help="parameter and FLOP report")
    common(sp, data=False)
    sp.add_argument("--agents", type=int, default=10)
    sp.set_defaults(func=cmd_flops)
    return p


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrajkitError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
