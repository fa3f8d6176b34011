"""Command-line entry point.

Subcommands: plan, flops, train, probe, cka, simulate, predict-time.
Flag defaults can be supplied through environment variables with the
AUGLOCAL_ prefix (e.g. AUGLOCAL_SEED=3 is read when --seed is omitted).
Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path


from . import analysis, pipeline
from .auxbuild import emit_plan_text, plan_all
from .config import load_datasets, load_experiment, run_experiment
from .errors import AugLocalError, ConfigError, DataError
from .netspec import count_flops, count_params, parse_network_text, preset, validate
from .trainer import LocalLearner, load_checkpoint

ENV_PREFIX = "AUGLOCAL_"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _env_default(name: str, cast=str, fallback=None):
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None:
        return fallback
    return cast(raw)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=_env_default("config", Path))
    p.add_argument("--seed", type=int, default=_env_default("seed", int))
    p.add_argument("--out", type=Path, default=_env_default("out", Path))
    p.add_argument("--threads", type=int, default=_env_default("threads", int))
    p.add_argument("--mode", choices=["bp", "local"], default=_env_default("mode"))
    p.add_argument("--strategy",
                   choices=["uniform", "sequential", "repetitive", "c1x1", "c3x3"],
                   default=_env_default("strategy"))
    p.add_argument("--d", type=int, default=_env_default("d", int))
    p.add_argument("--dmin", type=int, default=_env_default("dmin", int))
    p.add_argument("--tau", type=float, default=_env_default("tau", float))


_STRATEGY_ALIASES = {"c1x1": "handcrafted-c1x1", "c3x3": "handcrafted-c3x3"}


def _resolve_network(args):
    if args.config is None:
        raise ConfigError("--config is required (network preset or spec file)")
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if text.lstrip().startswith("format = network/1"):
        return validate(parse_network_text(text)), None
    cfg = load_experiment(path)
    return cfg.validated_network(), cfg


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if args.mode is not None:
        cfg.train.mode = args.mode
    if args.strategy is not None:
        cfg.train.strategy = _STRATEGY_ALIASES.get(args.strategy, args.strategy)
    if args.d is not None:
        cfg.train.d = args.d
    if args.dmin is not None:
        cfg.train.d_min = args.dmin
    if args.tau is not None:
        cfg.train.tau = args.tau
    return cfg


def _plan_params(args, cfg):
    d = args.d if args.d is not None else (cfg.train.d if cfg else 2)
    d_min = args.dmin if args.dmin is not None else (cfg.train.d_min if cfg else 2)
    tau = args.tau if args.tau is not None else (cfg.train.tau if cfg else 0.5)
    strategy = _STRATEGY_ALIASES.get(args.strategy, args.strategy) if args.strategy \
        else (cfg.train.strategy if cfg else "uniform")
    return d, d_min, tau, strategy


def cmd_plan(args) -> int:
    network, cfg = _resolve_network(args)
    d, d_min, tau, strategy = _plan_params(args, cfg)
    text = emit_plan_text(plan_all(network, d=d, d_min=d_min, tau=tau, strategy=strategy))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_flops(args) -> int:
    network, cfg = _resolve_network(args)
    d, d_min, tau, strategy = _plan_params(args, cfg)
    plan = plan_all(network, d=d, d_min=d_min, tau=tau, strategy=strategy)
    print(f"network = {network.spec.name}")
    print(f"primary_flops = {count_flops(network)}")
    print(f"primary_params = {count_params(network)}")
    print(f"aux_flops = {plan.aux_flops()}")
    print(f"total_flops = {plan.total_flops()}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.config is None:
        raise ConfigError("train needs --config")
    cfg = _apply_overrides(load_experiment(args.config), args)
    out = args.out or Path("runs") / f"{cfg.network.name}-{cfg.train.mode}-seed{cfg.seed}"
    result = run_experiment(cfg, out, base_dir=Path(args.config).parent)
    print(f"test_top1 = {result['test_top1']:.4f}")
    print(f"artifacts = {result['out_dir']}")
    return EXIT_OK


def _load_run(run_dir: Path) -> tuple:
    cfg_path = run_dir / "config.txt"
    ckpt = run_dir / "checkpoint.bin"
    if not cfg_path.exists() or not ckpt.exists():
        raise ConfigError(f"{run_dir} is not a training run directory")
    cfg = load_experiment(cfg_path)
    learner = LocalLearner(cfg.validated_network(), cfg.train)
    load_checkpoint(ckpt, learner)
    return cfg, learner


def cmd_probe(args) -> int:
    cfg, learner = _load_run(args.run)
    tr, te = load_datasets(cfg, base_dir=args.run)
    if args.layers:
        layers = [int(v) for v in args.layers.split(",")]
    else:
        layers = list(range(1, learner.model.num_units + 1))
    rows = []
    for layer in layers:
        acc = analysis.linear_probe(learner.model, layer,
                                    (tr.images, tr.labels), (te.images, te.labels),
                                    seed=cfg.seed)
        rows.append((layer, acc))
        print(f"layer {layer}: probe_acc = {acc:.4f}")
    _write_csv(args.out, ["layer", "probe_acc"], rows)
    return EXIT_OK


def cmd_cka(args) -> int:
    cfg_a, learner_a = _load_run(args.run_a)
    _, learner_b = _load_run(args.run_b)
    _, te = load_datasets(cfg_a, base_dir=args.run_a)
    probe_x = te.images[:args.probe_size]
    scores = analysis.layerwise_cka(learner_a.model, learner_b.model, probe_x)
    rows = [(i + 1, s) for i, s in enumerate(scores["per_layer"])]
    for layer, s in rows:
        print(f"layer {layer}: cka = {s:.4f}")
    print(f"average = {scores['average']:.4f}")
    _write_csv(args.out, ["layer", "score"], rows)
    return EXIT_OK


_SIM_COLUMNS = ["L", "d", "t_f", "t_b", "N", "bp_time", "auglocal_time",
                "simulated", "ratio"]


def _write_csv(out: Path | None, header, rows) -> None:
    if not out:
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _time_row(args, simulated) -> list:
    pred = pipeline.predict_times(args.L, args.d, args.tf, args.tb, args.N)
    sim = simulated if simulated is not None else ""
    ratio = (simulated / pred["bp_time"]) if simulated is not None else pred["ratio"]
    return [args.L, args.d, args.tf, args.tb, args.N,
            pred["bp_time"], pred["auglocal_time"], sim, ratio]


def cmd_predict_time(args) -> int:
    row = _time_row(args, None)
    print(dict(zip(_SIM_COLUMNS, row)))
    _write_csv(args.out, _SIM_COLUMNS, [row])
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = pipeline.PipelineConfig(
        num_layers=args.L, d=args.d, t_f=args.tf, t_b=args.tb,
        iterations=args.N, queue_capacity=args.queue_capacity,
        time_jitter=args.jitter, seed=args.seed or 0)
    res = pipeline.simulate_pipeline(cfg)
    row = _time_row(args, res.makespan)
    print(dict(zip(_SIM_COLUMNS, row)))
    _write_csv(args.out, _SIM_COLUMNS, [row])
    return EXIT_OK


def _add_time_args(p):
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--tf", type=float, default=1.0)
    p.add_argument("--tb", type=float, default=1.0)
    p.add_argument("--N", type=int, required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="auglocal")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in [("plan", cmd_plan), ("flops", cmd_flops), ("train", cmd_train)]:
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("probe")
    p.add_argument("run", type=Path)
    p.add_argument("--layers", type=str, default=None)
    p.add_argument("--out", type=Path, default=_env_default("out", Path))
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("cka")
    p.add_argument("run_a", type=Path)
    p.add_argument("run_b", type=Path)
    p.add_argument("--probe-size", type=int, default=256)
    p.add_argument("--out", type=Path, default=_env_default("out", Path))
    p.set_defaults(fn=cmd_cka)

    p = sub.add_parser("predict-time")
    _add_time_args(p)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(fn=cmd_predict_time)

    p = sub.add_parser("simulate")
    _add_time_args(p)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--queue-capacity", type=int, default=1)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=_env_default("seed", int))
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(fn=cmd_simulate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _emit_error("config", exc)
        return EXIT_CONFIG
    except DataError as exc:
        _emit_error("data", exc)
        return EXIT_DATA
    except (AugLocalError, OSError, ValueError) as exc:
        _emit_error("runtime", exc)
        return EXIT_RUNTIME


def _emit_error(kind: str, exc: Exception) -> None:
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
