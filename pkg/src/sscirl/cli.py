"""Command-line surface: train, evaluate, simulate, serve, oracle.

Configuration is flat `key = value` text covering both the plant scenario
and the training settings; any key can be overridden on the command line
with `--<key> <value>`.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import plant, policy, sigproc, trainer
from .envproto import EnvServer, RemoteEnv, ProtocolError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BAD_CONFIG = 2

_SCENARIO_KEYS = tuple(f.name for f in fields(plant.PlantScenario))
_TRAIN_KEYS = tuple(f.name for f in fields(trainer.TrainConfig))
_ALIASES = {"epochs": "n_epoch", "iters": "n_iter"}


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="key = value config file")
    pairs = [(key, key) for key in _SCENARIO_KEYS + _TRAIN_KEYS]
    pairs += list(_ALIASES.items())
    for flag, target in pairs:
        try:
            parser.add_argument(f"--{flag}", dest=f"ov_{target}", metavar="V",
                                help=argparse.SUPPRESS)
        except argparse.ArgumentError:
            # subcommand claims this flag for itself (e.g. --seed)
            pass


def load_run_config(args) -> tuple[plant.PlantScenario, trainer.TrainConfig]:
    """Resolve config file plus CLI overrides into the two config objects."""
    raw: dict[str, str] = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            print(f"config not found: {path}", file=sys.stderr)
            sys.exit(EXIT_BAD_CONFIG)
        try:
            raw = plant.parse_kv_file(path, plant.PlantScenario,
                                      allow_extra=_TRAIN_KEYS)
        except plant.PlantError as exc:
            print(str(exc), file=sys.stderr)
            sys.exit(EXIT_BAD_CONFIG)
    for key in _SCENARIO_KEYS + _TRAIN_KEYS:
        value = getattr(args, f"ov_{key}", None)
        if value is not None:
            raw[key] = value
    try:
        scen_raw = {k: v for k, v in raw.items() if k in _SCENARIO_KEYS}
        cfg_raw = {k: v for k, v in raw.items() if k in _TRAIN_KEYS}
        scenario = plant.PlantScenario(
            **plant.coerce_fields(plant.PlantScenario, scen_raw))
        config = trainer.TrainConfig(
            **plant.coerce_fields(trainer.TrainConfig, cfg_raw))
    except (ValueError, plant.PlantError) as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        sys.exit(EXIT_BAD_CONFIG)
    return scenario, config


def _make_env(spec: str, scenario: plant.PlantScenario):
    if spec == "local":
        return trainer.LocalPlantEnv(scenario)
    if spec.startswith("remote:"):
        _, host, port = spec.split(":")
        return RemoteEnv(host, int(port), scenario=scenario)
    raise ValueError(f"bad --env {spec!r}; use 'local' or 'remote:HOST:PORT'")


def cmd_train(args) -> int:
    scenario, config = load_run_config(args)
    try:
        env = _make_env(args.env, scenario)
    except (ValueError, ProtocolError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ERROR
    try:
        result = trainer.train(scenario, config, run_dir=args.out, env=env)
    finally:
        env.close()
    last = result.stats[-1]
    print(f"trained {len(result.stats)} epochs; best mean reward "
          f"{result.best_reward:.6g}; final mean action {last.mean_action:.4f}; "
          f"plant episodes {result.plant_episodes}")
    print(f"run directory: {result.run_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    scenario, config = load_run_config(args)
    try:
        params = policy.load_checkpoint(args.checkpoint, config.d_obs,
                                        config.hidden_size)
    except (OSError, policy.CheckpointError) as exc:
        print(f"cannot load checkpoint: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = trainer.evaluate(params, scenario, config, seed=args.seed,
                              mitigate=not args.no_mitigation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.txt", "w") as fh:
        for key, value in report.as_dict().items():
            fh.write(f"{key} = {value!r}\n")
    sigproc.write_trace_csv(report.trace, out / "episode.csv")
    for key, value in report.as_dict().items():
        print(f"{key} = {value!r}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario, config = load_run_config(args)
    result = plant.run_episode(scenario, plant.GainAction(args.kp), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sigproc.write_trace_csv(result.trace, out / "raw.csv")
    filtered, observed = sigproc.pipeline(result.trace, config.bandpass_spec,
                                          config.target_rate, config.filter_stage)
    sigproc.write_trace_csv(filtered, out / "filtered.csv")
    sigproc.write_trace_csv(observed, out / "decimated.csv")
    if result.diverged:
        with open(out / "diverged.txt", "w") as fh:
            fh.write(f"diverged_at = {result.diverged_at!r}\n")
        print(f"warning: trace truncated, state diverged at "
              f"{result.diverged_at:.4f} s")
    print(f"wrote raw/filtered/decimated CSVs to {out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    scenario, config = load_run_config(args)
    server = EnvServer(scenario, args.host, args.port,
                       kp_bounds=(config.kp_min, config.kp_max))
    host, port = server.address
    print(f"serving plant environment on {host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
    return EXIT_OK


def cmd_oracle(args) -> int:
    scenario, config = load_run_config(args)
    best, sweep = trainer.grid_oracle(scenario, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("gain,reward\n")
        for kp, reward in sweep:
            fh.write(f"{kp!r},{reward!r}\n")
    print(f"oracle optimum gain: {best}")
    print(f"sweep written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sscirl",
        description="policy-gradient gain tuning against sub-synchronous "
                    "control interactions on a surrogate grid plant")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run policy-gradient training")
    p.add_argument("--out", default="runs/train", help="run directory")
    p.add_argument("--env", default="local",
                   help="'local' or 'remote:HOST:PORT'")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="mitigation report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="runs/evaluate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-mitigation", action="store_true",
                   help="emit the unmitigated baseline episode instead")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="single open-loop episode + pipeline CSVs")
    p.add_argument("--kp", type=float, required=True)
    p.add_argument("--out", default="runs/simulate")
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="serve the plant over the line protocol")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7351)
    _add_common(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("oracle", help="grid-search reward sweep over gains")
    p.add_argument("--out", default="runs/oracle.csv")
    _add_common(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
