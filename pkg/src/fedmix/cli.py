"""Command-line front end: config parsing, runs, sweeps, the oracle and the
invariant self-test.

Config files are flat ``key=value`` text; blank lines and ``#`` comments are
ignored, unknown keys are rejected, and flag overrides beat file values which
beat the built-in defaults. Flag names equal file keys with a ``--`` prefix.
Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import os
import sys

# Single-threaded BLAS: these matrices are small enough that thread fan-out
# costs more than it saves, and fixed threading keeps runs reproducible.
# Effective only if numpy has not been imported yet in this process.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

from . import __version__
from .envs import ENV_NAMES, make_env
from .trainer import TrainConfig, run

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class ConfigError(Exception):
    """Invalid configuration; the message names the offending key."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return text
    return parse


@dataclass(frozen=True)
class KeyEntry:
    key: str                      # file key == flag name without "--"
    field: str                    # TrainConfig field
    parse: Callable[[str], object]


KEY_TABLE: tuple[KeyEntry, ...] = (
    KeyEntry("max-steps", "max_train_steps", int),
    KeyEntry("eval-freq", "evaluate_freq", int),
    KeyEntry("target-update-freq", "target_update_freq", int),
    KeyEntry("algo", "base_algorithm", _choice("vdn", "qmix")),
    KeyEntry("epsilon-decay-steps", "epsilon_decay_steps", int),
    KeyEntry("epsilon-max", "epsilon_max", float),
    KeyEntry("epsilon-min", "epsilon_min", float),
    KeyEntry("buffer-size", "buffer_size", int),
    KeyEntry("batch-size", "batch_size", int),
    KeyEntry("lr", "learning_rate", float),
    KeyEntry("gamma", "gamma", float),
    KeyEntry("mix-hidden-num", "mix_hidden_num", int),
    KeyEntry("mix-hidden-dim", "mix_hidden_dim", int),
    KeyEntry("optimizer", "optimizer", _choice("adam")),
    KeyEntry("grad-clip", "grad_clip", _parse_bool),
    KeyEntry("grad-clip-norm", "grad_clip_norm", float),
    KeyEntry("activation", "activation", _choice("relu", "tanh", "linear")),
    KeyEntry("orthogonal-init", "orthogonal_init", _parse_bool),
    KeyEntry("lr-decay", "lr_decay", _parse_bool),
    KeyEntry("soft-update", "blend_tau", float),
    KeyEntry("reward-buffer-size", "reward_buffer_size", int),
    KeyEntry("agg-freq", "aggregation_interval", int),
    KeyEntry("personalized-layers", "personalized_layers", int),
    KeyEntry("sharing", "sharing", _choice("none", "apps", "rspps", "pppps")),
    KeyEntry("env", "env_name", _choice(*ENV_NAMES)),
    KeyEntry("seed", "seed", int),
    KeyEntry("out-dir", "out_dir", str),
    KeyEntry("eval-episodes", "n_eval_episodes", int),
)

_BY_KEY = {entry.key: entry for entry in KEY_TABLE}


def validate_config(config: TrainConfig) -> None:
    """Cross-field constraints; raises ConfigError naming the bad key."""
    checks = [
        ("max-steps", config.max_train_steps >= 0, "must be >= 0"),
        ("eval-freq", config.evaluate_freq >= 1, "must be >= 1"),
        ("target-update-freq", config.target_update_freq >= 1, "must be >= 1"),
        ("epsilon-decay-steps", config.epsilon_decay_steps >= 1, "must be >= 1"),
        ("epsilon-max", 0.0 <= config.epsilon_max <= 1.0, "must be in [0, 1]"),
        ("epsilon-min", 0.0 <= config.epsilon_min <= config.epsilon_max,
         "must be in [0, epsilon-max]"),
        ("buffer-size", config.buffer_size >= 1, "must be >= 1"),
        ("batch-size", 1 <= config.batch_size <= config.buffer_size,
         "must be in [1, buffer-size]"),
        ("lr", config.learning_rate > 0.0, "must be positive"),
        ("gamma", 0.0 <= config.gamma <= 1.0, "must be in [0, 1]"),
        ("mix-hidden-num", config.mix_hidden_num == 1,
         "only a single mixing hidden layer is supported"),
        ("mix-hidden-dim", config.mix_hidden_dim >= 1, "must be >= 1"),
        ("grad-clip-norm", config.grad_clip_norm > 0.0, "must be positive"),
        ("lr-decay", config.lr_decay is False, "learning-rate decay is not supported"),
        ("soft-update", 0.0 < config.blend_tau <= 1.0, "must be in (0, 1]"),
        ("reward-buffer-size", config.reward_buffer_size >= 1, "must be >= 1"),
        ("agg-freq", config.aggregation_interval >= 1, "must be >= 1"),
        ("personalized-layers", config.personalized_layers >= 0, "must be >= 0"),
        ("eval-episodes", config.n_eval_episodes >= 1, "must be >= 1"),
        ("sharing", config.sharing != "pppps" or config.personalized_layers >= 1,
         "pppps requires personalized-layers >= 1"),
    ]
    for key, ok, message in checks:
        if not ok:
            raise ConfigError(f"{key}: {message}")


def _read_config_file(path: str) -> dict[str, str]:
    text = Path(path).read_text()
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _BY_KEY:
            raise ConfigError(f"unknown key {key!r} (line {lineno})")
        values[key] = value
    return values


def parse_config(path: str | None, overrides: dict[str, str] | None = None
                 ) -> TrainConfig:
    """Defaults, overridden by the file, overridden by the flags."""
    merged: dict[str, str] = {}
    if path is not None:
        merged.update(_read_config_file(path))
    for key, value in (overrides or {}).items():
        if key not in _BY_KEY:
            raise ConfigError(f"unknown key {key!r}")
        merged[key] = value
    config = TrainConfig()
    parsed = {}
    for key, value in merged.items():
        entry = _BY_KEY[key]
        try:
            parsed[entry.field] = entry.parse(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {value!r} ({exc})") from None
    config = replace(config, **parsed)
    validate_config(config)
    return config


def _flag_overrides(args: argparse.Namespace) -> dict[str, str]:
    overrides = {}
    for entry in KEY_TABLE:
        value = getattr(args, entry.key.replace("-", "_"), None)
        if value is not None:
            overrides[entry.key] = value
    if "out-dir" not in overrides and os.environ.get("FEDMIX_OUT"):
        overrides["out-dir"] = os.environ["FEDMIX_OUT"]
    return overrides


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    for entry in KEY_TABLE:
        parser.add_argument(f"--{entry.key}", dest=entry.key.replace("-", "_"),
                            metavar="VALUE")


def _cmd_run(args: argparse.Namespace) -> int:
    config = parse_config(args.config, _flag_overrides(args))
    result = run(config)
    print(f"run complete: {len(result.rows)} evaluations, "
          f"{result.final_train_step} optimization steps")
    print(f"metrics: {result.metrics_path}")
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    except ValueError:
        raise ConfigError(f"seeds: cannot parse {args.seeds!r}") from None
    if not seeds:
        raise ConfigError("seeds: need at least one seed")
    base = parse_config(args.config, _flag_overrides(args))
    for seed in seeds:
        config = replace(base, seed=seed,
                         out_dir=str(Path(base.out_dir) / f"seed{seed}"))
        result = run(config)
        print(f"seed {seed}: metrics at {result.metrics_path}")
    return EXIT_OK


def _cmd_oracle(args: argparse.Namespace) -> int:
    env = make_env(args.env)
    value = env.optimal_return(int(args.layout_seed))
    print(format(value, "g"))
    return EXIT_OK


def _cmd_check(_: argparse.Namespace) -> int:
    from .selfcheck import run_all_checks
    return EXIT_OK if run_all_checks() else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedmix",
        description="Decentralized multi-agent Q-learning with periodic "
                    "parameter sharing")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="train one configuration")
    _add_config_flags(run_p)
    run_p.set_defaults(handler=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="train one configuration across seeds")
    _add_config_flags(sweep_p)
    sweep_p.add_argument("--seeds", required=True,
                         help="comma-separated master seeds")
    sweep_p.set_defaults(handler=_cmd_sweep)

    oracle_p = sub.add_parser("oracle",
                              help="print the exact optimal episode return")
    oracle_p.add_argument("--env", required=True, choices=ENV_NAMES)
    oracle_p.add_argument("--layout-seed", default="0")
    oracle_p.set_defaults(handler=_cmd_oracle)

    check_p = sub.add_parser("check", help="run the invariant self-test suite")
    check_p.set_defaults(handler=_cmd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failure: diagnostic line, nonzero exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
