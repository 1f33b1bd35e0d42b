"""``gwlimits`` command line: run one verification scenario and write its reports.

Exit codes: 0 pass, 2 statistical fail, 3 invalid config, 1 runtime error.
Diagnostics for codes 1 and 3 are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .scenarios import (SCENARIOS, ConfigError, ScenarioConfig, atomic_write, emit_plot_data,
                        run_scenario, with_overrides, write_report)

EXIT_PASS, EXIT_RUNTIME, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2, 3
DEFAULT_SEED = 2024
SEED_ENV = "GWLIMITS_SEED"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gwlimits", description=__doc__.splitlines()[0])
    p.add_argument("--scenario", choices=SCENARIOS, help="scenario id (overrides the config)")
    p.add_argument("--config", metavar="PATH", help="JSON scenario config")
    p.add_argument("--seed", metavar="U64", help=f"base seed (fallback: ${SEED_ENV})")
    p.add_argument("--replicates", type=int, metavar="N")
    p.add_argument("--workers", type=int, metavar="K", default=None)
    p.add_argument("--out", metavar="DIR", help="directory for the JSON report and CSV curves")
    p.add_argument("--grid-size", type=int, default=200, metavar="G",
                   help="points per plot-data curve (default 200)")
    p.add_argument("--dump-config", action="store_true",
                   help="print the resolved config as JSON and exit")
    return p


def _parse_seed(text: str, source: str) -> int:
    try:
        seed = int(text, 0)
    except ValueError:
        raise ConfigError(f"{source}: seed {text!r} is not an integer") from None
    if not 0 <= seed < 2**64:
        raise ConfigError(f"{source}: seed must be an unsigned 64-bit integer")
    return seed


def resolve_config(args, environ=None) -> ScenarioConfig:
    """Config file, then flags; the seed comes from ``--seed``, the file, ``$GWLIMITS_SEED``
    or the built-in default, in that order."""
    environ = os.environ if environ is None else environ
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    if args.scenario:
        data["scenario"] = args.scenario
    if "scenario" not in data:
        raise ConfigError("no scenario given (use --scenario or a config file)")
    if args.seed is not None:
        data["seed"] = _parse_seed(args.seed, "--seed")
    elif "seed" not in data:
        env = environ.get(SEED_ENV)
        data["seed"] = _parse_seed(env, SEED_ENV) if env else DEFAULT_SEED
    try:
        cfg = ScenarioConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = with_overrides(cfg, replicates=args.replicates, workers=args.workers, out=args.out)
    if args.grid_size < 2:
        raise ConfigError("--grid-size must be at least 2")
    return cfg


def _diagnostic(kind: str, exc: BaseException) -> None:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)},
                     sort_keys=True), file=sys.stderr)


def main(argv=None, environ=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args, environ)
        if args.dump_config:
            print(cfg.to_json())
            return EXIT_PASS
        result = run_scenario(cfg)
    except ConfigError as exc:
        _diagnostic("invalid-config", exc)
        return EXIT_CONFIG
    except Exception as exc:  # every other failure is a runtime error with a diagnostic
        _diagnostic("runtime", exc)
        return EXIT_RUNTIME
    try:
        if cfg.out:
            write_report(result, cfg.out)
            atomic_write(os.path.join(cfg.out, f"{cfg.scenario}.manifest.json"),
                         json.dumps(result.manifest.to_dict(), sort_keys=True, indent=2) + "\n")
            emit_plot_data(result, cfg.out, args.grid_size)
    except (OSError, ValueError) as exc:
        _diagnostic("runtime", exc)
        return EXIT_RUNTIME
    print(result.to_json())
    return EXIT_PASS if result.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
