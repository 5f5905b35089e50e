"""Command-line entry point ``simulate``."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np
import yaml

from .evolve import NumericalError
from .harness import PRESETS, ConfigError, ExperimentConfig, format_csv, run_experiment, run_preset

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simulate", description="Pulse-sequence pumping of a spin chain via a cooled oscillator."
    )
    parser.add_argument("--config", help="YAML experiment file")
    parser.add_argument("--preset", choices=PRESETS, help="reproduce a built-in figure sweep")
    parser.add_argument("--out", help="CSV output path (default: stdout or the config's output)")
    parser.add_argument("--threads", type=int, default=1, help="parallel sweep workers")
    return parser


def _error(kind: str, message: str, code: int) -> int:
    print("error: " + json.dumps({"kind": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        raw = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    raw = yaml.safe_load(fh) or {}
            except (OSError, yaml.YAMLError) as exc:
                raise ConfigError(f"cannot read {args.config}: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError("configuration must be a mapping")
        elif not args.preset:
            raise ConfigError("either --config or --preset is required")
        out_path = args.out or raw.get("output")
        if args.preset:
            header, rows, resolved = run_preset(args.preset, raw, args.threads)
        else:
            cfg = ExperimentConfig.from_dict(raw)
            header, rows, resolved = run_experiment(cfg, args.threads)
    except ConfigError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _error("numerical", str(exc), EXIT_NUMERICAL)
    text = format_csv(header, rows, resolved)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
