"""Command-line front end for the experiment harness.

Precedence for every option: command-line flag > config file > built-in
default.  Config files are TOML with flat keys matching
:class:`~guidance_lab.experiments.ExperimentConfig` fields.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields, replace
from pathlib import Path

try:  # tomllib landed in the standard library with 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter version
    import tomli as tomllib

from .attention import STRATEGIES
from .errors import ConfigError
from .experiments import SWEEPABLE, ExperimentConfig, run_experiment, run_latency

_CONFIG_FIELDS = {f.name for f in fields(ExperimentConfig)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="guidance-lab",
        description="Train the toy denoiser and compare negative-guidance strategies.",
    )
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--phi", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--seeds", type=str, help="comma-separated list, e.g. 0,1,2,3,4")
    p.add_argument("--disable-normalization", action="store_true", default=None)
    p.add_argument("--disable-refinement", action="store_true", default=None)
    p.add_argument("--out", type=str, help="output directory")
    p.add_argument("--latency", action="store_true", help="run the latency table instead")
    p.add_argument("--sweep", type=str, help="PARAM=V1,V2,... sweep over one parameter")
    p.add_argument("--n-samples", type=int, dest="n_samples")
    p.add_argument("--model-path", type=str, dest="model_path")
    return p


def load_config_file(path: Path) -> dict:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    for key in doc:
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"{key}: unknown configuration field")
    return doc


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"seeds: expected comma-separated integers, got {text!r}") from exc


def _parse_sweep(text: str) -> tuple[str, tuple]:
    if "=" not in text:
        raise ConfigError(f"sweep: expected PARAM=V1,V2,..., got {text!r}")
    param, _, values = text.partition("=")
    param = param.strip()
    if param not in SWEEPABLE:
        raise ConfigError(f"sweep: parameter must be one of {SWEEPABLE}, got {param!r}")
    parts = [v.strip() for v in values.split(",") if v.strip() != ""]
    if not parts:
        raise ConfigError("sweep: needs at least one value")
    if param == "strategy":
        return param, tuple(parts)
    if param == "steps":
        return param, tuple(int(v) for v in parts)
    return param, tuple(float(v) for v in parts)


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig()
    if args.config is not None:
        doc = load_config_file(args.config)
        if "seeds" in doc:
            doc["seeds"] = tuple(doc["seeds"])
        if "centers" in doc:
            doc["centers"] = tuple(tuple(c) for c in doc["centers"])
        if "sweep_values" in doc:
            doc["sweep_values"] = tuple(doc["sweep_values"])
        try:
            config = replace(config, **doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    overrides = {}
    for name in ("strategy", "phi", "tau", "alpha", "theta", "steps", "n_samples", "model_path"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.seeds is not None:
        overrides["seeds"] = _parse_seeds(args.seeds)
    if args.disable_normalization is not None:
        overrides["disable_normalization"] = True
    if args.disable_refinement is not None:
        overrides["disable_refinement"] = True
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.sweep is not None:
        param, values = _parse_sweep(args.sweep)
        overrides["sweep_param"] = param
        overrides["sweep_values"] = values
    if args.model_path is not None:
        overrides["train_fresh"] = False
    config = replace(config, **overrides)
    config.validate()
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.latency:
        rows = run_latency(config)
        print(f"latency table written to {Path(config.out_dir) / 'latency.csv'}")
        for row in rows:
            print(
                f"  {row['strategy']:>5}: baseline {row['baseline_ms']:.3f} ms, "
                f"overhead {row['overhead_ms']:.3f} ms ({row['overhead_pct']:.1f}%)"
            )
        return 0

    report = run_experiment(config)
    out = Path(config.out_dir)
    print(f"results written to {out / 'results.csv'}")
    print(f"summary written to {out / 'summary.json'}")
    print(
        f"first setting (seed medians): suppression_rate={report.suppression_rate:.4f}, "
        f"mean_neg_mode_distance={report.mean_neg_mode_distance:.4f}, "
        f"w2_to_target={report.w2_to_target:.4f}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
