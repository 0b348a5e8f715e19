"""Experiment harness: strategy comparisons, sweeps, ablations, latency tables.

A run trains (or loads) one toy model per seed, samples a population under
the configured guidance, and writes:

* ``results.csv``   -- one row per setting x seed carrying the full
  hyperparameter tuple plus the metrics; byte-identical across re-runs with
  the same config (wall-clock details go to ``run_log.txt`` instead).
* ``summary.json``  -- per-setting medians plus the echoed config, versioned
  with ``schema_version``.
* ``traces/``       -- per-step guided-attention traces of the first sample
  of the first seed of each setting.
* ``weights/``      -- trained weights per seed in the binary container.

Sweeps vary exactly one guidance-side parameter, so trained models are
shared across settings within a run.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from statistics import median

import numpy as np

from .attention import STRATEGIES, GuidanceConfig
from .diffusion import cosine_schedule, ddpm_sample, initial_noise, reconstruct_x0
from .errors import ConfigError
from .guidance import cfg_epsilon, measure_step
from .metrics import W2_MAX_POINTS, MetricsReport, build_report
from .toymodel import DenoiserModel, init_model, load_model, make_dataset, save_model, train

SCHEMA_VERSION = 1
ENV_THREADS = "GUIDANCE_LAB_THREADS"
SWEEPABLE = ("strategy", "phi", "tau", "alpha", "theta", "steps")

RESULT_COLUMNS = (
    "schema_version",
    "setting",
    "strategy",
    "phi",
    "tau",
    "alpha",
    "theta",
    "steps",
    "disable_normalization",
    "disable_refinement",
    "sigma",
    "n_per_class",
    "n_samples",
    "train_epochs",
    "train_lr",
    "train_schedule_steps",
    "batch_size",
    "seed",
    "suppression_rate",
    "mean_neg_mode_distance",
    "w2_to_target",
)

LATENCY_COLUMNS = ("strategy", "baseline_ms", "overhead_ms", "overhead_pct")


@dataclass
class ExperimentConfig:
    """Everything a run needs; flat on purpose so TOML files stay simple."""

    strategy: str = "nag"
    phi: float = 4.0
    tau: float = 2.5
    alpha: float = 0.25
    theta: float = 1.0
    steps: int = 4
    seeds: tuple = (0, 1, 2, 3, 4)
    n_samples: int = 500
    n_per_class: int = 400
    sigma: float = 1.3
    centers: tuple = ((-2.0, 0.0), (2.0, 0.0))
    positive_class: int = 0
    negative_class: int = 1
    train_fresh: bool = True
    model_path: str | None = None
    train_epochs: int = 60
    train_lr: float = 1e-2
    train_schedule_steps: int = 64
    batch_size: int = 32
    out_dir: str = "runs/default"
    disable_normalization: bool = False
    disable_refinement: bool = False
    sweep_param: str | None = None
    sweep_values: tuple | None = None
    latency_batch: int = 64
    latency_repeats: int = 9

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy: must be one of {STRATEGIES}, got {self.strategy!r}")
        if not (self.phi >= 0.0):
            raise ConfigError(f"phi: must be >= 0, got {self.phi}")
        if not (self.tau > 0.0):
            raise ConfigError(f"tau: must be > 0, got {self.tau}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha: must lie in [0, 1], got {self.alpha}")
        if not (0.0 <= self.theta <= 1.0):
            raise ConfigError(f"theta: must lie in [0, 1], got {self.theta}")
        if self.steps < 1:
            raise ConfigError(f"steps: must be >= 1, got {self.steps}")
        if len(self.seeds) < 1 or any(int(s) != s for s in self.seeds):
            raise ConfigError(f"seeds: must be a non-empty list of integers, got {self.seeds!r}")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples: must be >= 1, got {self.n_samples}")
        if self.n_per_class < 1:
            raise ConfigError(f"n_per_class: must be >= 1, got {self.n_per_class}")
        if not (self.sigma >= 0.0):
            raise ConfigError(f"sigma: must be >= 0, got {self.sigma}")
        n_classes = len(self.centers)
        if n_classes < 2:
            raise ConfigError(f"centers: need at least two modes, got {n_classes}")
        for name in ("positive_class", "negative_class"):
            v = getattr(self, name)
            if not (0 <= v < n_classes):
                raise ConfigError(f"{name}: must index a mode in [0, {n_classes - 1}], got {v}")
        if self.positive_class == self.negative_class:
            raise ConfigError("negative_class: must differ from positive_class")
        if (self.disable_normalization or self.disable_refinement) and self.strategy != "nag":
            raise ConfigError(
                "disable_normalization/disable_refinement: only valid with strategy 'nag'"
            )
        if self.model_path is None and not self.train_fresh:
            raise ConfigError("train_fresh: must be true when no model_path is given")
        if self.model_path is not None and self.train_fresh:
            raise ConfigError("train_fresh: set to false when model_path is given")
        if self.train_epochs < 1 and self.model_path is None:
            raise ConfigError(f"train_epochs: must be >= 1, got {self.train_epochs}")
        if not (self.train_lr >= 0.0):
            raise ConfigError(f"train_lr: must be >= 0, got {self.train_lr}")
        if self.train_schedule_steps < 1:
            raise ConfigError(f"train_schedule_steps: must be >= 1, got {self.train_schedule_steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size: must be >= 1, got {self.batch_size}")
        if (self.sweep_param is None) != (self.sweep_values is None):
            raise ConfigError("sweep_param/sweep_values: must be given together")
        if self.sweep_param is not None:
            if self.sweep_param not in SWEEPABLE:
                raise ConfigError(
                    f"sweep_param: must be one of {SWEEPABLE}, got {self.sweep_param!r}"
                )
            if len(self.sweep_values) < 1:
                raise ConfigError("sweep_values: must be non-empty")
        if self.latency_batch < 1:
            raise ConfigError(f"latency_batch: must be >= 1, got {self.latency_batch}")
        if self.latency_repeats < 5:
            raise ConfigError(f"latency_repeats: must be >= 5, got {self.latency_repeats}")

    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(
            strategy=self.strategy,
            phi=self.phi,
            tau=self.tau,
            alpha=self.alpha,
            theta=self.theta,
            disable_normalization=self.disable_normalization,
            disable_refinement=self.disable_refinement,
        )


def default_config(**overrides) -> ExperimentConfig:
    cfg = replace(ExperimentConfig(), **overrides)
    cfg.validate()
    return cfg


def _sub_seeds(seed: int) -> tuple[int, int, int, int]:
    """Independent streams per role: dataset, training, sampling, w2 target."""
    state = np.random.SeedSequence(int(seed)).generate_state(4, np.uint64)
    return tuple(int(v) for v in state)


def _worker_count(n_tasks: int) -> int:
    env = os.environ.get(ENV_THREADS)
    if env is None:
        return 1
    try:
        cap = int(env)
    except ValueError as exc:
        raise ConfigError(f"{ENV_THREADS}: must be an integer, got {env!r}") from exc
    return max(1, min(cap, n_tasks))


def prepare_model(config: ExperimentConfig, seed: int) -> DenoiserModel:
    """Load weights if a path is configured, otherwise train fresh for this seed."""
    if config.model_path is not None:
        return load_model(config.model_path)
    data_seed, train_seed, _, _ = _sub_seeds(seed)
    dataset = make_dataset(config.n_per_class, config.centers, config.sigma, seed=data_seed)
    model = init_model(n_classes=len(config.centers), seed=train_seed)
    return train(
        model,
        dataset,
        cosine_schedule(config.train_schedule_steps),
        epochs=config.train_epochs,
        lr=config.train_lr,
        seed=train_seed,
        batch_size=config.batch_size,
    )


def run_setting(
    setting: ExperimentConfig,
    seed: int,
    model: DenoiserModel,
    collect_traces: bool = False,
):
    """Sample one population under one setting and score it."""
    _, _, sample_seed, target_seed = _sub_seeds(seed)
    cond_pos = model.condition(setting.positive_class)
    cond_neg = model.condition(setting.negative_class)
    sink: list | None = [] if collect_traces else None
    state = ddpm_sample(
        model,
        cond_pos,
        cond_neg,
        cosine_schedule(setting.steps),
        setting.guidance(),
        sample_seed,
        n_samples=setting.n_samples,
        trace_sink=sink,
    )
    m = min(setting.n_samples, W2_MAX_POINTS)
    target_set = make_dataset(m, setting.centers, setting.sigma, seed=target_seed)
    target = target_set.x0[target_set.labels == setting.positive_class]
    report = build_report(
        state.x,
        neg_center=np.asarray(setting.centers[setting.negative_class], dtype=np.float64),
        pos_center=np.asarray(setting.centers[setting.positive_class], dtype=np.float64),
        target=target,
    )
    return report, sink


def _expand_settings(config: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    if config.sweep_param is None:
        return [("default", config)]
    out = []
    for value in config.sweep_values:
        if config.sweep_param == "steps":
            value = int(value)
        elif config.sweep_param != "strategy":
            value = float(value)
        label = f"{config.sweep_param}={value}"
        setting = replace(config, sweep_param=None, sweep_values=None,
                          **{config.sweep_param: value})
        setting.validate()  # surface bad sweep values before any training
        out.append((label, setting))
    return out


def _result_row(label: str, setting: ExperimentConfig, seed: int, report: MetricsReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "setting": label,
        "strategy": setting.strategy,
        "phi": setting.phi,
        "tau": setting.tau,
        "alpha": setting.alpha,
        "theta": setting.theta,
        "steps": setting.steps,
        "disable_normalization": setting.disable_normalization,
        "disable_refinement": setting.disable_refinement,
        "sigma": setting.sigma,
        "n_per_class": setting.n_per_class,
        "n_samples": setting.n_samples,
        "train_epochs": setting.train_epochs,
        "train_lr": setting.train_lr,
        "train_schedule_steps": setting.train_schedule_steps,
        "batch_size": setting.batch_size,
        "seed": seed,
        "suppression_rate": report.suppression_rate,
        "mean_neg_mode_distance": report.mean_neg_mode_distance,
        "w2_to_target": report.w2_to_target,
    }


def run_experiment(config: ExperimentConfig) -> MetricsReport:
    """Execute the configured run, write all artifacts, return the aggregate report.

    The returned report holds the seed-median metrics of the first setting;
    its ``n_samples`` counts every point that went into those medians.
    """
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(exist_ok=True)
    (out / "weights").mkdir(exist_ok=True)
    log_lines = [f"started {time.strftime('%Y-%m-%dT%H:%M:%S')}"]
    t0 = time.perf_counter()

    settings = _expand_settings(config)
    seeds = sorted(int(s) for s in config.seeds)

    models: dict[int, DenoiserModel] = {}

    def _prepare(seed: int) -> tuple[int, DenoiserModel]:
        return seed, prepare_model(config, seed)

    workers = _worker_count(len(seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for seed, model in pool.map(_prepare, seeds):
                models[seed] = model
    else:
        for seed in seeds:
            models[seed] = prepare_model(config, seed)
    log_lines.append(f"models ready after {time.perf_counter() - t0:.2f}s")

    rows = []
    for label, setting in settings:
        for i, seed in enumerate(seeds):
            collect = i == 0
            report, sink = run_setting(setting, seed, models[seed], collect_traces=collect)
            rows.append(_result_row(label, setting, seed, report))
            if collect and sink is not None:
                trace_doc = {
                    "schema_version": SCHEMA_VERSION,
                    "setting": label,
                    "seed": seed,
                    "steps": [{"step": step, "trace": tr.to_dict()} for step, tr in sink],
                }
                path = out / "traces" / f"{label.replace('=', '_')}_seed{seed}.json"
                path.write_text(json.dumps(trace_doc, sort_keys=True, indent=2))
    rows.sort(key=lambda r: (r["setting"], r["seed"]))

    if config.model_path is None:
        for seed in seeds:
            save_model(models[seed], out / "weights" / f"seed{seed}.bin")

    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    summary_settings = []
    first_report: MetricsReport | None = None
    for label, setting in settings:
        setting_rows = [r for r in rows if r["setting"] == label]
        agg = {
            "setting": label,
            "strategy": setting.strategy,
            "phi": setting.phi,
            "tau": setting.tau,
            "alpha": setting.alpha,
            "theta": setting.theta,
            "steps": setting.steps,
            "n_seeds": len(setting_rows),
            "median_suppression_rate": median(r["suppression_rate"] for r in setting_rows),
            "median_mean_neg_mode_distance": median(
                r["mean_neg_mode_distance"] for r in setting_rows
            ),
            "median_w2_to_target": median(r["w2_to_target"] for r in setting_rows),
        }
        summary_settings.append(agg)
        if first_report is None:
            first_report = MetricsReport(
                suppression_rate=agg["median_suppression_rate"],
                mean_neg_mode_distance=agg["median_mean_neg_mode_distance"],
                w2_to_target=agg["median_w2_to_target"],
                n_samples=setting.n_samples * len(setting_rows),
            )
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config": _config_doc(config),
        "settings": summary_settings,
    }
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))

    log_lines.append(f"finished after {time.perf_counter() - t0:.2f}s")
    (out / "run_log.txt").write_text("\n".join(log_lines) + "\n")
    return first_report


def _config_doc(config: ExperimentConfig) -> dict:
    doc = asdict(config)
    doc["seeds"] = [int(s) for s in config.seeds]
    doc["centers"] = [list(map(float, c)) for c in config.centers]
    if config.sweep_values is not None:
        doc["sweep_values"] = list(config.sweep_values)
    return doc


def _latency_model(config: ExperimentConfig) -> DenoiserModel:
    # Wide encoder, narrow attention head: the shared model-side cost then
    # dominates the duplicated attention work, mirroring the regime where
    # attention-space guidance is cheap relative to a second full pass.
    return init_model(
        n_classes=len(config.centers), d_text=8, d_query=256, d_k=4, n_slots=8, seed=0
    )


def run_latency(config: ExperimentConfig) -> list[dict]:
    """Median per-step latency and overhead versus the unguided step.

    Writes ``latency.csv`` with exactly the columns
    (strategy, baseline_ms, overhead_ms, overhead_pct).
    """
    config.validate()
    model = _latency_model(config)
    sched = cosine_schedule(config.steps)
    a_t = float(sched.alphas_bar[-1])
    x = initial_noise((config.latency_batch, model.data_dim), 0)
    cond_pos = model.condition(config.positive_class)
    cond_neg = model.condition(config.negative_class)

    def plain_step():
        eps = model.forward(x, a_t, cond_pos)
        return reconstruct_x0(x, eps, a_t)

    def make_step(strategy: str):
        if strategy == "none":
            return plain_step
        if strategy == "cfg":
            cfg = GuidanceConfig("cfg", phi=config.phi)

            def step():
                eps_pos = model.forward(x, a_t, cond_pos)
                eps_neg = model.forward(x, a_t, cond_neg)
                return reconstruct_x0(x, cfg_epsilon(eps_pos, eps_neg, cfg.phi), a_t)

            return step
        cfg = GuidanceConfig(strategy, phi=config.phi, tau=config.tau, alpha=config.alpha)

        def step():
            eps, _ = model.forward_guided(x, a_t, cond_pos, cond_neg, cfg)
            return reconstruct_x0(x, eps, a_t)

        return step

    rows = []
    for strategy in STRATEGIES:
        record = measure_step(plain_step, make_step(strategy), repeats=config.latency_repeats)
        pct = (
            100.0 * record.guidance_overhead_ms / record.baseline_ms
            if record.baseline_ms > 0.0
            else 0.0
        )
        rows.append(
            {
                "strategy": strategy,
                "baseline_ms": record.baseline_ms,
                "overhead_ms": record.guidance_overhead_ms,
                "overhead_pct": pct,
            }
        )

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "latency.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LATENCY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return rows
