"""Noise schedules and deterministic samplers.

Two path conventions coexist and stay module-local:

* diffusion ("ddpm" schedules): ``x_0`` is the clean sample and ``abar_t``
  walks from near 1 (clean) down toward 0 (noise); the reverse sampler is a
  deterministic DDIM-style update (eta = 0), so trajectories are pure
  functions of (weights, conditions, schedule, config, seed).
* flow ("flow" schedules): time runs 0 -> 1 from the noise base to data and
  sampling is explicit Euler integration of a learned velocity field.

Initial noise always comes from a counter-based Philox generator keyed by
the seed, which keeps trajectories reproducible across platforms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .attention import GuidanceConfig, NagTrace
from .errors import DimensionError, ParameterError, SingularScheduleError
from .guidance import cfg_epsilon, guidance_active, plan_steps
from .linalg import Tensor

SCHEDULE_KINDS = ("ddpm", "flow")


@dataclass(frozen=True)
class NoiseSchedule:
    """Either a decreasing ``abar`` ladder (ddpm) or an increasing time grid (flow)."""

    kind: str
    alphas_bar: Tensor | None = None
    time_grid: Tensor | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ParameterError(f"kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}")
        if self.kind == "ddpm":
            a = self.alphas_bar
            if a is None or a.ndim != 1 or len(a) < 1:
                raise ParameterError("ddpm schedule needs a 1-d alphas_bar with at least one step")
            if not np.all((a > 0.0) & (a < 1.0)):
                raise ParameterError("alphas_bar values must lie strictly in (0, 1)")
            if len(a) > 1 and not np.all(np.diff(a) < 0.0):
                raise ParameterError("alphas_bar must be strictly decreasing in t")
        else:
            g = self.time_grid
            if g is None or g.ndim != 1 or len(g) < 2:
                raise ParameterError("flow schedule needs a 1-d time_grid with at least two points")
            if g[0] != 0.0 or g[-1] != 1.0:
                raise ParameterError("time_grid must start at 0 and end at 1")
            if not np.all(np.diff(g) > 0.0):
                raise ParameterError("time_grid must be strictly increasing")

    @property
    def total_steps(self) -> int:
        if self.kind == "ddpm":
            return len(self.alphas_bar)
        return len(self.time_grid) - 1


def cosine_schedule(total_steps: int) -> NoiseSchedule:
    """Cosine-squared signal profile discretized to ``total_steps`` levels.

    abar_t = cos(pi/2 * t / (T + 1))^2 for t = 1..T, which stays strictly
    inside (0, 1) for every T.
    """
    if total_steps < 1:
        raise ParameterError(f"total_steps must be >= 1, got {total_steps}")
    t = np.arange(1, total_steps + 1, dtype=np.float64)
    abar = np.cos(0.5 * np.pi * t / (total_steps + 1)) ** 2
    return NoiseSchedule(kind="ddpm", alphas_bar=abar)


def uniform_flow_grid(total_steps: int) -> NoiseSchedule:
    if total_steps < 1:
        raise ParameterError(f"total_steps must be >= 1, got {total_steps}")
    return NoiseSchedule(kind="flow", time_grid=np.linspace(0.0, 1.0, total_steps + 1))


def forward_noise(x0: Tensor, eps: Tensor, abar_t: float) -> Tensor:
    """Noise a clean sample to signal level abar_t: sqrt(abar)*x0 + sqrt(1-abar)*eps."""
    abar_t = float(abar_t)
    if not (0.0 < abar_t < 1.0):
        raise ParameterError(f"abar_t must lie in (0, 1), got {abar_t}")
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 and eps shapes differ: {x0.shape} vs {eps.shape}")
    return np.sqrt(abar_t) * x0 + np.sqrt(1.0 - abar_t) * eps


def reconstruct_x0(x_t: Tensor, eps_hat: Tensor, abar_t: float) -> Tensor:
    """Invert forward_noise given a noise estimate: (x_t - sqrt(1-abar)*eps_hat) / sqrt(abar)."""
    abar_t = float(abar_t)
    if abar_t == 0.0:
        raise SingularScheduleError("abar_t = 0 makes the reconstruction singular")
    if not (0.0 < abar_t < 1.0):
        raise ParameterError(f"abar_t must lie in (0, 1), got {abar_t}")
    if x_t.shape != eps_hat.shape:
        raise DimensionError(f"x_t and eps_hat shapes differ: {x_t.shape} vs {eps_hat.shape}")
    return (x_t - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)


@dataclass
class SamplerState:
    """Final sampler output plus an optional per-step snapshot list."""

    x: Tensor
    step: int
    rng_seed: int
    trajectory: list[Tensor] | None = None


def write_trajectory_csv(state: SamplerState, path) -> None:
    """Columnar dump of a recorded trajectory: (step, sample, x0, x1, ...)."""
    if state.trajectory is None:
        raise ParameterError("sampler state has no recorded trajectory")
    dim = state.trajectory[0].shape[-1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "sample"] + [f"x{i}" for i in range(dim)])
        for step, snapshot in enumerate(state.trajectory):
            for sample, row in enumerate(np.atleast_2d(snapshot)):
                writer.writerow([step, sample] + [repr(float(v)) for v in row])


def initial_noise(shape: tuple[int, ...], seed: int) -> Tensor:
    """Standard normal draw from a counter-based (Philox) generator."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed))).standard_normal(shape)


def _predict(model, x, t, cond_pos, cond_neg, cfg, active, trace_sink, step, output_guidance=None,
             output_active=False):
    """One guided model evaluation.

    Attention-space strategies run inside a single forward pass of the
    positive branch; output-space guidance, when composed on top, then
    extrapolates that branch against a plain negative pass.  The negative
    condition is only touched when some guidance actually uses it.
    """
    if cfg.strategy == "cfg":
        pred_pos = model.forward(x, t, cond_pos)
        if active:
            pred_neg = model.forward(x, t, cond_neg)
            pred_pos = cfg_epsilon(pred_pos, pred_neg, cfg.phi)
    elif cfg.strategy in ("nasa", "nag") and active:
        pred_pos, trace = model.forward_guided(
            x, t, cond_pos, cond_neg, cfg, collect_trace=trace_sink is not None
        )
        if trace_sink is not None and trace is not None:
            trace_sink.append((step, trace))
    else:
        pred_pos = model.forward(x, t, cond_pos)

    if output_guidance is not None and output_active:
        pred_neg = model.forward(x, t, cond_neg)
        pred_pos = cfg_epsilon(pred_pos, pred_neg, output_guidance.phi)
    return pred_pos


def ddpm_sample(
    model,
    cond_pos,
    cond_neg,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
    seed: int,
    *,
    n_samples: int = 1,
    record_trajectory: bool = False,
    trace_sink: list[tuple[int, NagTrace]] | None = None,
    output_guidance: GuidanceConfig | None = None,
) -> SamplerState:
    """Deterministic DDIM-style reverse pass over the full abar ladder.

    Each step predicts noise under the configured guidance, reconstructs the
    clean estimate and re-noises it to the next (less noisy) level reusing
    the same prediction.  ``output_guidance`` composes output-space
    extrapolation on top of whatever attention-space strategy ``cfg``
    selects (the attention-guided branch plays the positive role).
    """
    if schedule.kind != "ddpm":
        raise ParameterError(f"ddpm_sample needs a ddpm schedule, got {schedule.kind!r}")
    if getattr(model, "parameterization", "epsilon") != "epsilon":
        raise ParameterError("ddpm_sample requires a noise-predicting model")
    if output_guidance is not None and output_guidance.strategy != "cfg":
        raise ParameterError("output_guidance must use strategy 'cfg'")
    abar = schedule.alphas_bar
    total = len(abar)
    plan = plan_steps(total, cfg.theta)
    out_plan = plan_steps(total, output_guidance.theta) if output_guidance is not None else None

    x = initial_noise((n_samples, model.data_dim), seed)
    trajectory = [x.copy()] if record_trajectory else None
    for i in range(total):
        a_t = float(abar[total - 1 - i])  # most-noised level first
        active = guidance_active(plan.at_step(i))
        out_active = out_plan is not None and guidance_active(out_plan.at_step(i))
        eps_hat = _predict(
            model, x, a_t, cond_pos, cond_neg, cfg, active, trace_sink, i,
            output_guidance, out_active,
        )
        x0_hat = reconstruct_x0(x, eps_hat, a_t)
        if i == total - 1:
            x = x0_hat
        else:
            a_next = float(abar[total - 2 - i])
            x = forward_noise(x0_hat, eps_hat, a_next)
        if record_trajectory:
            trajectory.append(x.copy())
    return SamplerState(x=x, step=total, rng_seed=seed, trajectory=trajectory)


def flow_sample(
    model,
    cond_pos,
    cond_neg,
    schedule: NoiseSchedule,
    cfg: GuidanceConfig,
    seed: int,
    *,
    n_samples: int = 1,
    record_trajectory: bool = False,
    trace_sink: list[tuple[int, NagTrace]] | None = None,
    output_guidance: GuidanceConfig | None = None,
) -> SamplerState:
    """Explicit Euler integration of the learned velocity field from t=0 to t=1."""
    if schedule.kind != "flow":
        raise ParameterError(f"flow_sample needs a flow schedule, got {schedule.kind!r}")
    if getattr(model, "parameterization", "velocity") != "velocity":
        raise ParameterError("flow_sample requires a velocity-predicting model")
    if output_guidance is not None and output_guidance.strategy != "cfg":
        raise ParameterError("output_guidance must use strategy 'cfg'")
    grid = schedule.time_grid
    total = len(grid) - 1
    plan = plan_steps(total, cfg.theta)
    out_plan = plan_steps(total, output_guidance.theta) if output_guidance is not None else None

    x = initial_noise((n_samples, model.data_dim), seed)
    trajectory = [x.copy()] if record_trajectory else None
    for k in range(total):
        t_k = float(grid[k])
        dt = float(grid[k + 1]) - t_k
        active = guidance_active(plan.at_step(k))
        out_active = out_plan is not None and guidance_active(out_plan.at_step(k))
        v = _predict(
            model, x, t_k, cond_pos, cond_neg, cfg, active, trace_sink, k,
            output_guidance, out_active,
        )
        x = x + dt * v
        if record_trajectory:
            trajectory.append(x.copy())
    return SamplerState(x=x, step=total, rng_seed=seed, trajectory=trajectory)
