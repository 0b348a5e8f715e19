"""Output-space guidance, the early-stop schedule, and latency accounting.

Output-space guidance extrapolates between a positive and a negative model
prediction (classifier-free guidance).  It is provided both on noise
predictions and on reconstructed clean samples; the two forms commute with
the reconstruction step, which the test suite verifies numerically.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from statistics import median
from typing import Callable

from .errors import DimensionError, ParameterError
from .linalg import Tensor


@dataclass(frozen=True)
class StepPlan:
    """Which sampler steps receive guidance: the first ``guided_steps`` of ``total_steps``."""

    total_steps: int
    guided_steps: int
    step_index: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ParameterError(f"total_steps must be >= 1, got {self.total_steps}")
        if not (0 <= self.guided_steps <= self.total_steps):
            raise ParameterError(
                f"guided_steps must lie in [0, {self.total_steps}], got {self.guided_steps}"
            )
        if not (0 <= self.step_index <= self.total_steps):
            raise ParameterError(f"step_index out of range: {self.step_index}")

    def at_step(self, index: int) -> "StepPlan":
        return replace(self, step_index=index)


def plan_steps(total_steps: int, theta: float) -> StepPlan:
    """Build a plan applying guidance to the first ceil(theta * total_steps) steps."""
    if not (0.0 <= theta <= 1.0):
        raise ParameterError(f"theta must lie in [0, 1], got {theta}")
    guided = min(total_steps, math.ceil(theta * total_steps))
    return StepPlan(total_steps=total_steps, guided_steps=guided)


def guidance_active(plan: StepPlan) -> bool:
    return plan.step_index < plan.guided_steps


def cfg_epsilon(eps_pos: Tensor, eps_neg: Tensor, phi: float) -> Tensor:
    """Extrapolate beyond the positive noise prediction: e+ + phi * (e+ - e-)."""
    if eps_pos.shape != eps_neg.shape:
        raise DimensionError(f"prediction shapes differ: {eps_pos.shape} vs {eps_neg.shape}")
    phi = float(phi)
    if not (phi >= 0.0):
        raise ParameterError(f"phi must be >= 0, got {phi}")
    if phi == 0.0:
        return eps_pos.copy()
    return eps_pos + phi * (eps_pos - eps_neg)


def cfg_x0(x0_pos: Tensor, x0_neg: Tensor, phi: float) -> Tensor:
    """Same extrapolation applied to reconstructed clean samples."""
    if x0_pos.shape != x0_neg.shape:
        raise DimensionError(f"reconstruction shapes differ: {x0_pos.shape} vs {x0_neg.shape}")
    phi = float(phi)
    if not (phi >= 0.0):
        raise ParameterError(f"phi must be >= 0, got {phi}")
    if phi == 0.0:
        return x0_pos.copy()
    return x0_pos + phi * (x0_pos - x0_neg)


@dataclass(frozen=True)
class LatencyRecord:
    """Median per-step wall-clock cost, in milliseconds."""

    baseline_ms: float
    guidance_overhead_ms: float

    def __post_init__(self):
        if self.baseline_ms < 0.0 or self.guidance_overhead_ms < 0.0:
            raise ParameterError("latency durations must be non-negative")


def measure_step(
    f_baseline: Callable[[], object],
    f_guided: Callable[[], object],
    repeats: int = 5,
) -> LatencyRecord:
    """Time one sampler step with and without guidance.

    Both callables run ``repeats`` times (plus one warm-up each) on the
    current thread; medians are compared and the overhead is clamped at zero
    so timer jitter cannot produce a negative cost.
    """
    if repeats < 5:
        raise ParameterError(f"repeats must be >= 5, got {repeats}")

    def _median_ms(f: Callable[[], object]) -> float:
        f()  # warm-up, excluded
        samples = []
        for _ in range(repeats):
            start = time.perf_counter()
            f()
            samples.append((time.perf_counter() - start) * 1e3)
        return median(samples)

    base = _median_ms(f_baseline)
    guided = _median_ms(f_guided)
    return LatencyRecord(baseline_ms=base, guidance_overhead_ms=max(0.0, guided - base))


def latency_csv_rows(records: list[LatencyRecord]) -> list[tuple[int, float, float]]:
    """Rows of (step, baseline_ms, overhead_ms) for CSV export."""
    return [(i, r.baseline_ms, r.guidance_overhead_ms) for i, r in enumerate(records)]
