import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from guidance_lab.attention import GuidanceConfig
from guidance_lab.diffusion import (
    NoiseSchedule,
    cosine_schedule,
    ddpm_sample,
    flow_sample,
    forward_noise,
    initial_noise,
    reconstruct_x0,
    uniform_flow_grid,
)
from guidance_lab.errors import ParameterError, SingularScheduleError
from guidance_lab.guidance import cfg_epsilon
from guidance_lab.toymodel import init_model


class ConstantField:
    """Stub velocity model: v(x, t, c) = c0 everywhere."""

    parameterization = "velocity"
    data_dim = 2

    def __init__(self, value):
        self.value = value

    def forward(self, x, t, cond):
        return np.full_like(x, self.value)


class LinearTimeField:
    """Stub velocity model: v(x, t, c) = t."""

    parameterization = "velocity"
    data_dim = 2

    def forward(self, x, t, cond):
        return np.full_like(x, t)


class RecordingModel:
    """Wraps a real model and records every condition it is asked about."""

    def __init__(self, inner):
        self.inner = inner
        self.conditions = []

    @property
    def parameterization(self):
        return self.inner.parameterization

    @property
    def data_dim(self):
        return self.inner.data_dim

    def forward(self, x, t, cond):
        self.conditions.append(tuple(cond))
        return self.inner.forward(x, t, cond)

    def forward_guided(self, x, t, cond_pos, cond_neg, cfg, collect_trace=False):
        self.conditions.append(tuple(cond_pos))
        self.conditions.append(tuple(cond_neg))
        return self.inner.forward_guided(x, t, cond_pos, cond_neg, cfg, collect_trace)


# --- schedules ---------------------------------------------------------------


def test_cosine_schedule_shape_and_monotonicity():
    sched = cosine_schedule(16)
    a = sched.alphas_bar
    assert len(a) == 16
    assert np.all((a > 0) & (a < 1))
    assert np.all(np.diff(a) < 0)
    assert sched.total_steps == 16


def test_schedule_validation():
    with pytest.raises(ParameterError):
        NoiseSchedule(kind="ddpm", alphas_bar=np.array([0.2, 0.5]))  # increasing
    with pytest.raises(ParameterError):
        NoiseSchedule(kind="ddpm", alphas_bar=np.array([1.0, 0.5]))  # not in (0,1)
    with pytest.raises(ParameterError):
        NoiseSchedule(kind="flow", time_grid=np.array([0.0, 0.5]))  # must end at 1
    with pytest.raises(ParameterError):
        NoiseSchedule(kind="wat")
    grid = uniform_flow_grid(8)
    assert grid.total_steps == 8
    assert grid.time_grid[0] == 0.0 and grid.time_grid[-1] == 1.0


# --- forward / reconstruct ---------------------------------------------------


def test_forward_noise_near_clean_limit():
    x0 = np.array([1.5, -0.5])
    eps = np.array([0.3, 0.8])
    out = forward_noise(x0, eps, 1.0 - 1e-12)
    assert np.allclose(out, x0, atol=1e-5)


def test_forward_noise_pure_noise_component():
    eps = np.array([0.3, 0.8])
    out = forward_noise(np.zeros(2), eps, 0.36)
    assert np.allclose(out, math.sqrt(0.64) * eps, rtol=1e-14)


def test_forward_noise_worked_example():
    out = forward_noise(np.array([2.0]), np.array([4.0]), 0.25)
    assert out == pytest.approx([0.5 * 2.0 + math.sqrt(0.75) * 4.0])


@pytest.mark.parametrize("abar", [0.1, 0.5, 0.9])
def test_round_trip(abar):
    rng = np.random.default_rng(0)
    x0, eps = rng.standard_normal(3), rng.standard_normal(3)
    back = reconstruct_x0(forward_noise(x0, eps, abar), eps, abar)
    assert np.allclose(back, x0, atol=1e-10)


def test_reconstruct_examples_and_errors():
    x_t = np.array([1.0, 2.0])
    assert np.allclose(reconstruct_x0(x_t, np.zeros(2), 0.25), x_t / 0.5)
    xt = forward_noise(np.array([2.0]), np.array([4.0]), 0.25)
    assert reconstruct_x0(xt, np.array([4.0]), 0.25) == pytest.approx([2.0])
    with pytest.raises(SingularScheduleError):
        reconstruct_x0(x_t, x_t, 0.0)
    with pytest.raises(ParameterError):
        forward_noise(x_t, x_t, 1.0)


@given(st.floats(1e-6, 1.0 - 1e-6), st.integers(0, 2**32 - 1))
def test_round_trip_property(abar, seed):
    rng = np.random.default_rng(seed)
    x0, eps = rng.standard_normal(2), rng.standard_normal(2)
    back = reconstruct_x0(forward_noise(x0, eps, abar), eps, abar)
    scale = np.maximum(np.abs(x0), 1.0)
    assert np.all(np.abs(back - x0) / scale <= 1e-8)


# --- ddpm sampler ------------------------------------------------------------


def test_single_step_collapse():
    model = init_model(seed=3)
    sched = cosine_schedule(1)
    cfg = GuidanceConfig("none")
    state = ddpm_sample(model, model.condition(0), model.condition(1), sched, cfg, seed=5,
                        n_samples=3)
    a_t = float(sched.alphas_bar[0])
    x_init = initial_noise((3, 2), 5)
    want = reconstruct_x0(x_init, model.forward(x_init, a_t, model.condition(0)), a_t)
    assert np.array_equal(state.x, want)


def test_sampler_determinism_bitwise():
    model = init_model(seed=1)
    sched = cosine_schedule(4)
    cfg = GuidanceConfig("nag")
    kw = dict(n_samples=8, record_trajectory=True)
    a = ddpm_sample(model, model.condition(0), model.condition(1), sched, cfg, seed=9, **kw)
    b = ddpm_sample(model, model.condition(0), model.condition(1), sched, cfg, seed=9, **kw)
    assert a.x.tobytes() == b.x.tobytes()
    for xa, xb in zip(a.trajectory, b.trajectory):
        assert xa.tobytes() == xb.tobytes()


def test_strategy_none_matches_phi_zero_nag_bitwise():
    model = init_model(seed=2)
    sched = cosine_schedule(4)
    kw = dict(n_samples=8, record_trajectory=True)
    none = ddpm_sample(model, model.condition(0), model.condition(1), sched,
                       GuidanceConfig("none"), seed=11, **kw)
    nag0 = ddpm_sample(model, model.condition(0), model.condition(1), sched,
                       GuidanceConfig("nag", phi=0.0), seed=11, **kw)
    for xa, xb in zip(none.trajectory, nag0.trajectory):
        assert xa.tobytes() == xb.tobytes()


def test_strategy_none_never_reads_negative_condition():
    model = RecordingModel(init_model(seed=4))
    sched = cosine_schedule(3)
    cond_pos, cond_neg = (0, 2), (1, 2)
    ddpm_sample(model, cond_pos, cond_neg, sched, GuidanceConfig("none"), seed=1, n_samples=2)
    assert set(model.conditions) == {cond_pos}


def test_guided_strategies_read_negative_condition():
    for strategy in ("cfg", "nasa", "nag"):
        model = RecordingModel(init_model(seed=4))
        ddpm_sample(model, (0, 2), (1, 2), cosine_schedule(2),
                    GuidanceConfig(strategy, phi=2.0), seed=1, n_samples=2)
        assert (1, 2) in set(model.conditions)


def test_theta_zero_never_guides():
    model = RecordingModel(init_model(seed=6))
    ddpm_sample(model, (0, 2), (1, 2), cosine_schedule(4),
                GuidanceConfig("nag", theta=0.0), seed=1, n_samples=2)
    assert set(model.conditions) == {(0, 2)}


def test_trace_sink_collects_only_guided_steps():
    model = init_model(seed=7)
    sink = []
    ddpm_sample(model, model.condition(0), model.condition(1), cosine_schedule(4),
                GuidanceConfig("nag", theta=0.25), seed=1, n_samples=2, trace_sink=sink)
    assert [step for step, _ in sink] == [0]
    assert sink[0][1].z_pos.shape == (model.n_slots, model.attn.d_k)


def test_sampler_parameterization_mismatch():
    model = init_model(seed=8, parameterization="velocity")
    with pytest.raises(ParameterError):
        ddpm_sample(model, (0, 2), (1, 2), cosine_schedule(2), GuidanceConfig("none"), 0)
    eps_model = init_model(seed=8)
    with pytest.raises(ParameterError):
        flow_sample(eps_model, (0, 2), (1, 2), uniform_flow_grid(2), GuidanceConfig("none"), 0)
    with pytest.raises(ParameterError):
        ddpm_sample(eps_model, (0, 2), (1, 2), uniform_flow_grid(2), GuidanceConfig("none"), 0)


def test_output_guidance_composition_hook():
    """Attention guidance runs inside the positive branch, output-space
    extrapolation is then applied across branches."""
    model = init_model(seed=12)
    sched = cosine_schedule(1)
    nag = GuidanceConfig("nag", phi=3.0)
    out_cfg = GuidanceConfig("cfg", phi=1.5)
    state = ddpm_sample(model, model.condition(0), model.condition(1), sched, nag, seed=3,
                        n_samples=4, output_guidance=out_cfg)

    a_t = float(sched.alphas_bar[0])
    x = initial_noise((4, 2), 3)
    eps_pos, _ = model.forward_guided(x, a_t, model.condition(0), model.condition(1), nag)
    eps_neg = model.forward(x, a_t, model.condition(1))
    want = reconstruct_x0(x, cfg_epsilon(eps_pos, eps_neg, out_cfg.phi), a_t)
    assert np.allclose(state.x, want, rtol=1e-13)

    with pytest.raises(ParameterError):
        ddpm_sample(model, (0, 2), (1, 2), sched, nag, 0, output_guidance=nag)


# --- flow sampler -------------------------------------------------------------


@pytest.mark.parametrize("steps", [1, 3, 7])
def test_flow_constant_field_exact(steps):
    model = ConstantField(1.0)
    sched = uniform_flow_grid(steps)
    state = flow_sample(model, (0,), (1,), sched, GuidanceConfig("none"), seed=2, n_samples=3)
    want = initial_noise((3, 2), 2) + 1.0
    assert np.allclose(state.x, want, rtol=1e-12)


def test_flow_constant_field_other_value():
    model = ConstantField(-2.5)
    state = flow_sample(model, (0,), (1,), uniform_flow_grid(5), GuidanceConfig("none"),
                        seed=4, n_samples=2)
    want = initial_noise((2, 2), 4) - 2.5
    assert np.allclose(state.x, want, rtol=1e-12)


def test_flow_linear_field_integral():
    model = LinearTimeField()
    state = flow_sample(model, (0,), (1,), uniform_flow_grid(1000), GuidanceConfig("none"),
                        seed=6, n_samples=2)
    want = initial_noise((2, 2), 6) + 0.5
    assert np.allclose(state.x, want, atol=1e-3)


def test_flow_euler_first_order_convergence():
    model = LinearTimeField()
    errors = []
    for steps in (8, 16, 32, 64):
        state = flow_sample(model, (0,), (1,), uniform_flow_grid(steps),
                            GuidanceConfig("none"), seed=7, n_samples=1)
        exact = initial_noise((1, 2), 7) + 0.5
        errors.append(float(np.abs(state.x - exact).max()))
    for e_coarse, e_fine in zip(errors, errors[1:]):
        ratio = e_fine / e_coarse
        assert 0.4 <= ratio <= 0.6


def test_flow_sampler_determinism():
    model = ConstantField(0.3)
    a = flow_sample(model, (0,), (1,), uniform_flow_grid(4), GuidanceConfig("none"), 13,
                    n_samples=5, record_trajectory=True)
    b = flow_sample(model, (0,), (1,), uniform_flow_grid(4), GuidanceConfig("none"), 13,
                    n_samples=5, record_trajectory=True)
    assert all(np.array_equal(x, y) for x, y in zip(a.trajectory, b.trajectory))


def test_trajectory_csv_dump(tmp_path):
    import csv as csv_mod

    from guidance_lab.diffusion import write_trajectory_csv

    model = ConstantField(1.0)
    state = flow_sample(model, (0,), (1,), uniform_flow_grid(3), GuidanceConfig("none"), 1,
                        n_samples=2, record_trajectory=True)
    path = tmp_path / "trajectory.csv"
    write_trajectory_csv(state, path)
    with open(path) as fh:
        rows = list(csv_mod.reader(fh))
    assert rows[0] == ["step", "sample", "x0", "x1"]
    assert len(rows) == 1 + 4 * 2  # header + (initial + 3 steps) x 2 samples
    assert float(rows[1][2]) == state.trajectory[0][0, 0]

    bare = flow_sample(model, (0,), (1,), uniform_flow_grid(3), GuidanceConfig("none"), 1)
    with pytest.raises(ParameterError):
        write_trajectory_csv(bare, tmp_path / "none.csv")
