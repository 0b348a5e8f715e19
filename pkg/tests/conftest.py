import sys
import time
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))  # make `oracles` importable

from guidance_lab.experiments import ExperimentConfig, prepare_model
from guidance_lab.toymodel import save_model

settings.register_profile(
    "suite", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def default_experiment_config():
    """The shipped default experiment (the acceptance configuration)."""
    return ExperimentConfig()


@pytest.fixture(scope="session")
def trained_default_models(default_experiment_config, tmp_path_factory):
    """One trained model per default seed, plus total training wall time.

    Shared across the acceptance criteria and the slower experiment tests so
    the default recipe only runs once per session.
    """
    config = default_experiment_config
    models = {}
    t0 = time.perf_counter()
    for seed in config.seeds:
        models[seed] = prepare_model(config, seed)
    train_seconds = time.perf_counter() - t0

    weights_dir = tmp_path_factory.mktemp("default_weights")
    paths = {}
    for seed, model in models.items():
        path = weights_dir / f"seed{seed}.bin"
        save_model(model, path)
        paths[seed] = path
    return {"models": models, "paths": paths, "train_seconds": train_seconds}
