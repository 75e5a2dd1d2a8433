import os
import time
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import settings

from contrasbi.config import parse_config
from contrasbi.simulators import Dataset, generate_dataset
from contrasbi.training import init_model, train, validation_score

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

N_TRAIN, N_VAL, N_TEST = 2000, 2000, 1000


@dataclass
class SyntheticRun:
    sim: object
    config: object
    train: Dataset
    val: Dataset
    test: Dataset
    result: object
    untrained_score: float
    seconds: float


def synthetic_config(kappa, redundant):
    return parse_config(f"[simulator]\nkind = synthetic\nkappa = {kappa}\nredundant = {redundant}\n")


def run_synthetic(kappa, redundant):
    """Train with every default of the synthetic configuration."""
    cfg = synthetic_config(kappa, redundant)
    sim = cfg.simulator()
    prior = cfg.prior(sim)
    train_set = generate_dataset(sim, prior, N_TRAIN, 1)
    val = generate_dataset(sim, prior, N_VAL, 2)
    test = generate_dataset(sim, prior, N_TEST, 3)
    tc = cfg.train_config(len(train_set))
    specs = cfg.network_specs(sim)
    untrained = init_model(train_set, *specs, tc.loss.tau, tc.seed)
    score0 = validation_score(untrained, val.params, val.observations, prior, tc.n_norm_val, [tc.seed, 3])
    start = time.perf_counter()
    result = train(train_set, val, *specs, tc, prior)
    return SyntheticRun(sim, cfg, train_set, val, test, result, score0, time.perf_counter() - start)


@pytest.fixture(scope="session")
def synthetic_run():
    cache = {}

    def get(kappa, redundant=False):
        key = (float(kappa), bool(redundant))
        if key not in cache:
            cache[key] = run_synthetic(kappa, redundant)
        return cache[key]

    return get


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import summary_lines

    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
