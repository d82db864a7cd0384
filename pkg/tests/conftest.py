"""Shared fixtures: robot models and the closed-loop scenario rollouts.

The 5-10 second filtered rollouts are expensive (one robust solve per
control step), so the scenario suites build them once per session and the
tests that grade different aspects of the same runs share the logs.
"""

import numpy as np
import pytest

from rssa.bounds import estimate_constant_residual_bound
from rssa.dynamics import make_model, sample_parameter, uncertain_dist
from rssa.experiments import SCARA_CASE1_START, SCARA_CASE2_START, simulate
from rssa.safety_index import SCARA_LEARNED, SEGWAY_LEARNED
from rssa.synthesis import sample_state_grid

DT = 0.002
SCARA_TRUE_M2 = 0.5


@pytest.fixture(scope="session")
def scara():
    return make_model("scara")


@pytest.fixture(scope="session")
def segway():
    return make_model("segway")


def constant_margin(model, params):
    """Residual cap for the constant-margin variant, matching the command
    line's default recipe (6-per-dimension grid, 50 draws, seed 0)."""
    values = sample_parameter(uncertain_dist(model), 0, 50)
    grid, _ = sample_state_grid(model, (6,) * model.n)
    return estimate_constant_residual_bound(model, params, values, grid)


@pytest.fixture(scope="session")
def scara_case_sims(scara):
    """Five 5-second wall-avoidance rollouts with the learned arm index and
    a hidden true payload of 0.5 kg, on matched seeds across variants."""
    steps = int(round(5.0 / DT))
    d_res = constant_margin(scara, SCARA_LEARNED)
    runs = {}
    for variant, case, x0 in [
        ("polytope", "case1", SCARA_CASE1_START),
        ("polytope", "case2", SCARA_CASE2_START),
        ("ellipsoid", "case1", SCARA_CASE1_START),
        ("ellipsoid", "case2", SCARA_CASE2_START),
        ("constant", "case1", SCARA_CASE1_START),
    ]:
        runs[(variant, case)] = simulate(
            scara, SCARA_TRUE_M2, variant, x0, DT, steps, rng_seed=0,
            params=SCARA_LEARNED, sample_count=50, confidence=0.95,
            d_res=d_res if variant == "constant" else 0.0)
    return runs


@pytest.fixture(scope="session")
def segway_track_sims(segway):
    """Three 10-second speed-tracking rollouts from the balanced rest state
    under the true mean motor constant, on matched seeds across variants."""
    steps = int(round(10.0 / DT))
    d_res = constant_margin(segway, SEGWAY_LEARNED)
    runs = {}
    for variant in ("polytope", "ellipsoid", "constant"):
        runs[variant] = simulate(
            segway, segway.km_dist.mean, variant, np.zeros(4), DT, steps,
            rng_seed=0, params=SEGWAY_LEARNED, sample_count=50,
            confidence=0.95, d_res=d_res if variant == "constant" else 0.0)
    return runs
