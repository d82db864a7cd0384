"""Closed-loop rollouts, scenario starts, study drivers, and artifacts."""

import csv
import json
import math

import numpy as np
import pytest

from rssa.experiments import (
    SCARA_CASE1_START,
    SCARA_CASE2_START,
    TrajectoryLog,
    feasibility_map,
    find_case_start,
    forward_invariance_study,
    reference_controller,
    rk4_step,
    simulate,
    timing_bench,
    write_json,
)
from rssa.safety_index import (
    SCARA_LEARNED,
    batch_ee,
    batch_phi_terms,
    phi0,
    phi_smooth,
)


class TestRk4:
    def test_exponential_single_step(self):
        out = rk4_step(lambda x: x, np.array([1.0]), 0.1)
        assert abs(out[0] - math.exp(0.1)) < 1e-7

    def test_rotation_preserves_radius_to_fourth_order(self):
        deriv = lambda x: np.array([-x[1], x[0]])
        x = np.array([1.0, 0.0])
        for _ in range(100):
            x = rk4_step(deriv, x, 0.01)
        assert np.linalg.norm(x) == pytest.approx(1.0, abs=1e-9)
        assert x[0] == pytest.approx(math.cos(1.0), abs=1e-8)


class TestReferenceController:
    def test_scara_zero_torque_at_target_pose(self, scara):
        u = reference_controller(scara, np.zeros(4))
        assert np.array_equal(u, np.zeros(2))

    def test_scara_pulls_toward_target(self, scara):
        u = reference_controller(scara, np.array([0.5, -0.2, 0.0, 0.0]))
        assert u[0] < 0.0 and u[1] > 0.0

    def test_segway_feedforward_at_setpoint(self, segway):
        setpoint = np.array([0.0, 0.0, segway.target_speed, 0.0])
        u = reference_controller(segway, setpoint)
        drag = segway.k_b / segway.r * segway.target_speed
        assert u[0] == pytest.approx(drag)
        assert drag == pytest.approx(5.0 / 3.0)


class TestTrajectoryLog:
    def _make(self, steps=3):
        return TrajectoryLog(
            t=np.arange(steps + 1) * 0.1,
            states=np.zeros((steps + 1, 4)),
            controls=np.zeros((steps, 2)),
            phi0=np.zeros(steps + 1),
            phi=np.zeros(steps + 1),
            audit=np.zeros(steps),
            status=["optimal"] * steps,
            fallback=np.zeros(steps, dtype=bool))

    def test_accepts_consistent_arrays(self):
        log = self._make()
        assert log.max_phi0 == 0.0

    def test_rejects_missing_terminal_state(self):
        with pytest.raises(ValueError):
            TrajectoryLog(
                t=np.arange(3) * 0.1, states=np.zeros((3, 4)),
                controls=np.zeros((3, 2)), phi0=np.zeros(3), phi=np.zeros(3),
                audit=np.zeros(3), status=["optimal"] * 3,
                fallback=np.zeros(3, dtype=bool))

    def test_rejects_irregular_time_stamps(self):
        t = np.array([0.0, 0.1, 0.25, 0.3])
        with pytest.raises(ValueError):
            TrajectoryLog(
                t=t, states=np.zeros((4, 4)), controls=np.zeros((3, 2)),
                phi0=np.zeros(4), phi=np.zeros(4), audit=np.zeros(3),
                status=["optimal"] * 3, fallback=np.zeros(3, dtype=bool))

    def test_csv_layout(self, tmp_path):
        log = self._make(steps=2)
        path = tmp_path / "run.csv"
        log.to_csv(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "x0", "x1", "x2", "x3", "u0", "u1",
                           "phi0", "phi", "audit", "status", "fallback"]
        assert len(rows) == 1 + 2 + 1  # header, applied steps, terminal row
        terminal = rows[-1]
        assert terminal[5] == "" and terminal[6] == ""  # no control applied
        assert terminal[-1] == "" and terminal[-2] == ""
        assert float(terminal[0]) == pytest.approx(0.2)


class TestSimulate:
    def test_rejects_nonpositive_dt(self, scara):
        with pytest.raises(ValueError):
            simulate(scara, 1.0, "polytope", np.zeros(4), 0.0, 10, 0,
                     params=SCARA_LEARNED)

    def test_unfiltered_variant_applies_reference(self, scara):
        log = simulate(scara, 1.0, "none", SCARA_CASE1_START, 0.002, 5, 0,
                       params=SCARA_LEARNED)
        assert log.status == ["reference"] * 5
        assert not log.fallback.any()
        expected = np.clip(reference_controller(scara, SCARA_CASE1_START),
                           scara.control_lower, scara.control_upper)
        assert np.allclose(log.controls[0], expected)

    def test_shapes_and_determinism(self, scara):
        a = simulate(scara, 0.5, "polytope", SCARA_CASE1_START, 0.002, 20, 0,
                     params=SCARA_LEARNED, sample_count=10)
        b = simulate(scara, 0.5, "polytope", SCARA_CASE1_START, 0.002, 20, 0,
                     params=SCARA_LEARNED, sample_count=10)
        assert a.states.shape == (21, 4)
        assert a.controls.shape == (20, 2)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.controls, b.controls)
        assert a.status == b.status
        allowed = {"optimal", "infeasible_empty_ur",
                   "infeasible_control_limits"}
        assert set(a.status) <= allowed

    def test_raw_index_enforcement_without_params(self, segway):
        log = simulate(segway, segway.km_dist.mean, "polytope", np.zeros(4),
                       0.002, 10, 0, params=None, sample_count=10)
        assert np.array_equal(log.phi, log.phi0)

    def test_logged_indices_match_states(self, scara):
        log = simulate(scara, 0.5, "polytope", SCARA_CASE1_START, 0.002, 15,
                       0, params=SCARA_LEARNED, sample_count=10)
        for k in (0, 7, 15):
            state = log.states[k]
            assert log.phi0[k] == pytest.approx(phi0(scara, state))
            assert log.phi[k] == pytest.approx(
                max(phi0(scara, state),
                    phi_smooth(SCARA_LEARNED, scara, state)))


class TestCaseStarts:
    def test_frozen_case1_matches_fresh_scan(self, scara):
        found = find_case_start(scara, SCARA_LEARNED, "case1", seed=0)
        assert np.array_equal(found, SCARA_CASE1_START)

    def test_frozen_case2_matches_fresh_scan(self, scara):
        found = find_case_start(scara, SCARA_LEARNED, "case2", seed=0)
        assert np.array_equal(found, SCARA_CASE2_START)

    def test_case1_predicates(self, scara):
        state = SCARA_CASE1_START[None, :]
        terms = batch_phi_terms(SCARA_LEARNED, scara, state)
        ee, ee_dot, _, _ = batch_ee(scara, state)
        assert terms["phi_max"][0] <= -0.1
        assert 0.2 <= ee[0] <= 1.3
        assert ee_dot[0] > 0.1

    def test_case2_predicates(self, scara):
        state = SCARA_CASE2_START[None, :]
        terms = batch_phi_terms(SCARA_LEARNED, scara, state)
        ee, ee_dot, _, _ = batch_ee(scara, state)
        assert terms["value"][0] >= 0.05   # designed index already violated
        assert terms["phi0"][0] <= -0.05   # while still short of the wall
        assert ee_dot[0] > 0.1

    def test_unknown_case_rejected(self, scara):
        with pytest.raises(ValueError):
            find_case_start(scara, SCARA_LEARNED, "case3")


class TestFeasibilityMap:
    def test_small_map_structure(self, scara):
        out = feasibility_map(scara, SCARA_LEARNED, joint_counts=(4, 4),
                              velocity_samples=5, seed=0)
        frac = np.array(out["infeasible_fraction"])
        assert frac.shape == (4, 4)
        assert np.all(frac >= 0.0) and np.all(frac <= 1.0)
        assert len(out["theta1"]) == 4 and len(out["theta2"]) == 4
        assert out["velocity_scale"] == 0.6

    def test_deterministic_for_seed(self, scara):
        a = feasibility_map(scara, None, joint_counts=(3, 3),
                            velocity_samples=4, seed=1)
        b = feasibility_map(scara, None, joint_counts=(3, 3),
                            velocity_samples=4, seed=1)
        assert a == b

    def test_velocity_scale_validation(self, scara):
        for bad in (0.0, 1.2):
            with pytest.raises(ValueError):
                feasibility_map(scara, SCARA_LEARNED, joint_counts=(3, 3),
                                velocity_samples=2, velocity_scale=bad)


class TestInvarianceStudy:
    def test_micro_run_in_interval_value(self, scara):
        out = forward_invariance_study(
            scara, SCARA_LEARNED, true_values=(1.0,), trials=2, horizon=0.05,
            dt=0.005, rng_seed=0, sample_count=10, grid_counts=(3, 3, 3, 3))
        row = out["rows"][0]
        assert row["true_value"] == 1.0
        assert row["m_res"] == 0.0     # the nominal interval covers it
        assert row["bound"] == 0.0
        assert np.isfinite(row["phi_max"])
        assert out["k_phi"] > 0.0

    def test_out_of_interval_gets_positive_residual(self, scara):
        out = forward_invariance_study(
            scara, SCARA_LEARNED, true_values=(2.5,), trials=1, horizon=0.02,
            dt=0.005, rng_seed=0, sample_count=10, grid_counts=(3, 3, 3, 3))
        row = out["rows"][0]
        assert row["nominal"] == pytest.approx(1.9)  # clipped into interval
        assert row["m_res"] > 0.0
        assert row["bound"] > 0.0

    def test_start_velocity_scale_validation(self, scara):
        with pytest.raises(ValueError):
            forward_invariance_study(scara, SCARA_LEARNED,
                                     start_velocity_scale=0.0)


class TestTimingBench:
    def test_requires_ten_repeats(self, segway):
        with pytest.raises(ValueError):
            timing_bench(segway, (10,), repeats=5)

    def test_small_bench_rows(self, segway):
        out = timing_bench(segway, (10, 20), repeats=10, states_per_repeat=2,
                           seed=0)
        assert len(out["rows"]) == 4  # two counts x two variants
        variants = {row["variant"] for row in out["rows"]}
        assert variants == {"polytope", "ellipsoid"}
        for row in out["rows"]:
            assert row["mean_s"] > 0.0
            assert row["std_s"] >= 0.0


class TestWriteJson:
    def test_schema_and_stable_bytes(self, tmp_path):
        path = tmp_path / "out.json"
        payload = {"b": [1, 2], "a": {"y": 2.0, "x": 1.0}}
        write_json(payload, path, schema="rssa/test/v1")
        first = path.read_bytes()
        write_json(payload, path, schema="rssa/test/v1")
        assert path.read_bytes() == first
        assert first.endswith(b"\n")
        data = json.loads(first)
        assert data["schema"] == "rssa/test/v1"
        assert data["b"] == [1, 2]
        assert list(json.loads(first))[0] == "a"  # keys sorted on disk
