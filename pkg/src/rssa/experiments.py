"""Closed-loop studies: trajectories, feasibility maps, invariance, timing.

Every study drives the same pipeline: build an uncertainty bound at the
current state, filter the reference control through one of the robust
solvers, integrate the true (hidden-parameter) dynamics with RK4 under a
zero-order hold, and log enough per-step diagnostics to audit the safety
constraint after the fact.  The audited quantity is the worst-case
phi_dot + gamma(phi) under the same bound the solver saw, which must stay
below the solver tolerance whenever the step reported a feasible solve.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass

import numpy as np

from . import safety_index as si
from .bounds import build_bound, project_to_lie
from .dynamics import (DEFAULT_SAMPLE_COUNT, control_dim, sample_parameter,
                       uncertain_dist)
from .safety_index import SafetyIndexParams
from .solvers import fallback_safest_control, solve_variant
from .synthesis import box_corners, feasible_mask, sample_state_grid

SCARA_REF_GAINS = (12.0, 4.0)     # PD gains toward the pose past the wall
SCARA_REF_TARGET = (0.0, 0.0)     # straight arm: x_ee = l1 + l2 > wall
SEGWAY_REF_GAINS = (42.0, 5.2, 10.0)  # tilt, speed-error, tilt-rate gains


def rk4_step(deriv, state: np.ndarray, dt: float) -> np.ndarray:
    k1 = deriv(state)
    k2 = deriv(state + 0.5 * dt * k1)
    k3 = deriv(state + 0.5 * dt * k2)
    k4 = deriv(state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def reference_controller(model, state: np.ndarray) -> np.ndarray:
    """Task controller that ignores safety (the filter's input).

    scara: PD torque toward a joint pose whose end effector lies beyond the
    wall, so the unfiltered arm must cross it.  segway: speed-error feedback
    plus the tilt-stabilizing PD the open-loop-unstable platform needs, with
    a feedforward that cancels the rolling drag at the target speed so the
    correction terms vanish at the setpoint.
    """
    if model.kind == "scara":
        kp, kd = SCARA_REF_GAINS
        target = np.asarray(SCARA_REF_TARGET)
        return kp * (target - state[:2]) - kd * state[2:]
    k_tilt, k_speed, k_rate = SEGWAY_REF_GAINS
    # The speed-error gain is positive on (p_dot - target): slowing down must
    # first command a forward lean through the coupled tilt dynamics
    # (non-minimum-phase), so the naive negative-feedback sign diverges.
    drag_ff = model.k_b / model.r * model.target_speed
    u = (k_tilt * state[1] + k_speed * (state[2] - model.target_speed)
         + k_rate * state[3] + drag_ff)
    return np.array([u])


@dataclass
class TrajectoryLog:
    """Per-step record of one closed-loop rollout.

    states/t have steps+1 entries (terminal state included); controls,
    audit, status and fallback have one entry per applied step.
    """

    t: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    phi0: np.ndarray
    phi: np.ndarray
    audit: np.ndarray
    status: list
    fallback: np.ndarray

    def __post_init__(self):
        steps = self.controls.shape[0]
        if not (self.t.size == steps + 1 == self.states.shape[0]
                == self.phi0.size == self.phi.size
                and len(self.status) == steps == self.audit.size
                == self.fallback.size):
            raise ValueError("log arrays disagree on step count")
        dt = np.diff(self.t)
        if steps and not np.allclose(dt, dt[0], rtol=0, atol=1e-12):
            raise ValueError("time stamps must advance by a fixed step")

    @property
    def max_phi0(self) -> float:
        return float(np.max(self.phi0))

    @property
    def max_phi(self) -> float:
        return float(np.max(self.phi))

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        m = self.controls.shape[1] if self.controls.size else 1
        header = (["t"] + [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)]
                  + ["phi0", "phi", "audit", "status", "fallback"])

        def r(value):
            # Shortest round-trip decimal form (plain float, full precision).
            return repr(float(value))

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.controls.shape[0]):
                w.writerow([r(self.t[k])]
                           + [r(v) for v in self.states[k]]
                           + [r(v) for v in self.controls[k]]
                           + [r(self.phi0[k]), r(self.phi[k]),
                              r(self.audit[k]), self.status[k],
                              int(self.fallback[k])])
            k = self.controls.shape[0]
            w.writerow([r(self.t[k])] + [r(v) for v in self.states[k]]
                       + [""] * m + [r(self.phi0[k]), r(self.phi[k]),
                                     "", "", ""])


def _true_deriv(model, true_param, u):
    def deriv(x):
        sample = model.dynamics(x, true_param)
        return sample.f + sample.g @ u
    return deriv


def _mean_f_g(model, x, param_values):
    """Sample-mean drift and velocity-row control gain at one state."""
    if model.kind == "scara":
        f, gpart = model.batch_dynamics(x[None], param_values)
    else:
        f, gpart = model.batch_dynamics(x[None], param_values)
        gpart = gpart[..., None]  # (1,K,2,1)
    return np.mean(f[0], axis=0), np.mean(gpart[0], axis=0)


def _audit_value(lie, u, gamma_phi, d_res):
    """Worst-case phi_dot + gamma(phi) under the projected bound at u."""
    v_f, v_g = lie.v_f, lie.v_g
    if hasattr(v_f, "vertices"):
        worst = float(np.max(v_f.vertices[:, 0]) + np.max(v_g.vertices @ u))
    else:
        worst = float(v_f.support(np.ones(1)) + v_g.support(u))
    return worst + gamma_phi + d_res


def simulate(model, true_param: float, rssa_variant: str, x0, dt: float,
             steps: int, rng_seed: int, params=None,
             sample_count: int = DEFAULT_SAMPLE_COUNT, confidence: float = 0.95,
             d_res: float = 0.0, controller=None) -> TrajectoryLog:
    """Roll out the filtered closed loop under the true hidden parameter.

    rssa_variant: polytope | ellipsoid | constant | none.  The parameter
    sample set behind the bounds is drawn once per call, so the filter is a
    deterministic state-feedback law.  Infeasible solves fall back to the
    minimax-safest control and are flagged, never raised.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if controller is None:
        controller = reference_controller
    x = np.asarray(x0, dtype=float).copy()
    m = control_dim(model)
    lower, upper = model.control_lower, model.control_upper
    param_values = sample_parameter(uncertain_dist(model), rng_seed, sample_count)

    t = np.arange(steps + 1) * dt
    states = np.empty((steps + 1, model.n))
    controls = np.empty((steps, m))
    phi0s = np.empty(steps + 1)
    phis = np.empty(steps + 1)
    audits = np.empty(steps)
    statuses: list = []
    fallbacks = np.zeros(steps, dtype=bool)

    for k in range(steps):
        states[k] = x
        phi0s[k] = si.phi0(model, x)
        value_s = (si.phi_smooth(params, model, x) if params is not None
                   else phi0s[k])
        phis[k] = max(phi0s[k], value_s) if params is not None else phi0s[k]
        u_ref = np.clip(controller(model, x), lower, upper)
        grad = (si.grad_phi_smooth(params, model, x) if params is not None
                else si.grad_phi0(model, x))
        slope = params.gamma_slope if params is not None else 1.0
        if rssa_variant == "none":
            u = u_ref
            fbar, vel_gain = _mean_f_g(model, x, param_values)
            audits[k] = (float(grad @ fbar + grad[2:] @ (vel_gain @ u))
                         + slope * value_s)
            statuses.append("reference")
        else:
            bound = build_bound(model, x, kind=rssa_variant,
                                param_values=param_values,
                                confidence=confidence, d_res=d_res)
            res = solve_variant(rssa_variant, model, params, x, bound, u_ref)
            if res.feasible:
                u = np.clip(res.u, lower, upper)
            else:
                u = np.clip(fallback_safest_control(model, params, x, bound),
                            lower, upper)
                fallbacks[k] = True
            statuses.append(res.status.value)
            lie = project_to_lie(bound, grad, m)
            audits[k] = _audit_value(lie, u, slope * value_s, bound.d_res)
        controls[k] = u
        x = rk4_step(_true_deriv(model, true_param, u), x, dt)

    states[steps] = x
    phi0s[steps] = si.phi0(model, x)
    if params is not None:
        phis[steps] = max(phi0s[steps], si.phi_smooth(params, model, x))
    else:
        phis[steps] = phi0s[steps]
    return TrajectoryLog(t=t, states=states, controls=controls, phi0=phi0s,
                         phi=phis, audit=audits, status=statuses,
                         fallback=fallbacks)


# ---------------------------------------------------------------------------
# Scenario starts for the two-link arm (Fig.-4-style cases).

def find_case_start(model, params, case: str, seed: int = 0,
                    tries: int = 200000) -> np.ndarray:
    """Scan seeded random states for a scenario start.

    case1: comfortably inside the safe set (phi < 0) and drifting toward
    the wall.  case2: the designed index is already violated (phi > 0)
    while the plain distance constraint still holds (phi0 < 0) — possible
    because the designed index anticipates velocity.
    """
    rng = np.random.default_rng(seed)
    lower, upper = model.state_lower, model.state_upper
    xs = rng.uniform(lower, upper, size=(tries, lower.size))
    bt = si.batch_phi_terms(params, model, xs)
    ee_x, ee_xdot, _, _ = si.batch_ee(model, xs)
    speed_ok = np.max(np.abs(xs[:, 2:]), axis=1) <= 1.0
    if case == "case1":
        mask = ((bt["phi_max"] <= -0.1) & (ee_x >= 0.2) & (ee_x <= 1.3)
                & (ee_xdot > 0.1) & speed_ok)
    elif case == "case2":
        mask = ((bt["value"] >= 0.05) & (bt["phi0"] <= -0.05) & (ee_xdot > 0.1))
    else:
        raise ValueError("case must be 'case1' or 'case2'")
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise RuntimeError(f"no {case} start found in {tries} draws")
    return xs[idx[0]].copy()


# Frozen scan results (find_case_start, seed 0) so the command line and the
# regression tests share byte-identical scenarios.
SCARA_CASE1_START = np.array([
    0.7856629476065371, 1.2920657497631343, 0.25646532126301125,
    -0.7961512840283755])
SCARA_CASE2_START = np.array([
    0.13705195270068993, 1.3668203303511577, 1.2634142164861286,
    -1.9890459993194076])


def feasibility_map(model, params, joint_counts=(30, 30), velocity_samples=100,
                    seed: int = 0, kind: str = "polytope",
                    sample_count: int = DEFAULT_SAMPLE_COUNT,
                    eps: float = 0.0, velocity_scale: float = 0.6) -> dict:
    """Fraction of sampled velocities with no robust safe control, per joint.

    params=None rates the raw distance index phi0 (whose control
    coefficient vanishes, so wall-adjacent inward-moving cells go
    infeasible); a certified designed index rates 0 everywhere.

    Velocities are drawn uniformly from the rated joint-speed box shrunk
    by velocity_scale.  At the box extremes the centripetal drift of the
    end effector exceeds what the actuators can robustly cancel for any
    index with a meaningful velocity term, so the map defaults to the
    moderate-speed regime; pass velocity_scale=1.0 to rate the full box.
    """
    if not 0.0 < velocity_scale <= 1.0:
        raise ValueError("velocity_scale must be in (0, 1]")
    rng = np.random.default_rng(seed)
    t1 = np.linspace(model.state_lower[0], model.state_upper[0], joint_counts[0])
    t2 = np.linspace(model.state_lower[1], model.state_upper[1], joint_counts[1])
    cells = joint_counts[0] * joint_counts[1]
    vel = rng.uniform(model.state_lower[2:] * velocity_scale,
                      model.state_upper[2:] * velocity_scale,
                      size=(cells, velocity_samples, 2))
    g1, g2 = np.meshgrid(t1, t2, indexing="ij")
    joints = np.column_stack([g1.ravel(), g2.ravel()])
    states = np.concatenate([
        np.repeat(joints, velocity_samples, axis=0),
        vel.reshape(-1, 2)], axis=1)
    mask = feasible_mask(model, params, states, eps, kind=kind, seed=seed,
                         sample_count=sample_count)
    frac = 1.0 - mask.reshape(cells, velocity_samples).mean(axis=1)
    return {
        "theta1": [float(v) for v in t1],
        "theta2": [float(v) for v in t2],
        "infeasible_fraction": [[float(v) for v in row]
                                for row in frac.reshape(joint_counts)],
        "velocity_samples": velocity_samples,
        "velocity_scale": velocity_scale,
        "eps": eps,
        "kind": kind,
        "seed": seed,
    }


def _residual_cap(model, nominal: float, true_value: float,
                  grid_counts=(7, 7, 7, 7)) -> float:
    """max over grid x control corners of the dynamics residual norm."""
    states, _ = sample_state_grid(model, grid_counts)
    pair = np.array([nominal, true_value])
    f, minv = model.batch_dynamics(states, pair)
    corners = box_corners(model.control_lower, model.control_upper)
    acc = np.einsum("skij,cj->skci", minv, corners)
    xdot = np.repeat(f[:, :, None, :], corners.shape[0], axis=2)
    xdot[..., 2:] += acc
    res = xdot[:, 1] - xdot[:, 0]
    return float(np.max(np.linalg.norm(res, axis=-1)))


def forward_invariance_study(model, params, true_values=(1.0, 2.0, 3.0),
                             trials: int = 100, horizon: float = 2.0,
                             dt: float = 0.005, rng_seed: int = 0,
                             sample_count: int = DEFAULT_SAMPLE_COUNT,
                             grid_counts=(7, 7, 7, 7),
                             start_velocity_scale: float = 0.5) -> dict:
    """Observed worst-case index vs the residual-based theoretical cap.

    For each true parameter value: `trials` rollouts from random
    clearly-safe starts under the nominal-bound filter; observed phi_max is
    compared against gamma_inv(k_phi * M_res), where M_res caps the
    dynamics mismatch against the nearest parameter value inside the
    modeled interval and k_phi caps the gradient norm on the state box.

    start_velocity_scale shrinks the velocity components of the start box
    (the start distribution is a free choice of the study).
    """
    if not 0.0 < start_velocity_scale <= 1.0:
        raise ValueError("start_velocity_scale must be in (0, 1]")
    dist = uncertain_dist(model)
    states_grid, _ = sample_state_grid(model, grid_counts)
    k_phi = float(np.max(np.linalg.norm(
        si.batch_phi_terms(params, model, states_grid)["grad"], axis=1)))
    steps = int(round(horizon / dt))
    rng = np.random.default_rng(rng_seed)
    lower = model.state_lower.copy()
    upper = model.state_upper.copy()
    half = lower.size // 2
    lower[half:] *= start_velocity_scale
    upper[half:] *= start_velocity_scale

    starts: list = []
    for _ in range(100):
        if len(starts) >= trials:
            break
        cands = rng.uniform(lower, upper, size=(4 * trials, lower.size))
        bt = si.batch_phi_terms(params, model, cands)
        good = cands[bt["phi_max"] <= -0.05]
        starts.extend(good[:trials - len(starts)])
    if len(starts) < trials:
        raise RuntimeError("could not sample enough clearly-safe starts")
    starts = np.asarray(starts)

    rows = []
    for true_value in true_values:
        nominal = float(np.clip(true_value, dist.lower, dist.upper))
        m_res = (0.0 if nominal == true_value
                 else _residual_cap(model, nominal, true_value, grid_counts))
        bound_cap = si.gamma_inv(params, k_phi * m_res)
        phi_max = -np.inf
        phi0_max = -np.inf
        fallback_steps = 0
        for trial in range(trials):
            log = simulate(model, true_value, "polytope", starts[trial], dt,
                           steps, rng_seed, params=params,
                           sample_count=sample_count)
            # The invariance cap concerns the enforced (designed) index.
            smooth = si.batch_phi_terms(params, model, log.states)["value"]
            phi_max = max(phi_max, float(np.max(smooth)))
            phi0_max = max(phi0_max, log.max_phi0)
            fallback_steps += int(np.sum(log.fallback))
        rows.append({
            "true_value": float(true_value),
            "nominal": nominal,
            "phi_max": phi_max,
            "phi0_max": phi0_max,
            "bound": float(bound_cap),
            "m_res": float(m_res),
            "fallback_steps": fallback_steps,
        })
    return {"k_phi": k_phi, "trials": trials, "horizon": horizon, "dt": dt,
            "seed": rng_seed, "rows": rows}


def timing_bench(model, sample_counts=(10, 50, 100, 500), repeats: int = 10,
                 states_per_repeat: int = 25, seed: int = 0,
                 confidence: float = 0.95) -> dict:
    """Mean wall-clock per solve for each (variant, sample count).

    Where the model admits it (segway), the ellipsoid variant uses the
    analytic rank-one bound, so its cost is independent of the sample
    count; the polytope variant's per-vertex work grows with it.
    """
    if repeats < 10:
        raise ValueError("repeats must be >= 10")
    rng = np.random.default_rng(seed)
    lower, upper = model.state_lower, model.state_upper
    states = rng.uniform(0.25 * lower, 0.25 * upper,
                         size=(states_per_repeat, lower.size))
    u_refs = [np.clip(reference_controller(model, x), model.control_lower,
                      model.control_upper) for x in states]
    params = SafetyIndexParams(alpha=1.0, k_v=1.0, beta=0.01)
    analytic = model.kind == "segway"

    rows = []
    for count in sample_counts:
        param_values = sample_parameter(uncertain_dist(model), seed, count)
        for variant in ("polytope", "ellipsoid"):
            bound_kind = ("ellipsoid_analytic"
                          if variant == "ellipsoid" and analytic else variant)
            times = []
            for _ in range(repeats):
                start = time.perf_counter()
                for x, u_ref in zip(states, u_refs):
                    bound = build_bound(model, x, kind=bound_kind,
                                        param_values=param_values,
                                        confidence=confidence)
                    solve_variant(variant, model, params, x, bound, u_ref)
                times.append((time.perf_counter() - start) / states_per_repeat)
            rows.append({
                "variant": variant,
                "samples": int(count),
                "mean_s": float(np.mean(times)),
                "std_s": float(np.std(times)),
            })
    return {"repeats": repeats, "states_per_repeat": states_per_repeat,
            "seed": seed, "rows": rows}


def write_json(obj: dict, path, schema: str) -> None:
    payload = {"schema": schema}
    payload.update(obj)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
