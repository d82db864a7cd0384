"""Robot models with one uncertain physical parameter.

Both robots are control-affine, x_dot = f(x) + g(x) u, with n = 4 states.

SCARA arm (m = 2):  state (theta1, theta2, theta1_dot, theta2_dot), torque
input per joint.  The second link mass m2 is uncertain.  With
A = m1 l1^2/6 + m2 l1^2/2, B = m2 l2^2/6, C = m2 l1 l2/2:

    M = [[2A + 2B + 2C cos t2, 2B + C cos t2],
         [2B + C cos t2,       2B          ]]
    H = [-C sin t2 (2 td1 + td2) td2,  C sin t2 td1^2]
    f = [theta_dot; -M^{-1} H],   g = [0; M^{-1}]

Segway (m = 1): state (p, tilt, p_dot, tilt_rate), single wheel voltage
command.  The motor constant K_m is uncertain and also sets the friction
coefficient b_t = K_m K_b / R, so both f and g depend affinely on K_m:

    M = [[m0, m L cos a], [m L cos a, J0]]
    H = [-m L sin a * adot^2 + (b_t/R)(v - R adot),
         -m grav L sin a - b_t (v - R adot)]
    B = [K_m / R, -K_m]
    f = [v, adot; -M^{-1} H],   g = [0; M^{-1} B]

Uncertain parameters follow truncated Gaussians sampled by rejection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import parse_kv_file
from .core import DynamicsSample, SingularMassMatrix

DEFAULT_SAMPLE_COUNT = 50
_MAX_REJECTION_DRAWS = 10**6


@dataclass(frozen=True)
class TruncatedGaussian:
    mean: float
    sd: float
    lower: float
    upper: float

    def __post_init__(self):
        if not (self.lower <= self.mean <= self.upper):
            raise ValueError("mean must lie inside the truncation interval")
        if self.sd < 0:
            raise ValueError("sd must be non-negative")

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.upper - self.lower < 1e-15 or self.sd == 0.0:
            return np.full(count, np.clip(self.mean, self.lower, self.upper))
        out = np.empty(count)
        filled = 0
        drawn = 0
        while filled < count:
            batch = max(count - filled, 64)
            if drawn + batch > _MAX_REJECTION_DRAWS:
                raise RuntimeError(
                    f"rejection sampling exceeded {_MAX_REJECTION_DRAWS} draws; "
                    "support likely has negligible probability mass"
                )
            cand = rng.normal(self.mean, self.sd, size=batch)
            drawn += batch
            keep = cand[(cand >= self.lower) & (cand <= self.upper)]
            take = min(keep.size, count - filled)
            out[filled:filled + take] = keep[:take]
            filled += take
        return out


def sample_parameter(dist: TruncatedGaussian, seed: int, count: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return dist.sample(rng, count)


@dataclass(frozen=True)
class ScaraModel:
    """Two-link planar arm working near a vertical wall at x = x_wall."""

    m1: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    x_wall: float = 1.5
    m2_dist: TruncatedGaussian = TruncatedGaussian(1.0, 0.3, 0.1, 1.9)
    theta_max: float = math.pi / 2
    thetadot_max: float = 2.0
    u_max: float = 20.0

    kind = "scara"
    n = 4

    @property
    def state_lower(self) -> np.ndarray:
        return np.array([-self.theta_max, -self.theta_max,
                         -self.thetadot_max, -self.thetadot_max])

    @property
    def state_upper(self) -> np.ndarray:
        return -self.state_lower

    @property
    def control_lower(self) -> np.ndarray:
        return np.array([-self.u_max, -self.u_max])

    @property
    def control_upper(self) -> np.ndarray:
        return np.array([self.u_max, self.u_max])

    def mass_matrix(self, theta2: float, m2: float) -> np.ndarray:
        a = self.m1 * self.l1**2 / 6.0 + m2 * self.l1**2 / 2.0
        b = m2 * self.l2**2 / 6.0
        c = m2 * self.l1 * self.l2 / 2.0
        ct = math.cos(theta2)
        return np.array([[2 * a + 2 * b + 2 * c * ct, 2 * b + c * ct],
                         [2 * b + c * ct, 2 * b]])

    def dynamics(self, state: np.ndarray, m2: float) -> DynamicsSample:
        state = np.asarray(state, dtype=float)
        if state.shape != (4,):
            raise ValueError(f"state has shape {state.shape}, expected (4,)")
        t2, td1, td2 = state[1], state[2], state[3]
        mass = self.mass_matrix(t2, m2)
        det = mass[0, 0] * mass[1, 1] - mass[0, 1] * mass[1, 0]
        if abs(det) < 1e-12:
            raise SingularMassMatrix(f"det(M) = {det:g} at theta2 = {t2:g}, m2 = {m2:g}")
        minv = np.array([[mass[1, 1], -mass[0, 1]],
                         [-mass[1, 0], mass[0, 0]]]) / det
        c = m2 * self.l1 * self.l2 / 2.0
        st = math.sin(t2)
        h = np.array([-c * st * (2 * td1 + td2) * td2, c * st * td1**2])
        f = np.concatenate([state[2:4], -minv @ h])
        g = np.vstack([np.zeros((2, 2)), minv])
        return DynamicsSample(f, g)

    def batch_dynamics(self, states: np.ndarray, m2s: np.ndarray):
        """Vectorized (f, M^{-1}) over S states x K parameter draws.

        Returns f with shape (S, K, 4) and minv with shape (S, K, 2, 2);
        g is [0; M^{-1}] so minv is the full control-coupling payload.
        """
        states = np.atleast_2d(np.asarray(states, dtype=float))
        m2s = np.atleast_1d(np.asarray(m2s, dtype=float))
        t2 = states[:, 1][:, None]
        td1 = states[:, 2][:, None]
        td2 = states[:, 3][:, None]
        a = self.m1 * self.l1**2 / 6.0 + m2s * self.l1**2 / 2.0
        b = m2s * self.l2**2 / 6.0
        c = m2s * self.l1 * self.l2 / 2.0
        ct, st = np.cos(t2), np.sin(t2)
        m11 = 2 * a + 2 * b + 2 * c * ct
        m12 = 2 * b + c * ct
        m22 = np.broadcast_to(2 * b, m11.shape)
        det = m11 * m22 - m12**2
        if np.any(np.abs(det) < 1e-12):
            raise SingularMassMatrix("singular mass matrix in batch evaluation")
        s, k = m11.shape
        minv = np.empty((s, k, 2, 2))
        minv[:, :, 0, 0] = m22 / det
        minv[:, :, 0, 1] = -m12 / det
        minv[:, :, 1, 0] = -m12 / det
        minv[:, :, 1, 1] = m11 / det
        h1 = -c * st * (2 * td1 + td2) * td2
        h2 = c * st * td1**2
        f = np.empty((s, k, 4))
        f[:, :, 0] = td1
        f[:, :, 1] = td2
        f[:, :, 2] = -(minv[:, :, 0, 0] * h1 + minv[:, :, 0, 1] * h2)
        f[:, :, 3] = -(minv[:, :, 1, 0] * h1 + minv[:, :, 1, 1] * h2)
        return f, minv

    def ee_x(self, state: np.ndarray) -> float:
        t1, t2 = state[0], state[1]
        return self.l1 * math.cos(t1) + self.l2 * math.cos(t1 + t2)

    def ee_x_dot(self, state: np.ndarray) -> float:
        t1, t2, td1, td2 = state
        return -self.l1 * math.sin(t1) * td1 - self.l2 * math.sin(t1 + t2) * (td1 + td2)

    @classmethod
    def from_config(cls, path) -> "ScaraModel":
        kv = parse_kv_file(path)
        return cls(
            m1=float(kv.get("m1", 1.0)),
            l1=float(kv.get("l1", 1.0)),
            l2=float(kv.get("l2", 1.0)),
            x_wall=float(kv.get("x_wall", 1.5)),
            m2_dist=TruncatedGaussian(
                float(kv.get("m2_mean", 1.0)), float(kv.get("m2_sd", 0.3)),
                float(kv.get("m2_lo", 0.1)), float(kv.get("m2_hi", 1.9))),
            theta_max=float(kv.get("theta_max", math.pi / 2)),
            thetadot_max=float(kv.get("thetadot_max", 2.0)),
            u_max=float(kv.get("u_max", 20.0)),
        )


@dataclass(frozen=True)
class SegwayModel:
    """Wheeled inverted pendulum tracking a forward-speed target."""

    m0: float = 52.71        # lumped translational inertia
    m: float = 44.798        # pendulum body mass
    j0: float = 5.108        # lumped rotational inertia
    length: float = 0.169    # body center-of-mass height
    r: float = 0.195         # wheel radius
    k_b: float = 0.325       # back-EMF constant
    grav: float = 9.81
    km_dist: TruncatedGaussian = TruncatedGaussian(2.524, 0.3, 1.624, 3.424)
    tilt_limit: float = 0.1
    target_speed: float = 1.0
    p_max: float = 10.0
    tilt_max: float = 0.3
    pdot_max: float = 2.0
    tiltdot_max: float = 2.0
    u_max: float = 20.0

    kind = "segway"
    n = 4

    @property
    def state_lower(self) -> np.ndarray:
        return np.array([-self.p_max, -self.tilt_max, -self.pdot_max, -self.tiltdot_max])

    @property
    def state_upper(self) -> np.ndarray:
        return -self.state_lower

    @property
    def control_lower(self) -> np.ndarray:
        return np.array([-self.u_max])

    @property
    def control_upper(self) -> np.ndarray:
        return np.array([self.u_max])

    def mass_matrix(self, tilt: float) -> np.ndarray:
        ml = self.m * self.length
        ca = math.cos(tilt)
        return np.array([[self.m0, ml * ca], [ml * ca, self.j0]])

    def dynamics(self, state: np.ndarray, km: float) -> DynamicsSample:
        state = np.asarray(state, dtype=float)
        if state.shape != (4,):
            raise ValueError(f"state has shape {state.shape}, expected (4,)")
        tilt, v, adot = state[1], state[2], state[3]
        mass = self.mass_matrix(tilt)
        det = mass[0, 0] * mass[1, 1] - mass[0, 1] * mass[1, 0]
        if abs(det) < 1e-12:
            raise SingularMassMatrix(f"det(M) = {det:g} at tilt = {tilt:g}")
        minv = np.array([[mass[1, 1], -mass[0, 1]],
                         [-mass[1, 0], mass[0, 0]]]) / det
        ml = self.m * self.length
        b_t = km * self.k_b / self.r
        slip = v - self.r * adot
        h = np.array([
            -ml * math.sin(tilt) * adot**2 + b_t / self.r * slip,
            -self.m * self.grav * self.length * math.sin(tilt) - b_t * slip,
        ])
        bcol = np.array([km / self.r, -km])
        f = np.concatenate([state[2:4], -minv @ h])
        g = np.vstack([np.zeros((2, 1)), (minv @ bcol)[:, None]])
        return DynamicsSample(f, g)

    def batch_dynamics(self, states: np.ndarray, kms: np.ndarray):
        """Vectorized (f, g_lower) over S states x K parameter draws.

        Returns f with shape (S, K, 4) and glow with shape (S, K, 2): the
        two nonzero rows of g.
        """
        states = np.atleast_2d(np.asarray(states, dtype=float))
        kms = np.atleast_1d(np.asarray(kms, dtype=float))
        tilt = states[:, 1][:, None]
        v = states[:, 2][:, None]
        adot = states[:, 3][:, None]
        ml = self.m * self.length
        ca, sa = np.cos(tilt), np.sin(tilt)
        det = self.m0 * self.j0 - (ml * ca) ** 2
        i11, i12, i22 = self.j0 / det, -ml * ca / det, self.m0 / det
        b_t = kms[None, :] * self.k_b / self.r
        slip = v - self.r * adot
        h1 = -ml * sa * adot**2 + b_t / self.r * slip
        h2 = -self.m * self.grav * self.length * sa - b_t * slip
        s = states.shape[0]
        k = kms.size
        f = np.empty((s, k, 4))
        f[:, :, 0] = np.broadcast_to(v, (s, k))
        f[:, :, 1] = np.broadcast_to(adot, (s, k))
        f[:, :, 2] = -(i11 * h1 + i12 * h2)
        f[:, :, 3] = -(i12 * h1 + i22 * h2)
        glow = np.empty((s, k, 2))
        glow[:, :, 0] = kms[None, :] * (i11 / self.r - i12)
        glow[:, :, 1] = kms[None, :] * (i12 / self.r - i22)
        return f, glow

    def affine_decomposition(self, state: np.ndarray):
        """Coefficients of the exact affine dependence on K_m.

        f(x, K_m) = f0(x) + K_m * f1(x) and g_flat(x, K_m) = K_m * gb(x):
        the motor constant enters f only through b_t and g only as a scale.
        """
        state = np.asarray(state, dtype=float)
        tilt, v, adot = state[1], state[2], state[3]
        mass = self.mass_matrix(tilt)
        minv = np.linalg.inv(mass)
        ml = self.m * self.length
        slip = v - self.r * adot
        h0 = np.array([
            -ml * math.sin(tilt) * adot**2,
            -self.m * self.grav * self.length * math.sin(tilt),
        ])
        h1 = np.array([self.k_b / self.r**2 * slip, -self.k_b / self.r * slip])
        f0 = np.concatenate([state[2:4], -minv @ h0])
        f1 = np.concatenate([np.zeros(2), -minv @ h1])
        gb = np.concatenate([np.zeros(2), minv @ np.array([1.0 / self.r, -1.0])])
        return f0, f1, gb

    @classmethod
    def from_config(cls, path) -> "SegwayModel":
        kv = parse_kv_file(path)
        return cls(
            m0=float(kv.get("m0", 52.71)),
            m=float(kv.get("m", 44.798)),
            j0=float(kv.get("j0", 5.108)),
            length=float(kv.get("length", 0.169)),
            r=float(kv.get("r", 0.195)),
            k_b=float(kv.get("k_b", 0.325)),
            grav=float(kv.get("grav", 9.81)),
            km_dist=TruncatedGaussian(
                float(kv.get("km_mean", 2.524)), float(kv.get("km_sd", 0.3)),
                float(kv.get("km_lo", 1.624)), float(kv.get("km_hi", 3.424))),
            tilt_limit=float(kv.get("tilt_limit", 0.1)),
            target_speed=float(kv.get("target_speed", 1.0)),
            p_max=float(kv.get("p_max", 10.0)),
            tilt_max=float(kv.get("tilt_max", 0.3)),
            pdot_max=float(kv.get("pdot_max", 2.0)),
            tiltdot_max=float(kv.get("tiltdot_max", 2.0)),
            u_max=float(kv.get("u_max", 20.0)),
        )


def uncertain_dist(model) -> TruncatedGaussian:
    return model.m2_dist if model.kind == "scara" else model.km_dist


def control_dim(model) -> int:
    return 2 if model.kind == "scara" else 1


def sample_dynamics(model, state: np.ndarray, seed: int,
                    count: int = DEFAULT_SAMPLE_COUNT) -> list[DynamicsSample]:
    """Draw `count` model samples (f, g) at one state."""
    params = sample_parameter(uncertain_dist(model), seed, count)
    return [model.dynamics(state, p) for p in params]


def mean_model(samples: list[DynamicsSample]) -> DynamicsSample:
    f = np.mean([s.f for s in samples], axis=0)
    g = np.mean([s.g for s in samples], axis=0)
    return DynamicsSample(f, g)


def make_model(robot: str, config_path=None):
    if robot == "scara":
        return ScaraModel.from_config(config_path) if config_path else ScaraModel()
    if robot == "segway":
        return SegwayModel.from_config(config_path) if config_path else SegwayModel()
    raise ValueError(f"unknown robot {robot!r}")
