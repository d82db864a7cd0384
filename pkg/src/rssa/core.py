"""Shared value types for the robust safe control stack.

States and controls are plain 1-D numpy arrays; the structured types below
carry the uncertainty-set and solver-result payloads that move between
modules.  Control-affine dynamics are written as

    x_dot = f(x) + g(x) u,      f in R^n,  g in R^(n x m),

and a model sample is the pair (f, g) evaluated at one state for one draw of
the uncertain parameters.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

StateVector = np.ndarray
ControlVector = np.ndarray


class SingularMassMatrix(RuntimeError):
    """Mass matrix not invertible at the requested configuration."""


class AtSwitchingSurface(RuntimeError):
    """Safety index branches tie; the gradient is not unique here."""


def in_box(x: np.ndarray, lower: np.ndarray, upper: np.ndarray, tol: float = 0.0) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(np.all(x >= lower - tol) and np.all(x <= upper + tol))


def flatten_g(g: np.ndarray) -> np.ndarray:
    """Row-major flattening of the control matrix: out[i*m + j] = g[i, j]."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 2:
        raise ValueError(f"g must be a 2-D matrix, got shape {g.shape}")
    return g.reshape(-1)


def unflatten_g(g_flat: np.ndarray, n: int, m: int) -> np.ndarray:
    g_flat = np.asarray(g_flat, dtype=float)
    if g_flat.size != n * m:
        raise ValueError(f"g_flat has size {g_flat.size}, expected {n * m}")
    return g_flat.reshape(n, m)


@dataclass(frozen=True)
class DynamicsSample:
    """One sampled control-affine model (f, g) at a fixed state."""

    f: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        g = np.asarray(self.g, dtype=float)
        if f.ndim != 1 or g.ndim != 2 or g.shape[0] != f.shape[0]:
            raise ValueError(f"inconsistent sample shapes f{f.shape}, g{g.shape}")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)

    @property
    def g_flat(self) -> np.ndarray:
        return flatten_g(self.g)


@dataclass(frozen=True)
class PolytopeSet:
    """Convex hull of finitely many vertices in R^d (stored as rows)."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if v.size == 0:
            raise ValueError("polytope needs at least one vertex")
        object.__setattr__(self, "vertices", v)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def support(self, w: np.ndarray) -> float:
        """max_{v in hull} w.v  (attained at a vertex)."""
        return float(np.max(self.vertices @ np.asarray(w, dtype=float)))

    def support_point(self, w: np.ndarray) -> np.ndarray:
        """Vertex attaining the support value; lowest index on ties."""
        return self.vertices[int(np.argmax(self.vertices @ np.asarray(w, dtype=float)))]

    def contains(self, point: np.ndarray, tol: float = 1e-9) -> bool:
        """Hull membership via an LP feasibility check on the convex weights."""
        from scipy.optimize import linprog

        point = np.asarray(point, dtype=float)
        k, d = self.vertices.shape
        if point.shape != (d,):
            raise ValueError(f"point has shape {point.shape}, expected ({d},)")
        # Find lambda >= 0, sum lambda = 1, V^T lambda = point.
        a_eq = np.vstack([self.vertices.T, np.ones((1, k))])
        b_eq = np.concatenate([point, [1.0]])
        res = linprog(np.zeros(k), A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * k,
                      method="highs")
        if res.status == 0:
            return True
        if res.status == 2:
            # Re-try with a small tolerance ball to absorb round-off.
            widths = np.ptp(self.vertices, axis=0)
            scale = max(float(np.max(widths)), 1.0)
            res = linprog(
                np.zeros(k),
                A_ub=np.vstack([self.vertices.T, -self.vertices.T]),
                b_ub=np.concatenate([point + tol * scale, -(point - tol * scale)]),
                A_eq=np.ones((1, k)),
                b_eq=np.array([1.0]),
                bounds=[(0, None)] * k,
                method="highs",
            )
            return res.status == 0
        raise RuntimeError(f"membership LP failed with status {res.status}")


@dataclass(frozen=True)
class EllipsoidSet:
    """Confidence ellipsoid {v : (v - mu)^T Q^{-1} (v - mu) <= dof}."""

    mu: np.ndarray
    q: np.ndarray
    dof: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if mu.ndim != 1 or q.shape != (mu.size, mu.size):
            raise ValueError(f"inconsistent ellipsoid shapes mu{mu.shape}, q{q.shape}")
        sym_err = float(np.max(np.abs(q - q.T)))
        scale = max(float(np.max(np.abs(q))), 1e-300)
        if sym_err > 1e-10 * scale:
            raise ValueError(f"q not symmetric (max asymmetry {sym_err:g})")
        q = 0.5 * (q + q.T)
        try:
            np.linalg.cholesky(q)
        except np.linalg.LinAlgError:
            raise ValueError("q must be symmetric positive definite") from None
        if not self.dof > 0:
            raise ValueError("dof must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "q", q)

    @property
    def dim(self) -> int:
        return self.mu.size

    def mahalanobis_sq(self, v: np.ndarray) -> float:
        d = np.asarray(v, dtype=float) - self.mu
        return float(d @ np.linalg.solve(self.q, d))

    def contains(self, v: np.ndarray, tol: float = 1e-9) -> bool:
        return self.mahalanobis_sq(v) <= self.dof * (1.0 + tol)

    def support(self, w: np.ndarray) -> float:
        """max_{v in set} w.v = w.mu + sqrt(dof * w^T Q w)."""
        w = np.asarray(w, dtype=float)
        return float(w @ self.mu + np.sqrt(max(self.dof * (w @ self.q @ w), 0.0)))


@dataclass(frozen=True)
class LieDerivativeBounds:
    """Uncertainty sets pushed through the safety-index gradient.

    v_f bounds the scalar drift term grad(phi).f; v_g bounds the control
    coefficient row vector grad(phi).g in R^m.  c is the right-hand side of
    the robust constraint  v.u <= c  for all v in v_g, i.e.
    c = -gamma(phi(x)) - max over v_f.
    """

    v_f: PolytopeSet | EllipsoidSet
    v_g: PolytopeSet | EllipsoidSet
    c: float = float("nan")


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE_EMPTY_UR = "infeasible_empty_ur"
    INFEASIBLE_CONTROL_LIMITS = "infeasible_control_limits"


@dataclass(frozen=True)
class RobustControlResult:
    """Outcome of one robust safe-control solve."""

    u: ControlVector | None
    status: SolveStatus
    cuts_used: int = 0
    iterations: int = 0
    residual: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


def regularize_spd(q: np.ndarray, rel: float = 1e-10, floor: float = 1e-14) -> np.ndarray:
    """Symmetrize and nudge a covariance onto the SPD cone.

    The shift is rel * trace(q) / d, with an absolute floor so that an
    all-zero covariance (identical samples) still yields a valid ellipsoid.
    """
    q = np.asarray(q, dtype=float)
    q = 0.5 * (q + q.T)
    d = q.shape[0]
    eps = max(rel * float(np.trace(q)) / d, floor)
    out = q + eps * np.eye(d)
    # One shot is almost always enough; escalate geometrically if round-off
    # still defeats the Cholesky.
    for _ in range(60):
        try:
            np.linalg.cholesky(out)
            return out
        except np.linalg.LinAlgError:
            eps *= 10.0
            out = q + eps * np.eye(d)
    raise ValueError("could not regularize matrix to SPD")
