"""Uncertainty bounds on sampled dynamics and their Lie-derivative images.

A bound captures the reachable set of models at one state, either as the
convex hull of sampled (f, g_flat) pairs or as a confidence ellipsoid fitted
to them.  Pushing a bound through the safety-index gradient yields scalar
bounds on the drift term grad(phi).f and a set of control-coefficient rows
grad(phi).g, from which the robust constraint

    v . u <= c    for all v in V_g,
    c = -gamma(phi(x)) - max_{V_f} grad(phi).f   [- d_res for the constant
                                                   mean-model variant]

is assembled.  Row-major flattening g_flat[i*m + j] = g[i][j] is used
throughout; the projection matrix T with T[j, i*m+j] = grad[i] maps the
g_flat ellipsoid to the coefficient-row ellipsoid.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

from .core import (DynamicsSample, EllipsoidSet, LieDerivativeBounds,
                   PolytopeSet, regularize_spd, unflatten_g)
from .dynamics import DEFAULT_SAMPLE_COUNT, control_dim, sample_parameter, uncertain_dist


def chi2_quantile(d: int, p: float, tol: float = 1e-8) -> float:
    """Quantile of the chi-square distribution with d dofs.

    Solved by bisection on the regularized lower incomplete gamma CDF
    P(d/2, x/2); bracket grows geometrically before bisection.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    if d <= 0:
        raise ValueError("d must be positive")
    lo, hi = 0.0, float(d + 10.0 * np.sqrt(2.0 * d) + 10.0)
    while gammainc(d / 2.0, hi / 2.0) < p:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("chi-square bracket failed to close")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gammainc(d / 2.0, mid / 2.0) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class UncertaintyBound:
    """State-local bound on the uncertain model set.

    kind is one of "polytope", "ellipsoid", "constant".  For "constant" the
    sigma sets are singletons holding the sample-mean model and d_res is the
    residual margin added to the constraint right-hand side.
    """

    kind: str
    sigma_f: PolytopeSet | EllipsoidSet
    sigma_g: PolytopeSet | EllipsoidSet
    d_res: float = 0.0


def build_polytope_bound(samples: list[DynamicsSample]) -> UncertaintyBound:
    """Convex hull of the raw samples; no vertex pruning.

    Keeping every sample as a vertex is sound (the hull is unchanged by
    interior points) and the solver cost is linear in the count.
    """
    if not samples:
        raise ValueError("need at least one sample")
    f_vertices = np.array([s.f for s in samples])
    g_vertices = np.array([s.g_flat for s in samples])
    return UncertaintyBound("polytope", PolytopeSet(f_vertices), PolytopeSet(g_vertices))


def build_ellipsoid_bound(samples: list[DynamicsSample],
                          confidence: float = 0.95) -> UncertaintyBound:
    """Gaussian-fit confidence ellipsoids over f and g_flat.

    The scaling dof is the chi-square quantile at `confidence` with as many
    dofs as the ambient dimension (n for f, n*m for g_flat); covariances are
    regularized toward SPD because sampled dynamics often vary on a low-
    dimensional manifold.
    """
    if len(samples) < 2:
        raise ValueError("need at least two samples for a covariance fit")
    f_mat = np.array([s.f for s in samples])
    g_mat = np.array([s.g_flat for s in samples])
    n = f_mat.shape[1]
    nm = g_mat.shape[1]
    sigma_f = EllipsoidSet(f_mat.mean(axis=0),
                           regularize_spd(np.cov(f_mat, rowvar=False)),
                           chi2_quantile(n, confidence))
    sigma_g = EllipsoidSet(g_mat.mean(axis=0),
                           regularize_spd(np.cov(g_mat, rowvar=False)),
                           chi2_quantile(nm, confidence))
    return UncertaintyBound("ellipsoid", sigma_f, sigma_g)


def analytic_segway_ellipsoid(model, state: np.ndarray,
                              confidence: float = 0.95) -> UncertaintyBound:
    """Exact Gaussian pushforward for the Segway's affine K_m dependence.

    f = f0 + K_m f1 and g_flat = K_m gb, so with K_m ~ N(mean, sd^2) both
    images are (rank-one) Gaussians: mu = f0 + mean*f1, Q = sd^2 f1 f1^T.
    The single underlying dof means the chi-square scale uses d = 1; the
    truncation of the K_m distribution is ignored (it only shrinks the set).
    """
    if model.kind != "segway":
        raise ValueError("analytic pushforward only applies to the segway model")
    f0, f1, gb = model.affine_decomposition(state)
    dist = model.km_dist
    dof = chi2_quantile(1, confidence)
    var = dist.sd ** 2
    sigma_f = EllipsoidSet(f0 + dist.mean * f1,
                           regularize_spd(var * np.outer(f1, f1)), dof)
    sigma_g = EllipsoidSet(dist.mean * gb,
                           regularize_spd(var * np.outer(gb, gb)), dof)
    return UncertaintyBound("ellipsoid", sigma_f, sigma_g)


def lie_projection_matrix(grad: np.ndarray, m: int) -> np.ndarray:
    """T such that T @ g_flat = grad^T g, with T[j, i*m+j] = grad[i]."""
    grad = np.asarray(grad, dtype=float)
    n = grad.size
    t = np.zeros((m, n * m))
    for i in range(n):
        for j in range(m):
            t[j, i * m + j] = grad[i]
    return t


def project_to_lie(bound: UncertaintyBound, grad: np.ndarray, m: int) -> LieDerivativeBounds:
    """Push the model bound through the index gradient; c is left unset."""
    grad = np.asarray(grad, dtype=float)
    n = grad.size
    if isinstance(bound.sigma_f, PolytopeSet):
        vf = PolytopeSet((bound.sigma_f.vertices @ grad)[:, None])
        g_vertices = bound.sigma_g.vertices.reshape(-1, n, m)
        vg = PolytopeSet(np.einsum("kij,i->kj", g_vertices, grad))
        return LieDerivativeBounds(vf, vg)
    t = lie_projection_matrix(grad, m)
    q_f = np.array([[float(grad @ bound.sigma_f.q @ grad)]])
    vf = EllipsoidSet(np.array([float(grad @ bound.sigma_f.mu)]),
                      regularize_spd(q_f), bound.sigma_f.dof)
    vg = EllipsoidSet(t @ bound.sigma_g.mu,
                      regularize_spd(t @ bound.sigma_g.q @ t.T), bound.sigma_g.dof)
    return LieDerivativeBounds(vf, vg)


def compute_c(lie: LieDerivativeBounds, phi_value: float, gamma_fn,
              d_res: float = 0.0) -> float:
    """c = -gamma(phi) - max over the drift bound (- d_res)."""
    if isinstance(lie.v_f, PolytopeSet):
        drift_max = float(np.max(lie.v_f.vertices))
    else:
        drift_max = lie.v_f.support(np.array([1.0]))
    return -float(gamma_fn(phi_value)) - drift_max - d_res


def with_c(lie: LieDerivativeBounds, phi_value: float, gamma_fn,
           d_res: float = 0.0) -> LieDerivativeBounds:
    return dataclasses.replace(lie, c=compute_c(lie, phi_value, gamma_fn, d_res))


def mean_model_bound(samples: list[DynamicsSample], d_res: float) -> UncertaintyBound:
    """Singleton bound at the sample mean, used by the constant-margin variant."""
    f_mean = np.mean([s.f for s in samples], axis=0)
    g_mean = np.mean([s.g_flat for s in samples], axis=0)
    return UncertaintyBound("constant", PolytopeSet(f_mean[None, :]),
                            PolytopeSet(g_mean[None, :]), d_res=d_res)


def estimate_constant_residual_bound(model, params, param_values: np.ndarray,
                                     state_grid: np.ndarray,
                                     control_box: tuple[np.ndarray, np.ndarray] | None = None,
                                     ) -> float:
    """Empirical residual cap for the constant-margin variant.

    d_res = max over grid states, parameter draws, and control-box corners of
    |grad(phi) . ((f - f_mean) + (g - g_mean) u)|.  Larger control boxes can
    only increase the max.
    """
    from .safety_index import batch_phi_terms

    states = np.atleast_2d(np.asarray(state_grid, dtype=float))
    values = np.asarray(param_values, dtype=float)
    lo, hi = control_box if control_box is not None else (model.control_lower,
                                                          model.control_upper)
    m = control_dim(model)
    corners = np.array(np.meshgrid(*[[lo[j], hi[j]] for j in range(m)],
                                   indexing="ij")).reshape(m, -1).T
    grads = batch_phi_terms(params, model, states)["grad"]
    if model.kind == "scara":
        f, minv = model.batch_dynamics(states, values)
        lf = np.einsum("ski,si->sk", f, grads)
        v = np.einsum("si,skij->skj", grads[:, 2:4], minv)
    else:
        f, glow = model.batch_dynamics(states, values)
        lf = np.einsum("ski,si->sk", f, grads)
        v = np.einsum("si,ski->sk", grads[:, 2:4], glow)[..., None]
    lf_res = lf - lf.mean(axis=1, keepdims=True)
    v_res = v - v.mean(axis=1, keepdims=True)
    # residual(u) = lf_res + v_res . u, maximized over box corners
    total = lf_res[..., None] + np.einsum("skj,cj->skc", v_res, corners)
    return float(np.max(np.abs(total)))


def build_bound(model, state: np.ndarray, kind: str = "polytope",
                param_values: np.ndarray | None = None, seed: int = 0,
                sample_count: int = DEFAULT_SAMPLE_COUNT,
                confidence: float = 0.95, d_res: float = 0.0) -> UncertaintyBound:
    """Construct the requested bound at one state.

    `param_values` lets callers reuse one parameter-sample set across states
    or steps; otherwise `seed`/`sample_count` draw a fresh set.  kind
    "ellipsoid_analytic" requests the exact pushforward (Segway only).
    """
    if kind == "ellipsoid_analytic":
        return analytic_segway_ellipsoid(model, state, confidence)
    if param_values is None:
        param_values = sample_parameter(uncertain_dist(model), seed, sample_count)
    samples = [model.dynamics(state, p) for p in np.asarray(param_values)]
    if kind == "polytope":
        return build_polytope_bound(samples)
    if kind == "ellipsoid":
        return build_ellipsoid_bound(samples, confidence)
    if kind == "constant":
        return mean_model_bound(samples, d_res)
    raise ValueError(f"unknown bound kind {kind!r}")
