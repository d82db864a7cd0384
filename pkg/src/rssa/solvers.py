"""Robust safe-control solvers.

All variants filter a reference command through

    min ||u - u_ref||^2   s.t.  v . u <= c  for all v in V_g,   u in box,

where (V_g, c) come from the state-local uncertainty bound.  The polytope
variant solves the semi-infinite program by cutting planes over the vertex
set; the ellipsoid variant solves the equivalent second-order cone program
||L^T u|| <= -mu_v . u + c with L L^T = dof * Q_v; the constant variant uses
the single mean-model constraint with an additive residual margin d_res.

The inner projection QP is solved exactly by face enumeration: in one or two
control dimensions the minimizer lies on a face spanned by at most m active
constraints, so enumerating singles and pairs with nonnegative multipliers
and keeping the nearest feasible candidate is both exact and fast.  An empty
candidate set certifies infeasibility.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import safety_index as si
from .bounds import UncertaintyBound, compute_c, project_to_lie, with_c
from .core import (EllipsoidSet, LieDerivativeBounds, PolytopeSet,
                   RobustControlResult, SolveStatus)
from .dynamics import control_dim

_FEAS_EPS = 1e-9
_DUAL_EPS = 1e-9


@dataclass(frozen=True)
class QpProblem:
    """min ||u - u_ref||^2  s.t.  a @ u <= b,  lower <= u <= upper."""

    u_ref: np.ndarray
    a: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class QpSolution:
    u: np.ndarray | None
    feasible: bool
    active: list = field(default_factory=list)
    lams: np.ndarray | None = None
    residual: float = 0.0


def _assemble_rows(problem: QpProblem):
    """Stack user rows with box rows and normalize each to unit norm."""
    m = problem.u_ref.size
    eye = np.eye(m)
    a = np.vstack([np.atleast_2d(problem.a).reshape(-1, m), eye, -eye])
    b = np.concatenate([np.atleast_1d(problem.b), problem.upper, -problem.lower])
    norms = np.linalg.norm(a, axis=1)
    degenerate = norms < 1e-14
    if np.any(degenerate):
        # 0 . u <= b rows: drop if vacuous, fail immediately otherwise.
        if np.any(b[degenerate] < -_FEAS_EPS):
            return None, None
        a, b, norms = a[~degenerate], b[~degenerate], norms[~degenerate]
    return a / norms[:, None], b / norms


def solve_qp(problem: QpProblem, tol: float = _FEAS_EPS) -> QpSolution:
    """Exact projection of u_ref onto the constraint polyhedron (m <= 2)."""
    u_ref = np.asarray(problem.u_ref, dtype=float)
    m = u_ref.size
    if m > 2:
        raise ValueError("face-enumeration projector supports m <= 2")
    rows = _assemble_rows(problem)
    if rows[0] is None:
        return QpSolution(None, False)
    a, b = rows
    slack = a @ u_ref - b
    if np.max(slack) <= tol:
        return QpSolution(u_ref.copy(), True, [], np.zeros(0), max(0.0, float(np.max(slack))))

    best = None  # (dist_sq, u, active, lams)

    def consider(u, active, lams):
        nonlocal best
        if np.max(a @ u - b) > tol:
            return
        d = float(np.sum((u - u_ref) ** 2))
        if best is None or d < best[0] - 1e-15:
            best = (d, u, active, lams)

    violated = np.flatnonzero(slack > 1e-14)
    for i in violated:
        consider(u_ref - slack[i] * a[i], [int(i)], np.array([slack[i]]))
    if m == 2:
        k = a.shape[0]
        gram = a @ a.T
        ii, jj = np.triu_indices(k, k=1)
        dots = gram[ii, jj]
        dets = 1.0 - dots**2
        ok = dets > 1e-12
        ii, jj, dots, dets = ii[ok], jj[ok], dots[ok], dets[ok]
        si_, sj_ = slack[ii], slack[jj]
        lam1 = (si_ - dots * sj_) / dets
        lam2 = (sj_ - dots * si_) / dets
        keep = (lam1 >= -_DUAL_EPS) & (lam2 >= -_DUAL_EPS) & ((lam1 > 0) | (lam2 > 0))
        cand_u = (u_ref[None, :] - lam1[keep, None] * a[ii[keep]]
                  - lam2[keep, None] * a[jj[keep]])
        feas = np.max(cand_u @ a.T - b[None, :], axis=1) <= tol
        for idx in np.flatnonzero(feas):
            ci, cj = int(ii[keep][idx]), int(jj[keep][idx])
            consider(cand_u[idx], [ci, cj],
                     np.array([lam1[keep][idx], lam2[keep][idx]]))
    if best is None:
        return QpSolution(None, False)
    _, u, active, lams = best
    return QpSolution(u, True, active, lams, max(0.0, float(np.max(a @ u - b))))


# ---------------------------------------------------------------------------
# Hull geometry in control-coefficient space (m <= 2).

def origin_in_hull(vertices: np.ndarray, strict: bool = False,
                   tol: float = 1e-12) -> bool:
    """Membership of the origin in conv(vertices), dim 1 or 2.

    dim 1 reduces to a sign check.  In dim 2 the origin lies outside the
    hull exactly when all vertex directions fit in an open half-plane, i.e.
    when the largest angular gap exceeds pi.
    """
    v = np.atleast_2d(np.asarray(vertices, dtype=float))
    if v.shape[1] == 1:
        lo, hi = float(np.min(v)), float(np.max(v))
        return (lo < -tol and hi > tol) if strict else (lo <= tol and hi >= -tol)
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms <= tol):
        return not strict  # a vertex at the origin: in the hull, never interior
    ang = np.sort(np.arctan2(v[:, 1], v[:, 0]))
    gaps = np.diff(ang, append=ang[0] + 2.0 * math.pi)
    max_gap = float(np.max(gaps))
    if strict:
        return max_gap < math.pi - 1e-9
    return max_gap <= math.pi + 1e-9


def min_gauge_over_hull(vertices: np.ndarray, lower: np.ndarray,
                        upper: np.ndarray) -> float:
    """min over conv(vertices) of h(w) = sum_j max(-lower_j w_j, -upper_j w_j).

    h is the box support function at -w; it vanishes only at w = 0 (the box
    must contain the origin in its interior).  If the origin is in the hull
    the minimum is 0; otherwise it is attained on the hull boundary, which
    is covered by the pairwise vertex segments.
    """
    v = np.atleast_2d(np.asarray(vertices, dtype=float))
    if np.any(lower >= 0) or np.any(upper <= 0):
        raise ValueError("control box must contain 0 in its interior")
    if origin_in_hull(v):
        return 0.0

    def h(w):
        w = np.atleast_2d(w)
        return np.sum(np.maximum(-lower * w, -upper * w), axis=1)

    best = float(np.min(h(v)))
    k, d = v.shape
    if d == 1 or k == 1:
        return best
    ii, jj = np.triu_indices(k, k=1)
    p, q = v[ii], v[jj]
    delta = q - p
    with np.errstate(divide="ignore", invalid="ignore"):
        for axis in range(d):
            t = np.where(np.abs(delta[:, axis]) > 1e-300,
                         -p[:, axis] / delta[:, axis], np.nan)
            ok = (t > 0.0) & (t < 1.0)
            if np.any(ok):
                pts = p[ok] + t[ok, None] * delta[ok]
                best = min(best, float(np.min(h(pts))))
    return best


def robust_set_is_empty(lie: LieDerivativeBounds) -> bool:
    """U_r = {u : v.u <= c for all v in V_g} is empty iff c < 0 and 0 in V_g."""
    if lie.c >= 0:
        return False
    if isinstance(lie.v_g, PolytopeSet):
        return origin_in_hull(lie.v_g.vertices)
    e = lie.v_g
    return float(e.mu @ np.linalg.solve(e.dof * e.q, e.mu)) <= 1.0 + 1e-12


def _infeasible_status(lie: LieDerivativeBounds) -> SolveStatus:
    if robust_set_is_empty(lie):
        return SolveStatus.INFEASIBLE_EMPTY_UR
    return SolveStatus.INFEASIBLE_CONTROL_LIMITS


def _enforced_terms(model, params, state):
    """(phi value, gradient, gamma fn) for the enforced index.

    params=None enforces the raw index phi0 directly (no velocity term, so
    the control coefficient can vanish; useful for feasibility studies).
    """
    if params is None:
        value = si.phi0(model, state)
        grad = si.grad_phi0(model, state)
        gamma_fn = lambda t: t
    else:
        value = si.phi_smooth(params, model, state)
        grad = si.grad_phi_smooth(params, model, state)
        gamma_fn = lambda t: si.gamma(params, t)
    return value, grad, gamma_fn


def cutting_plane_qp(vertices: np.ndarray, c: float, u_ref: np.ndarray,
                     lower: np.ndarray, upper: np.ndarray, tol: float = 1e-6,
                     max_iters: int | None = None,
                     history: list | None = None) -> RobustControlResult:
    """Cutting-plane solve of  min ||u-u_ref||^2  s.t.  V u <= c, box.

    Starts from the vertex most violated at u_ref, solves the finite QP,
    and adds the worst-violating vertex until the full vertex set is
    satisfied to `tol`.  A fast necessary-condition check reports an empty
    robust set when c < 0 and the hull of the vertices strictly surrounds
    the origin (no direction of control authority remains).
    """
    vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
    u_ref = np.asarray(u_ref, dtype=float)

    if c < -tol and origin_in_hull(vertices, strict=True):
        return RobustControlResult(None, SolveStatus.INFEASIBLE_EMPTY_UR)

    if max_iters is None:
        max_iters = vertices.shape[0]
    cuts = [int(np.argmax(vertices @ u_ref))]
    iterations = 0
    while True:
        iterations += 1
        sol = solve_qp(QpProblem(u_ref, vertices[cuts], np.full(len(cuts), c),
                                 lower, upper))
        if not sol.feasible:
            # The relaxation is already empty, so the full program is too.
            status = (SolveStatus.INFEASIBLE_EMPTY_UR
                      if c < 0 and origin_in_hull(vertices)
                      else SolveStatus.INFEASIBLE_CONTROL_LIMITS)
            return RobustControlResult(None, status, cuts_used=len(cuts),
                                       iterations=iterations)
        if history is not None:
            history.append(float(np.sum((sol.u - u_ref) ** 2)))
        scores = vertices @ sol.u
        worst = int(np.argmax(scores))
        violation = float(scores[worst] - c)
        if violation <= tol or iterations >= max_iters or worst in cuts:
            active = int(np.sum(scores[cuts] >= c - 1e-7 * max(1.0, abs(c))))
            residual = max(0.0, violation,
                           float(np.max(sol.u - upper)), float(np.max(lower - sol.u)))
            return RobustControlResult(sol.u, SolveStatus.OPTIMAL, cuts_used=active,
                                       iterations=iterations, residual=residual)
        cuts.append(worst)


def polytope_rssa(model, params, state, bound: UncertaintyBound,
                  u_ref: np.ndarray, tol: float = 1e-6,
                  max_iters: int | None = None, margin: float = 0.0,
                  history: list | None = None) -> RobustControlResult:
    """Vertex semi-infinite program at one state, solved by cutting planes."""
    value, grad, gamma_fn = _enforced_terms(model, params, state)
    lie = with_c(project_to_lie(bound, grad, control_dim(model)), value, gamma_fn,
                 bound.d_res)
    return cutting_plane_qp(lie.v_g.vertices, lie.c - margin, u_ref,
                            model.control_lower, model.control_upper, tol,
                            max_iters, history)


def _soc_interval(mu: float, l_scale: float, c: float):
    """Solution interval of |l| |u| + mu u <= c on the reals, or None.

    Piecewise linear in u; the constraint function is convex so the
    feasible set is always a (possibly unbounded) interval.
    """
    pos = neg = None
    for sgn, half_lo, half_hi in ((1.0, 0.0, math.inf), (-1.0, -math.inf, 0.0)):
        coeff = l_scale * sgn + mu
        if coeff > 1e-300:
            seg = (half_lo, min(half_hi, c / coeff))
        elif coeff < -1e-300:
            seg = (max(half_lo, c / coeff), half_hi)
        else:
            seg = (half_lo, half_hi) if c >= 0 else None
        if seg is not None and seg[0] <= seg[1]:
            if sgn > 0:
                pos = seg
            else:
                neg = seg
    if pos is None and neg is None:
        return None
    if pos is None:
        return neg
    if neg is None:
        return pos
    return (neg[0], pos[1])  # union of adjacent intervals sharing 0


def _soc_chol(v_g: EllipsoidSet) -> tuple[np.ndarray, np.ndarray]:
    """mu_v and L with L L^T = dof * Q_v."""
    return v_g.mu, np.linalg.cholesky(v_g.dof * v_g.q)


class _BarrierDomainError(RuntimeError):
    pass


def _soc_barrier_solve(r, mu, lmat, c, lower, upper, u0, tau0, tol):
    """Damped-Newton log-barrier iteration for the m = 2 cone projection.

    minimize ||u - r||^2 over  s(u) = c - mu.u >= ||L^T u||,  box(u),
    with barrier -log(s^2 - ||L^T u||^2) - sum log box slacks.  The outer
    loop shrinks tau by 0.2 per round (std barrier path-following).
    """
    ll = lmat @ lmat.T

    def parts(u):
        s = c - mu @ u
        z = lmat.T @ u
        q = s * s - z @ z
        us, ls = upper - u, u - lower
        if q <= 0 or s <= 0 or np.any(us <= 0) or np.any(ls <= 0):
            raise _BarrierDomainError
        return s, z, q, us, ls

    def value(u, tau):
        s, z, q, us, ls = parts(u)
        return (np.sum((u - r) ** 2)
                - tau * (math.log(q) + np.sum(np.log(us)) + np.sum(np.log(ls))))

    u = u0.copy()
    tau = tau0
    while tau > tol:
        for _ in range(60):
            s, z, q, us, ls = parts(u)
            dq = -2.0 * s * mu - 2.0 * (lmat @ z)
            grad = 2.0 * (u - r) - tau * dq / q + tau * (1.0 / us - 1.0 / ls)
            hq = 2.0 * np.outer(mu, mu) - 2.0 * ll
            hess = (2.0 * np.eye(u.size)
                    + tau * (np.outer(dq, dq) / q**2 - hq / q)
                    + tau * np.diag(1.0 / us**2 + 1.0 / ls**2))
            try:
                step = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                step = -grad
            decrement = float(-grad @ step)
            if decrement <= 1e-14 * max(1.0, float(np.sum((u - r) ** 2))):
                break
            t = 1.0
            base = value(u, tau)
            for _ in range(60):
                try:
                    if value(u + t * step, tau) <= base - 1e-4 * t * decrement:
                        break
                except _BarrierDomainError:
                    pass
                t *= 0.5
            else:
                break
            u = u + t * step
        tau *= 0.2
    return u


def _soc_infeasible_status(mu, lmat, c) -> SolveStatus:
    """Empty robust set iff c < 0 and the origin lies inside the ellipsoid
    {mu + L w : ||w|| <= 1} (mirrors robust_set_is_empty on (mu, L) form)."""
    if c < 0 and float(mu @ np.linalg.solve(lmat @ lmat.T, mu)) <= 1.0 + 1e-12:
        return SolveStatus.INFEASIBLE_EMPTY_UR
    return SolveStatus.INFEASIBLE_CONTROL_LIMITS


def soc_projection(mu: np.ndarray, lmat: np.ndarray, c: float,
                   u_ref: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                   tol: float = 1e-8) -> RobustControlResult:
    """min ||u-u_ref||^2  s.t.  ||L^T u|| <= c - mu.u,  box.

    m = 1 admits a closed-form interval; m = 2 uses a damped interior-point
    (log-barrier) iteration with a Phase-1 epigraph solve when no strictly
    feasible start is available.
    """
    mu = np.asarray(mu, dtype=float)
    lmat = np.asarray(lmat, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    m = mu.size

    if m == 1:
        interval = _soc_interval(float(mu[0]), float(abs(lmat[0, 0])), c)
        if interval is None:
            return RobustControlResult(None, _soc_infeasible_status(mu, lmat, c),
                                       iterations=1)
        lo = max(interval[0], float(lower[0]))
        hi = min(interval[1], float(upper[0]))
        if lo > hi + 1e-12:
            return RobustControlResult(None, _soc_infeasible_status(mu, lmat, c),
                                       iterations=1)
        u = np.array([min(max(float(u_ref[0]), lo), hi)])
        resid = max(0.0, float(abs(lmat[0, 0]) * abs(u[0]) + mu[0] * u[0] - c))
        return RobustControlResult(u, SolveStatus.OPTIMAL, iterations=1,
                                   residual=resid)

    scale = 1.0 + abs(c) + float(np.linalg.norm(mu) * np.linalg.norm(upper))

    def soc_gap(u):
        return float(np.linalg.norm(lmat.T @ u) + mu @ u - c)

    # Strictly feasible start: try cheap candidates, then a Phase-1 epigraph.
    u0 = None
    for cand in (0.5 * (lower + upper), np.clip(u_ref, lower, upper),
                 np.zeros(m)):
        if (soc_gap(cand) < -1e-7 * scale
                and np.all(cand < upper - 1e-12) and np.all(cand > lower + 1e-12)):
            u0 = np.asarray(cand, dtype=float)
            break
    iterations = 0
    if u0 is None:
        u0, t_star = _soc_phase1(mu, lmat, c, lower, upper, scale)
        iterations += 1
        if u0 is None:
            if t_star <= 1e-6 * scale:
                # Degenerate boundary-only feasible set; the minimum-violation
                # point is the unique (near-)feasible control.
                u = np.clip(t_star_point(mu, lmat, c, lower, upper), lower, upper)
                return RobustControlResult(u, SolveStatus.OPTIMAL, iterations=2,
                                           residual=max(0.0, soc_gap(u)))
            return RobustControlResult(None, _soc_infeasible_status(mu, lmat, c),
                                       iterations=2)

    u = _soc_barrier_solve(u_ref, mu, lmat, c, lower, upper, u0,
                           tau0=max(1.0, float(np.sum((u0 - u_ref) ** 2))),
                           tol=tol * 1e-4)
    resid = max(0.0, soc_gap(u), float(np.max(u - upper)), float(np.max(lower - u)))
    return RobustControlResult(u, SolveStatus.OPTIMAL, iterations=iterations + 1,
                               residual=resid)


def ellipsoid_rssa(model, params, state, bound: UncertaintyBound,
                   u_ref: np.ndarray, tol: float = 1e-8,
                   margin: float = 0.0) -> RobustControlResult:
    """Second-order cone projection for ellipsoidal Lie bounds.

    The robust constraint max_{v in E} v.u <= c equals ||L^T u|| <= c - mu.u
    with L L^T = dof * Q_v.
    """
    value, grad, gamma_fn = _enforced_terms(model, params, state)
    m = control_dim(model)
    lie = project_to_lie(bound, grad, m)
    if not isinstance(lie.v_g, EllipsoidSet):
        raise ValueError("ellipsoid_rssa requires an ellipsoid bound")
    c = compute_c(lie, value, gamma_fn, bound.d_res) - margin
    mu, lmat = _soc_chol(lie.v_g)
    return soc_projection(mu, lmat, c, u_ref, model.control_lower,
                          model.control_upper, tol)


def _soc_phase1(mu, lmat, c, lower, upper, scale):
    """Minimize the cone violation over the box via the same barrier.

    Works on (u, t) with constraint ||L^T u|| <= c + t - mu.u; returns a
    strictly feasible u (violation < 0) or (None, min violation).
    """
    m = mu.size
    u = 0.5 * (lower + upper)
    t = float(np.linalg.norm(lmat.T @ u) + mu @ u - c) + 1.0
    ll = lmat @ lmat.T

    def parts(w):
        u_, t_ = w[:m], w[m]
        s = c + t_ - mu @ u_
        z = lmat.T @ u_
        q = s * s - z @ z
        us, ls = upper - u_, u_ - lower
        if q <= 0 or s <= 0 or np.any(us <= 0) or np.any(ls <= 0):
            raise _BarrierDomainError
        return s, z, q, us, ls

    def value(w, tau):
        s, z, q, us, ls = parts(w)
        return w[m] - tau * (math.log(q) + np.sum(np.log(us)) + np.sum(np.log(ls)))

    w = np.concatenate([u, [t]])
    tau = max(1.0, abs(t))
    best_t = t
    for _outer in range(40):
        if tau < 1e-10 * scale:
            break
        for _ in range(60):
            s, z, q, us, ls = parts(w)
            dq = np.concatenate([-2.0 * s * mu - 2.0 * (lmat @ z), [2.0 * s]])
            grad = np.zeros(m + 1)
            grad[m] = 1.0
            grad -= tau * dq / q
            grad[:m] += tau * (1.0 / us - 1.0 / ls)
            hq = np.zeros((m + 1, m + 1))
            hq[:m, :m] = 2.0 * np.outer(mu, mu) - 2.0 * ll
            hq[:m, m] = hq[m, :m] = -2.0 * mu
            hq[m, m] = 2.0
            hess = tau * (np.outer(dq, dq) / q**2 - hq / q)
            hess[:m, :m] += tau * np.diag(1.0 / us**2 + 1.0 / ls**2)
            hess += 1e-12 * np.eye(m + 1)
            try:
                step = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                break
            decrement = float(-grad @ step)
            if decrement <= 1e-13 * max(1.0, abs(w[m])):
                break
            tstep = 1.0
            base = value(w, tau)
            for _ in range(60):
                try:
                    if value(w + tstep * step, tau) <= base - 1e-4 * tstep * decrement:
                        break
                except _BarrierDomainError:
                    pass
                tstep *= 0.5
            else:
                break
            w = w + tstep * step
            best_t = min(best_t, float(w[m]))
            if w[m] < -1e-6 * scale:
                gap = float(np.linalg.norm(lmat.T @ w[:m]) + mu @ w[:m] - c)
                if gap < -1e-8 * scale:
                    return w[:m].copy(), gap
        tau *= 0.2
    gap = float(np.linalg.norm(lmat.T @ w[:m]) + mu @ w[:m] - c)
    if gap < -1e-9 * scale:
        return w[:m].copy(), gap
    return None, max(gap, best_t)


def t_star_point(mu, lmat, c, lower, upper):
    """Best-effort minimum-violation point (coarse grid refinement)."""
    grid = np.linspace(0.0, 1.0, 33)
    uu, vv = np.meshgrid(lower[0] + grid * (upper[0] - lower[0]),
                         lower[1] + grid * (upper[1] - lower[1]))
    pts = np.column_stack([uu.ravel(), vv.ravel()])
    viol = np.linalg.norm(pts @ lmat, axis=1) + pts @ mu - c
    return pts[int(np.argmin(viol))]


def constant_rssa(model, params, state, bound: UncertaintyBound,
                  u_ref: np.ndarray, tol: float = 1e-6,
                  margin: float = 0.0) -> RobustControlResult:
    """Single-constraint mean-model variant with residual margin d_res."""
    if bound.kind != "constant":
        raise ValueError("constant_rssa requires a constant (mean-model) bound")
    value, grad, gamma_fn = _enforced_terms(model, params, state)
    lie = with_c(project_to_lie(bound, grad, control_dim(model)), value, gamma_fn,
                 bound.d_res)
    c = lie.c - margin
    w = lie.v_g.vertices[0]
    sol = solve_qp(QpProblem(np.asarray(u_ref, dtype=float), w[None, :],
                             np.array([c]), model.control_lower,
                             model.control_upper))
    if not sol.feasible:
        return RobustControlResult(None, _infeasible_status(dataclasses.replace(lie, c=c)),
                                   iterations=1)
    residual = max(0.0, float(w @ sol.u - c))
    return RobustControlResult(sol.u, SolveStatus.OPTIMAL,
                               cuts_used=int(w @ sol.u >= c - 1e-7 * max(1.0, abs(c))),
                               iterations=1, residual=residual)


_SOLVERS = {"polytope": polytope_rssa, "ellipsoid": ellipsoid_rssa,
            "constant": constant_rssa}


def solve_variant(variant: str, model, params, state, bound, u_ref, **kw):
    if variant not in _SOLVERS:
        raise ValueError(f"unknown solver variant {variant!r}")
    return _SOLVERS[variant](model, params, state, bound, u_ref, **kw)


def is_feasible(model, params, state, bound: UncertaintyBound, eps: float = 0.0,
                variant: str | None = None) -> bool:
    """True iff some in-box control satisfies the robust constraint with
    margin eps (the solve is rerun with c replaced by c - eps)."""
    if variant is None:
        variant = bound.kind
    res = solve_variant(variant, model, params, state, bound,
                        np.zeros(control_dim(model)), margin=eps)
    return res.feasible


def fallback_safest_control(model, params, state, bound: UncertaintyBound) -> np.ndarray:
    """Minimax fallback: minimize the worst-case phi_dot over the box.

    Used when the robust constraint is infeasible at run time; the optimizer
    of max_{v in V_g} v.u (plus the u-independent drift term) is the least
    damaging admissible control.
    """
    from scipy.optimize import linprog

    _, grad, _ = _enforced_terms(model, params, state)
    m = control_dim(model)
    lie = project_to_lie(bound, grad, m)
    lower, upper = model.control_lower, model.control_upper
    zero_in_box = bool(np.all(lower <= 0.0) and np.all(upper >= 0.0))
    if isinstance(lie.v_g, PolytopeSet):
        v = lie.v_g.vertices
        res = linprog(np.concatenate([np.zeros(m), [1.0]]),
                      A_ub=np.hstack([v, -np.ones((v.shape[0], 1))]),
                      b_ub=np.zeros(v.shape[0]),
                      bounds=[(lower[j], upper[j]) for j in range(m)] + [(None, None)],
                      method="highs")
        if res.status != 0:
            return np.zeros(m)
        # u = 0 attains the minimax value whenever no control is strictly
        # descending; prefer it over an arbitrary LP vertex of equal value.
        if zero_in_box and res.x[m] >= -1e-12:
            return np.zeros(m)
        return np.asarray(res.x[:m])
    mu, lmat = _soc_chol(lie.v_g)
    if m == 1:
        cands = ([0.0] if zero_in_box else []) + [lower[0], upper[0]]
        vals = [abs(lmat[0, 0]) * abs(u) + mu[0] * u for u in cands]
        return np.array([cands[int(np.argmin(vals))]])
    # Support-function cutting planes on max_{v in E} v.u.
    cuts = [mu + lmat @ e for e in np.eye(m)] + [mu - lmat @ e for e in np.eye(m)]
    u = np.zeros(m)
    for _ in range(100):
        v = np.array(cuts)
        res = linprog(np.concatenate([np.zeros(m), [1.0]]),
                      A_ub=np.hstack([v, -np.ones((v.shape[0], 1))]),
                      b_ub=np.zeros(v.shape[0]),
                      bounds=[(lower[j], upper[j]) for j in range(m)] + [(None, None)],
                      method="highs")
        if res.status != 0:
            break
        u = np.asarray(res.x[:m])
        z = lmat.T @ u
        nz = np.linalg.norm(z)
        support = float(mu @ u + nz)
        if support - float(res.x[m]) <= 1e-9 * (1.0 + abs(support)):
            break
        cuts.append(mu + (lmat @ z) / nz if nz > 1e-300 else mu)
    if zero_in_box and float(mu @ u + np.linalg.norm(lmat.T @ u)) >= -1e-12:
        return np.zeros(m)
    return u
