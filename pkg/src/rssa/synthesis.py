"""Safety-index synthesis by feasible-rate maximization.

A parameter vector theta = (alpha, k_v, beta) is certified on a sampled
state grid B when every grid state admits a robust safe control with margin

    epsilon = k_phi (k_sigma_f + k_sigma_g M_u) delta
              + k_grad_phi delta M_xdot + k_gamma k_phi delta,

where delta is the grid half-cell diagonal.  Margin-epsilon feasibility on
the grid then implies margin-0 feasibility everywhere in the state box (the
continuity argument behind the certificate), provided the Lipschitz
constants are valid on the box.  The search over theta runs CMA-ES on the
feasible rate, which needs no gradients and tolerates the flat regions the
rate surface exhibits.

Feasibility of a whole state batch is decided in closed form.  Write the
robust constraint as v . u <= t for all v in hull(V) with t = c - epsilon.
Feasibility over the control box U is, by LP duality,

    min_{w in hull(V)} h_U(-w) >= -t,     h_U(y) = sup_{u in U} y . u,

and h_U(-w) is piecewise linear, so the minimum over the hull is attained
either at 0 (when 0 is in the hull) or on the pairwise vertex segments.
This evaluates one state in microseconds instead of a cutting-plane solve.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import safety_index as si
from .bounds import build_bound
from .dynamics import DEFAULT_SAMPLE_COUNT, sample_parameter, uncertain_dist
from .solvers import is_feasible

_ZERO_VERTEX_TOL = 1e-12


@dataclass(frozen=True)
class SynthesisConfig:
    """Grid, margin constants, and CMA-ES settings for one synthesis run.

    delta, m_u and m_xdot may be left at 0 / None to be derived from the
    grid and model at run time; the effective values are echoed in the
    result.  The Lipschitz constants are treated as given (the certificate
    is relative to them); estimate_lipschitz produces empirical candidates.
    """

    grid_counts: tuple = (12, 12, 12, 12)
    delta: float = 0.0
    k_gamma: float = 1.0
    k_phi: float = 0.08
    k_grad_phi: float = 1e-4
    k_sigma_f: float = 0.05
    k_sigma_g: float = 0.005
    m_u: float | None = None
    m_xdot: float | None = None
    population: int = 16
    sigma0: float = 0.3
    max_generations: int = 50
    seed: int = 0
    sample_count: int = DEFAULT_SAMPLE_COUNT
    search_lower: tuple = tuple(si.SEARCH_LOWER)
    search_upper: tuple = tuple(si.SEARCH_UPPER)

    def __post_init__(self):
        for name in ("k_gamma", "k_phi", "k_grad_phi", "k_sigma_f",
                     "k_sigma_g", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("m_u", "m_xdot"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if not all(l < u for l, u in zip(self.search_lower, self.search_upper)):
            raise ValueError("search box must have lower < upper")

    @classmethod
    def from_config(cls, values: dict) -> "SynthesisConfig":
        kw = {}
        if "grid" in values:
            counts = values["grid"]
            if isinstance(counts, str):
                counts = tuple(int(c) for c in counts.split(","))
            else:
                counts = (int(counts),) * 4
            kw["grid_counts"] = counts
        for key in ("k_gamma", "k_phi", "k_grad_phi", "k_sigma_f", "k_sigma_g",
                    "m_u", "m_xdot", "sigma0"):
            if key in values:
                kw[key] = float(values[key])
        for key in ("population", "max_generations", "seed", "sample_count"):
            if key in values:
                kw[key] = int(values[key])
        return cls(**kw)


def sample_state_grid(model, grid_counts) -> tuple[np.ndarray, float]:
    """Uniform tensor grid over the state box; returns (states, delta).

    delta is half the grid-cell diagonal, so every point of the box lies
    within delta (Euclidean, raw coordinates) of some grid state.
    """
    lower, upper = model.state_lower, model.state_upper
    counts = tuple(int(c) for c in grid_counts)
    if len(counts) != lower.size:
        raise ValueError("grid_counts must give one count per state dimension")
    if any(c < 2 for c in counts):
        raise ValueError("grid_counts must be >= 2 per dimension")
    axes = [np.linspace(lower[j], upper[j], counts[j]) for j in range(lower.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    states = np.column_stack([m.ravel() for m in mesh])
    widths = (upper - lower) / (np.asarray(counts) - 1)
    delta = 0.5 * float(np.linalg.norm(widths))
    return states, delta


def margin_epsilon(cfg: SynthesisConfig) -> float:
    """Grid-to-continuum feasibility margin (linear in delta)."""
    if cfg.m_u is None or cfg.m_xdot is None:
        raise ValueError("m_u and m_xdot must be populated")
    return (cfg.k_phi * (cfg.k_sigma_f + cfg.k_sigma_g * cfg.m_u) * cfg.delta
            + cfg.k_grad_phi * cfg.delta * cfg.m_xdot
            + cfg.k_gamma * cfg.k_phi * cfg.delta)


def derive_magnitude_caps(model, states, param_values) -> tuple[float, float]:
    """(M_u, M_xdot): control-box corner norm and max ||xdot|| over the
    grid x parameter draws x control corners."""
    corners = box_corners(model.control_lower, model.control_upper)
    m_u = float(np.max(np.linalg.norm(corners, axis=1)))
    if model.kind == "scara":
        f, minv = model.batch_dynamics(states, param_values)
        acc = np.einsum("skij,cj->skci", minv, corners)
    else:
        f, glow = model.batch_dynamics(states, param_values)
        acc = np.einsum("ski,c->skci", glow, corners[:, 0])
    xdot = np.repeat(f[:, :, None, :], corners.shape[0], axis=2)
    xdot[..., 2:] += acc  # controls act on the two velocity rows
    m_xdot = float(np.max(np.linalg.norm(xdot, axis=-1)))
    return m_u, m_xdot


def box_corners(lower, upper) -> np.ndarray:
    m = lower.size
    bits = np.array(np.meshgrid(*[[0, 1]] * m, indexing="ij")).reshape(m, -1).T
    return np.where(bits > 0, upper, lower)


_PARAM_CACHE: dict = {}


def _shared_param_values(model, seed, count) -> np.ndarray:
    """One frozen parameter-sample set per (model kind, seed, count).

    Reusing the draw makes the feasible rate a deterministic function of
    theta, which CMA-ES requires (a noisy objective would break ranking).
    """
    key = (model.kind, seed, count)
    if key not in _PARAM_CACHE:
        _PARAM_CACHE[key] = sample_parameter(uncertain_dist(model), seed, count)
    return _PARAM_CACHE[key]


def batch_constraint_terms(model, params, states, param_values):
    """Vectorized pieces of the robust constraint over a state batch.

    Returns dict with phi (enforced value), grad, lf (S,K) drift Lie
    derivatives, v (S,K,m) control Lie-derivative vertices, plus phi0 and
    phi_max for reporting.  params=None evaluates the raw index phi0.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    terms = si.batch_phi_terms(params, model, states)
    grad = terms["grad"]
    if model.kind == "scara":
        f, minv = model.batch_dynamics(states, param_values)
        lf = np.einsum("si,ski->sk", grad, f)
        v = np.einsum("si,skij->skj", grad[:, 2:4], minv)
    else:
        f, glow = model.batch_dynamics(states, param_values)
        lf = np.einsum("si,ski->sk", grad, f)
        v = np.einsum("si,ski->sk", grad[:, 2:4], glow)[:, :, None]
    terms["lf"] = lf
    terms["v"] = v
    return terms


def _hull_contains_origin_2d(v: np.ndarray) -> np.ndarray:
    """Vectorized origin-in-hull test for (S,K,2) vertex batches.

    The origin is outside the hull exactly when all vertex directions fit
    in an open half-plane (largest angular gap > pi).  Near-zero vertices
    count as containing the origin.
    """
    norms = np.linalg.norm(v, axis=2)
    has_zero = np.any(norms <= _ZERO_VERTEX_TOL, axis=1)
    ang = np.sort(np.arctan2(v[:, :, 1], v[:, :, 0]), axis=1)
    gaps = np.diff(ang, axis=1)
    wrap = ang[:, 0] + 2.0 * math.pi - ang[:, -1]
    max_gap = np.maximum(np.max(gaps, axis=1, initial=-np.inf), wrap)
    return has_zero | (max_gap <= math.pi + 1e-9)


def _box_gauge(w: np.ndarray, lower, upper) -> np.ndarray:
    """h_U(-w) = sum_j max(-lower_j w_j, -upper_j w_j) along the last axis."""
    return np.sum(np.maximum(-lower * w, -upper * w), axis=-1)


def _min_gauge_segments_2d(v: np.ndarray, lower, upper) -> np.ndarray:
    """min over hull(v[s]) of the box gauge, for hulls avoiding the origin.

    The gauge is a norm-like convex function vanishing only at 0, so its
    minimum over a hull not containing 0 lies on the boundary, covered by
    all pairwise vertex segments; on a segment the gauge is piecewise
    linear with kinks only where a coordinate crosses zero.
    """
    s, k, _ = v.shape
    best = np.min(_box_gauge(v, lower, upper), axis=1)
    if k == 1:
        return best
    ii, jj = np.triu_indices(k, k=1)
    p = v[:, ii, :]
    d = v[:, jj, :] - p
    for axis in (0, 1):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -p[:, :, axis] / d[:, :, axis]
        ok = np.isfinite(t) & (t > 0.0) & (t < 1.0)
        if not np.any(ok):
            continue
        pts = p + t[:, :, None] * d
        g = _box_gauge(pts, lower, upper)
        g = np.where(ok, g, np.inf)
        best = np.minimum(best, np.min(g, axis=1))
    return best


def feasible_mask(model, params, states, eps, *, kind="polytope",
                  param_values=None, seed=0, sample_count=DEFAULT_SAMPLE_COUNT,
                  d_res=0.0, confidence=0.95, bound_builder=None,
                  chunk=1024) -> np.ndarray:
    """Margin-eps robust feasibility of each state, vectorized.

    kind "polytope" and "constant" run fully batched; other kinds (or an
    explicit bound_builder callable) fall back to per-state solves.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if bound_builder is not None or kind not in ("polytope", "constant"):
        out = np.zeros(states.shape[0], dtype=bool)
        for i, x in enumerate(states):
            bound = (bound_builder(x) if bound_builder is not None else
                     build_bound(model, x, kind=kind, param_values=param_values,
                                 seed=seed, sample_count=sample_count,
                                 confidence=confidence, d_res=d_res))
            out[i] = is_feasible(model, params, x, bound, eps=eps)
        return out

    if param_values is None:
        param_values = _shared_param_values(model, seed, sample_count)
    lower, upper = model.control_lower, model.control_upper
    slope = 1.0 if params is None else params.gamma_slope
    out = np.zeros(states.shape[0], dtype=bool)
    for start in range(0, states.shape[0], chunk):
        block = states[start:start + chunk]
        terms = batch_constraint_terms(model, params, block, param_values)
        lf, v = terms["lf"], terms["v"]
        if kind == "constant":
            lf = np.mean(lf, axis=1, keepdims=True)
            v = np.mean(v, axis=1, keepdims=True)
        extra = d_res if kind == "constant" else 0.0
        t = -slope * terms["value"] - np.max(lf, axis=1) - extra - eps
        feas = t >= 0.0
        rest = np.flatnonzero(~feas)
        if rest.size:
            vr = v[rest]
            if vr.shape[2] == 1:
                vmin, vmax = np.min(vr[:, :, 0], axis=1), np.max(vr[:, :, 0], axis=1)
                in_hull = (vmin <= _ZERO_VERTEX_TOL) & (vmax >= -_ZERO_VERTEX_TOL)
            else:
                in_hull = _hull_contains_origin_2d(vr)
            hard = rest[~in_hull]
            if hard.size:
                vh = v[hard]
                if vh.shape[2] == 1:
                    # Interval hull with one sign: gauge is linear, so the
                    # minimum sits at a vertex.
                    gauge = np.min(_box_gauge(vh, lower, upper), axis=1)
                else:
                    gauge = _min_gauge_segments_2d(vh, lower, upper)
                feas[hard] = gauge >= -t[hard]
        out[start:start + chunk] = feas
    return out


def feasible_rate(model, params, states, eps, **kw) -> float:
    """Fraction of states admitting a robust safe control with margin eps."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] == 0:
        raise ValueError("state grid is empty")
    return float(np.mean(feasible_mask(model, params, states, eps, **kw)))


def estimate_lipschitz(model, params, probes: int, rng_seed: int,
                       safety_factor: float = 1.5,
                       region: tuple | None = None,
                       sample_count: int = DEFAULT_SAMPLE_COUNT) -> dict:
    """Empirical Lipschitz/magnitude constants from random state pairs.

    Difference quotients of phi, grad phi, and the per-sample dynamics are
    maximized over `probes` random pairs (matched parameter draws bound the
    one-sided set distance from above), then inflated by safety_factor.
    k_gamma is the exact decay-rate slope.  Estimates on the full state box
    are often enormous for alpha < 1 (the gradient is unbounded near the
    distance-zero surface); pass `region = (lower, upper)` to certify a
    sub-box where the constants are moderate.
    """
    if probes < 100:
        raise ValueError("probes must be >= 100")
    rng = np.random.default_rng(rng_seed)
    lower, upper = model.state_lower, model.state_upper
    if region is not None:
        lower, upper = (np.asarray(region[0], dtype=float),
                        np.asarray(region[1], dtype=float))
    xs = rng.uniform(lower, upper, size=(probes, lower.size))
    ys = rng.uniform(lower, upper, size=(probes, lower.size))
    dist = np.linalg.norm(xs - ys, axis=1)
    keep = dist > 1e-9
    xs, ys, dist = xs[keep], ys[keep], dist[keep]
    param_values = sample_parameter(uncertain_dist(model), rng_seed, sample_count)

    tx = batch_constraint_terms(model, params, xs, param_values)
    ty = batch_constraint_terms(model, params, ys, param_values)
    k_phi = np.max(np.abs(tx["value"] - ty["value"]) / dist)
    k_grad = np.max(np.linalg.norm(tx["grad"] - ty["grad"], axis=1) / dist)

    fx, gx = model.batch_dynamics(xs, param_values)
    fy, gy = model.batch_dynamics(ys, param_values)
    k_sf = np.max(np.linalg.norm(fx - fy, axis=2) / dist[:, None])
    gxf = gx.reshape(gx.shape[0], gx.shape[1], -1)
    gyf = gy.reshape(gy.shape[0], gy.shape[1], -1)
    k_sg = np.max(np.linalg.norm(gxf - gyf, axis=2) / dist[:, None])

    grid_states = np.vstack([xs, ys])
    m_u, m_xdot = derive_magnitude_caps(model, grid_states, param_values)
    return {
        "k_gamma": (params.gamma_slope if params is not None else 1.0),
        "k_phi": float(k_phi) * safety_factor,
        "k_grad_phi": float(k_grad) * safety_factor,
        "k_sigma_f": float(k_sf) * safety_factor,
        "k_sigma_g": float(k_sg) * safety_factor,
        "m_u": m_u,
        "m_xdot": m_xdot,
        "safety_factor": safety_factor,
    }


# ---------------------------------------------------------------------------
# CMA-ES (minimal rank-1 + rank-mu implementation, maximization).

def cma_es_maximize(objective, dim, population, sigma0, max_generations, seed,
                    target=None):
    """Box-free CMA-ES on [0,1]^dim with resample-then-clip candidates.

    Returns (best_x, best_value, history) where history[i] is the best-ever
    value after generation i (generation 0 evaluates the initial mean, so
    an already-optimal start returns immediately).
    """
    rng = np.random.default_rng(seed)
    lam = population
    mu = lam // 2
    raw = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights = raw / np.sum(raw)
    mu_eff = 1.0 / np.sum(weights**2)
    c_sigma = (mu_eff + 2.0) / (dim + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (dim + 1.0)) - 1.0) + c_sigma
    c_c = (4.0 + mu_eff / dim) / (dim + 4.0 + 2.0 * mu_eff / dim)
    c_1 = 2.0 / ((dim + 1.3) ** 2 + mu_eff)
    c_mu = min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((dim + 2.0) ** 2 + mu_eff))
    chi_n = math.sqrt(dim) * (1.0 - 1.0 / (4.0 * dim) + 1.0 / (21.0 * dim**2))

    mean = np.full(dim, 0.5)
    sigma = sigma0
    cov = np.eye(dim)
    p_sigma = np.zeros(dim)
    p_c = np.zeros(dim)

    best_x = mean.copy()
    best_val = objective(mean)
    history = [best_val]
    if target is not None and best_val >= target:
        return best_x, best_val, history

    for gen in range(1, max_generations + 1):
        vals, vecs = np.linalg.eigh(cov)
        vals = np.maximum(vals, 1e-20)
        sqrt_c = vecs @ np.diag(np.sqrt(vals)) @ vecs.T
        inv_sqrt_c = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T

        ys = np.empty((lam, dim))
        xs = np.empty((lam, dim))
        for k in range(lam):
            for _ in range(100):
                y = sqrt_c @ rng.standard_normal(dim)
                x = mean + sigma * y
                if np.all(x >= 0.0) and np.all(x <= 1.0):
                    break
            else:
                x = np.clip(x, 0.0, 1.0)
                y = (x - mean) / sigma
            ys[k], xs[k] = y, x
        scores = np.array([objective(x) for x in xs])
        order = np.argsort(-scores, kind="stable")
        if scores[order[0]] > best_val:
            best_val = float(scores[order[0]])
            best_x = xs[order[0]].copy()
        history.append(best_val)
        if target is not None and best_val >= target:
            break

        y_sel = ys[order[:mu]]
        y_w = weights @ y_sel
        mean = mean + sigma * y_w
        p_sigma = ((1.0 - c_sigma) * p_sigma
                   + math.sqrt(c_sigma * (2.0 - c_sigma) * mu_eff) * (inv_sqrt_c @ y_w))
        h_sig = (np.linalg.norm(p_sigma)
                 / math.sqrt(1.0 - (1.0 - c_sigma) ** (2.0 * gen))
                 < (1.4 + 2.0 / (dim + 1.0)) * chi_n)
        p_c = ((1.0 - c_c) * p_c
               + (math.sqrt(c_c * (2.0 - c_c) * mu_eff) * y_w if h_sig else 0.0))
        rank_mu = sum(w * np.outer(y, y) for w, y in zip(weights, y_sel))
        cov = ((1.0 - c_1 - c_mu) * cov
               + c_1 * (np.outer(p_c, p_c) + (0.0 if h_sig else c_c * (2.0 - c_c)) * cov)
               + c_mu * rank_mu)
        cov = 0.5 * (cov + cov.T)
        sigma = sigma * math.exp((c_sigma / d_sigma)
                                 * (np.linalg.norm(p_sigma) / chi_n - 1.0))
    return best_x, best_val, history


@dataclass(frozen=True)
class SynthesisResult:
    params: si.SafetyIndexParams
    rate: float
    epsilon: float
    history: tuple
    config: SynthesisConfig

    @property
    def certified(self) -> bool:
        return self.rate >= 1.0


def synthesize(model, cfg: SynthesisConfig, *, kind="polytope",
               d_res=0.0) -> SynthesisResult:
    """CMA-ES search for (alpha, k_v, beta) with feasible rate 1 on the grid."""
    states, delta = sample_state_grid(model, cfg.grid_counts)
    param_values = _shared_param_values(model, cfg.seed, cfg.sample_count)
    m_u, m_xdot = cfg.m_u, cfg.m_xdot
    if m_u is None or m_xdot is None:
        dm_u, dm_xdot = derive_magnitude_caps(model, states, param_values)
        m_u = dm_u if m_u is None else m_u
        m_xdot = dm_xdot if m_xdot is None else m_xdot
    cfg = dataclasses.replace(cfg, delta=delta, m_u=m_u, m_xdot=m_xdot)
    eps = margin_epsilon(cfg)
    lo = np.asarray(cfg.search_lower, dtype=float)
    hi = np.asarray(cfg.search_upper, dtype=float)

    def objective(z):
        theta = lo + np.asarray(z) * (hi - lo)
        params = si.SafetyIndexParams(alpha=float(theta[0]), k_v=float(theta[1]),
                                      beta=float(theta[2]),
                                      gamma_slope=cfg.k_gamma)
        return feasible_rate(model, params, states, eps, kind=kind,
                             param_values=param_values, d_res=d_res)

    z_best, rate, history = cma_es_maximize(
        objective, dim=lo.size, population=cfg.population, sigma0=cfg.sigma0,
        max_generations=cfg.max_generations, seed=cfg.seed, target=1.0)
    theta = lo + z_best * (hi - lo)
    params = si.SafetyIndexParams(alpha=float(theta[0]), k_v=float(theta[1]),
                                  beta=float(theta[2]), gamma_slope=cfg.k_gamma)
    return SynthesisResult(params=params, rate=float(rate), epsilon=float(eps),
                           history=tuple(float(h) for h in history), config=cfg)


def format_report(result: SynthesisResult) -> str:
    """Structured-text synthesis report (best theta, margin, rate history)."""
    cfg = result.config
    lines = [
        f"alpha={result.params.alpha!r}",
        f"k_v={result.params.k_v!r}",
        f"beta={result.params.beta!r}",
        f"gamma_slope={result.params.gamma_slope!r}",
        f"rate={result.rate!r}",
        f"epsilon={result.epsilon!r}",
        f"certified={str(result.certified).lower()}",
        f"delta={cfg.delta!r}",
        f"grid={','.join(str(c) for c in cfg.grid_counts)}",
        f"k_gamma={cfg.k_gamma!r}",
        f"k_phi={cfg.k_phi!r}",
        f"k_grad_phi={cfg.k_grad_phi!r}",
        f"k_sigma_f={cfg.k_sigma_f!r}",
        f"k_sigma_g={cfg.k_sigma_g!r}",
        f"m_u={cfg.m_u!r}",
        f"m_xdot={cfg.m_xdot!r}",
        f"population={cfg.population}",
        f"seed={cfg.seed}",
        "history=" + ",".join(repr(h) for h in result.history),
    ]
    return "\n".join(lines) + "\n"
