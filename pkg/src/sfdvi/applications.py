"""Worked models: spatial price markets and multi-agent games.

Both reduce to a coupled system (state dynamics plus a pointwise VI) that
the path integrator consumes directly. The market model tracks supply and
demand prices driven by traded flows; at equilibrium a used route's supply
price plus transport cost matches the demand price, and no route is
strictly profitable. The game model stacks per-agent cost gradients into
one mapping whose VI solutions are exactly the Nash points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .engine import CoefficientSet, JumpMeasure, TimeGrid
from .sets import Box, ConvexSet, NonnegOrthant, Product, TransportSet, distance
from .vi import SolverConfig, VIProblem, optimal_rho, vi_residual

_EPS = 1e-12


@dataclass(frozen=True)
class CoupledSystem:
    """Everything the integrator needs: coefficients, VI, noise, start."""

    coeffs: CoefficientSet
    vi: VIProblem
    jumps: JumpMeasure
    p0: np.ndarray
    grid: TimeGrid | None = None


def _sym_min_eig(mat):
    return float(np.linalg.eigvalsh(0.5 * (mat + mat.T)).min())


# ---------------------------------------------------------------------------
# Spatial price markets


@dataclass(frozen=True)
class SpatialMarketSpec:
    """A single-commodity market with m supply and n demand nodes.

    Transport costs are affine per route, cost_ij(a) = gamma_ij*a + c0_ij
    with positive slopes, which keeps the flow mapping strongly monotone.
    Price dynamics are mean-reverting with flow feedback: supply prices
    fall when more is shipped out, demand prices rise when more arrives.
    Jumps act multiplicatively on prices through their marks.

    ``reduced=True`` (default) eliminates the row/column-sum coordinates
    through the balance equalities and solves the VI in flow coordinates
    over the nonnegative orthant; ``reduced=False`` keeps the stacked
    (supply, demand, flow) control on the transportation polytope.
    """

    m: int
    n: int
    gamma: np.ndarray
    c0: np.ndarray
    kappa_supply: np.ndarray
    pbar: np.ndarray
    eta_supply: np.ndarray
    kappa_demand: np.ndarray
    qbar: np.ndarray
    eta_demand: np.ndarray
    s1_supply: np.ndarray
    s1_demand: np.ndarray
    f_supply: np.ndarray
    f_demand: np.ndarray
    jumps: JumpMeasure
    p0: np.ndarray
    q0: np.ndarray
    reduced: bool = True
    flow_cap: float | None = None

    def __post_init__(self):
        for name in ("gamma", "c0"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (self.m, self.n)).copy()
            object.__setattr__(self, name, arr)
        for name, size in (
            ("kappa_supply", self.m), ("pbar", self.m), ("eta_supply", self.m),
            ("kappa_demand", self.n), ("qbar", self.n), ("eta_demand", self.n),
            ("s1_supply", self.m), ("s1_demand", self.n),
            ("f_supply", self.m), ("f_demand", self.n),
            ("p0", self.m), ("q0", self.n),
        ):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (size,)).copy()
            object.__setattr__(self, name, arr)
        if self.m < 1 or self.n < 1:
            raise ValueError("need at least one market on each side")
        if np.any(self.gamma <= 0.0):
            raise ValueError("transport cost slopes must be positive")
        if np.any(self.c0 < 0.0):
            raise ValueError("transport base costs must be nonnegative")

    def cost(self, a):
        """Per-route transport cost of flows a of shape (..., m, n)."""
        return self.gamma * a + self.c0

    @property
    def state_dim(self):
        return self.m + self.n

    @property
    def control_dim(self):
        return self.m * self.n if self.reduced else self.m + self.n + self.m * self.n


def _spep_route_matrix(m, n):
    """Rows map (supply price, demand price) to the route margin p_i - q_j."""
    R = np.zeros((m * n, m + n))
    for i in range(m):
        for j in range(n):
            R[i * n + j, i] = 1.0
            R[i * n + j, m + j] = -1.0
    return R


def build_spep(spec):
    """Assemble the market into a coupled system for the integrator."""
    m, n = spec.m, spec.n
    p_dim = spec.state_dim
    R = _spep_route_matrix(m, n)

    def flows(u):
        u = np.asarray(u, dtype=float)
        if spec.reduced:
            return u.reshape(u.shape[:-1] + (m, n))
        return u[..., m + n:].reshape(u.shape[:-1] + (m, n))

    def sums(u):
        a = flows(u)
        return a.sum(axis=-1), a.sum(axis=-2)

    def b(t, y, u):
        p, q = y[..., :m], y[..., m:]
        S, D = sums(u)
        bp = spec.kappa_supply * (spec.pbar - p) - spec.eta_supply * S
        bq = spec.kappa_demand * (spec.qbar - q) + spec.eta_demand * D
        return np.concatenate([bp, bq], axis=-1)

    def sigma1(t, y, u):
        y = np.asarray(y, dtype=float)
        base = np.concatenate([spec.s1_supply, spec.s1_demand])
        return np.broadcast_to(base, y.shape).copy()

    diag = np.concatenate([spec.f_supply, spec.f_demand])
    sig_mat = np.diag(diag)

    def sigma(t, y, u):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(sig_mat, y.shape[:-1] + (p_dim, p_dim)).copy()

    def G(t, y, u, mark):
        # marks act multiplicatively on the price level
        return np.asarray(y, dtype=float) * mark

    if spec.reduced:
        cset = NonnegOrthant(m * n) if spec.flow_cap is None else Box(
            np.zeros(m * n), np.full(m * n, spec.flow_cap)
        )

        def F(t, y, u):
            a = flows(u)
            margin = np.asarray(y, dtype=float) @ R.T
            return margin + spec.cost(a).reshape(a.shape[:-2] + (m * n,))

        c_bar = float(spec.gamma.min())
        l_f = max(float(np.linalg.norm(R, 2)), float(spec.gamma.max()), c_bar)
    else:
        cset = TransportSet(m, n, cap=spec.flow_cap)

        def F(t, y, u):
            y = np.asarray(y, dtype=float)
            a = flows(u)
            cost_flat = spec.cost(a).reshape(a.shape[:-2] + (m * n,))
            return np.concatenate([y[..., :m], -y[..., m:], cost_flat], axis=-1)

        # monotonicity holds on differences inside the balance subspace,
        # where ||u||^2 <= (1 + m + n) * ||flows||^2
        Q = np.eye(m * n)
        SumR = np.zeros((m, m * n))
        SumC = np.zeros((n, m * n))
        for i in range(m):
            SumR[i, i * n:(i + 1) * n] = 1.0
        for j in range(n):
            SumC[j, j::n] = 1.0
        Q = Q + SumR.T @ SumR + SumC.T @ SumC
        L = np.linalg.cholesky(Q)
        Dg = np.diag(spec.gamma.reshape(-1))
        Mpencil = np.linalg.solve(L, np.linalg.solve(L, Dg).T).T
        c_bar = float(np.linalg.eigvalsh(0.5 * (Mpencil + Mpencil.T)).min())
        Ju = np.zeros((spec.control_dim, spec.control_dim))
        Ju[m + n:, m + n:] = Dg
        Jy = np.vstack([np.eye(m, p_dim), -np.eye(n, p_dim, k=m), np.zeros((m * n, p_dim))])
        l_f = max(float(np.linalg.norm(Jy, 2)), float(np.linalg.norm(Ju, 2)), c_bar)

    # stacked dynamics moduli assembled from the blocks
    kx = float(max(np.abs(spec.kappa_supply).max(), np.abs(spec.kappa_demand).max()))
    ku = float(max(np.abs(spec.eta_supply).max(), np.abs(spec.eta_demand).max()))
    sum_gain = math.sqrt(max(m, n)) if spec.reduced else 1.0
    mark_sq = float(np.sum(spec.jumps.weights * np.max(np.abs(spec.jumps.marks), axis=1) ** 2)) if spec.jumps.n_atoms else 0.0
    coeffs = CoefficientSet(
        b=b, sigma1=sigma1, sigma=sigma, G=G, p=p_dim, q=spec.control_dim, l=p_dim,
        K_b=max(3.0 * max(float(np.linalg.norm(spec.kappa_supply * spec.pbar) ** 2 + np.linalg.norm(spec.kappa_demand * spec.qbar) ** 2), kx**2, (ku * sum_gain) ** 2), _EPS),
        K_sigma=max(float(np.sum(diag**2)), _EPS),
        K_sigma1=max(float(np.linalg.norm(np.concatenate([spec.s1_supply, spec.s1_demand])) ** 2), _EPS),
        K_G=max(mark_sq, _EPS),
        L_b=max(2.0 * max(kx, ku * sum_gain) ** 2, _EPS),
        L_sigma=_EPS,
        L_sigma1=_EPS,
        L_G=max(mark_sq, _EPS),
    )
    vi = VIProblem(cset=cset, F_eval=F, c_bar=c_bar, l_f=l_f)
    p0 = np.concatenate([spec.p0, spec.q0])
    return CoupledSystem(coeffs=coeffs, vi=vi, jumps=spec.jumps, p0=p0)


@dataclass(frozen=True)
class SpepReport:
    """Worst equilibrium-condition violations of an integrated path."""

    eq_violation: np.ndarray
    ineq_violation: np.ndarray
    eps_budget: np.ndarray
    worst_eq: tuple
    worst_ineq: tuple
    passed: bool


def check_spep_equilibrium(sol, spec, tol=1e-8, rho=None):
    """Verify the two-branch equilibrium conditions stepwise.

    On every grid node and route (i, j): an actively used route
    (a_ij > tol) must price out exactly, |p_i + cost_ij(a_ij) - q_j| within
    the step budget, and every route must satisfy
    p_i + cost_ij(a_ij) >= q_j - budget. The budget eps_k is the VI
    natural-map residual at that node divided by the step size, plus tol.
    Report only; nothing is raised.
    """
    system = build_spep(spec)
    rho = optimal_rho(system.vi.c_bar, system.vi.l_f) if rho is None else rho
    m, n = spec.m, spec.n
    steps = sol.x.shape[0]
    p = sol.x[:, :m]
    q = sol.x[:, m:]
    if spec.reduced:
        a = sol.u.reshape(steps, m, n)
    else:
        a = sol.u[:, m + n:].reshape(steps, m, n)
    margin = p[:, :, None] + spec.cost(a) - q[:, None, :]

    eps = np.empty(steps)
    for k in range(steps):
        r_k = vi_residual(system.vi, sol.u[k], rho, float(k), sol.x[k])
        eps[k] = r_k / rho + tol

    active = a > tol
    eq_grid = np.where(active, np.abs(margin), 0.0)
    ineq_grid = np.maximum(-margin, 0.0)
    eq_v = eq_grid.reshape(steps, -1).max(axis=1)
    ineq_v = ineq_grid.reshape(steps, -1).max(axis=1)

    def locate(grid_vals, step_vals):
        k = int(step_vals.argmax())
        ij = int(grid_vals[k].argmax())
        return float(step_vals[k]), k, ij // n, ij % n

    worst_eq = locate(eq_grid, eq_v)
    worst_ineq = locate(ineq_grid, ineq_v)
    passed = bool(np.all(eq_v <= eps) and np.all(ineq_v <= eps))
    return SpepReport(
        eq_violation=eq_v,
        ineq_violation=ineq_v,
        eps_budget=eps,
        worst_eq=worst_eq,
        worst_ineq=worst_ineq,
        passed=passed,
    )


# ---------------------------------------------------------------------------
# Multi-agent games


class MonotonicityError(ValueError):
    """Stacked gradient failed the empirical monotonicity screen."""

    def __init__(self, message, pair):
        super().__init__(message)
        self.pair = pair


@dataclass(frozen=True)
class GameSpec:
    """P agents with scalar strategies, quadratic costs and linear coupling.

    Agent i pays weight_i/2 * (u_i - target_i)^2 + u_i * sum_j K_ij u_j
    (zero diagonal coupling), so its cost gradient in its own strategy is
    weight_i*(u_i - target_i) + (K u)_i. Each state follows mean-reverting
    dynamics driven by the agent's own strategy.
    """

    targets: np.ndarray
    weights: np.ndarray
    coupling: np.ndarray
    boxes: np.ndarray
    kappa: np.ndarray
    xbar: np.ndarray
    drive: np.ndarray
    s1: np.ndarray
    f: np.ndarray
    jumps: JumpMeasure
    p0: np.ndarray

    def __post_init__(self):
        P = np.atleast_1d(np.asarray(self.targets, dtype=float)).size
        for name, shape in (
            ("targets", (P,)), ("weights", (P,)), ("kappa", (P,)), ("xbar", (P,)),
            ("drive", (P,)), ("s1", (P,)), ("f", (P,)), ("p0", (P,)),
        ):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), shape).copy()
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "coupling", _as_coupling(self.coupling, P))
        boxes = np.asarray(self.boxes, dtype=float)
        if boxes.shape != (P, 2):
            raise ValueError(f"boxes must have shape ({P}, 2)")
        object.__setattr__(self, "boxes", boxes)
        if np.any(self.weights <= 0.0):
            raise ValueError("cost weights must be positive")

    @property
    def n_agents(self):
        return self.targets.size

    def grad(self, i, x, u):
        """Gradient of agent i's cost in its own strategy."""
        u = np.asarray(u, dtype=float)
        return self.weights[i] * (u[..., i] - self.targets[i]) + u @ self.coupling[i]

    def stacked_grad(self, x, u):
        u = np.asarray(u, dtype=float)
        return self.weights * (u - self.targets) + u @ self.coupling.T


def _as_coupling(value, P):
    if value is None:
        return np.zeros((P, P))
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * (np.ones((P, P)) - np.eye(P))
    if arr.shape != (P, P):
        raise ValueError(f"coupling must have shape ({P}, {P})")
    if np.any(np.diag(arr) != 0.0):
        raise ValueError("coupling matrix must have zero diagonal")
    return arr


def build_game(spec, screen_samples=256, screen_seed=0):
    """Stack the per-agent gradients and dynamics into a coupled system.

    Runs an empirical monotonicity screen on the stacked gradient (and a
    convexity spot-check along own-strategy lines) before trusting the
    closed-form moduli; a failing screen raises with the offending pair.
    """
    P = spec.n_agents
    A = np.diag(spec.weights) + spec.coupling
    c_bar = _sym_min_eig(A)
    if c_bar <= 0.0:
        raise MonotonicityError("stacked gradient is not strongly monotone", pair=None)
    l_f = max(float(np.linalg.norm(A, 2)), c_bar)

    rng = np.random.default_rng(screen_seed)
    lo, hi = spec.boxes[:, 0], spec.boxes[:, 1]
    span = np.where(np.isfinite(hi - lo), hi - lo, 2.0)
    u1 = lo + rng.random((screen_samples, P)) * span
    u2 = lo + rng.random((screen_samples, P)) * span
    du = u1 - u2
    norms = np.einsum("ij,ij->i", du, du)
    ok = norms > 1e-16
    dF = spec.stacked_grad(None, u1) - spec.stacked_grad(None, u2)
    quot = np.einsum("ij,ij->i", dF, du)[ok] / norms[ok]
    if quot.size and quot.min() <= 0.0:
        bad = int(np.flatnonzero(ok)[quot.argmin()])
        raise MonotonicityError(
            f"empirical monotonicity screen failed (quotient {quot.min():.3e})",
            pair=(u1[bad], u2[bad]),
        )
    for i in range(P):  # convexity along own-strategy lines
        base = lo + rng.random(P) * span
        for _ in range(8):
            va, vb = sorted(rng.uniform(lo[i], lo[i] + span[i], size=2))
            ua, ub = base.copy(), base.copy()
            ua[i], ub[i] = va, vb
            if (spec.grad(i, None, ub) - spec.grad(i, None, ua)) * (vb - va) < -1e-9:
                raise MonotonicityError(f"agent {i} cost is not convex along its strategy", pair=(ua, ub))

    def F(t, x, u):
        return spec.stacked_grad(x, u)

    def b(t, x, u):
        return spec.kappa * (spec.xbar - np.asarray(x, dtype=float)) + spec.drive * np.asarray(u, dtype=float)

    def sigma1(t, x, u):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(spec.s1, x.shape).copy()

    sig_mat = np.diag(spec.f)

    def sigma(t, x, u):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(sig_mat, x.shape[:-1] + (P, P)).copy()

    def G(t, x, u, mark):
        return np.asarray(x, dtype=float) * mark

    mark_sq = float(np.sum(spec.jumps.weights * np.max(np.abs(spec.jumps.marks), axis=1) ** 2)) if spec.jumps.n_atoms else 0.0
    kx = float(np.abs(spec.kappa).max())
    ku = float(np.abs(spec.drive).max())
    coeffs = CoefficientSet(
        b=b, sigma1=sigma1, sigma=sigma, G=G, p=P, q=P, l=P,
        K_b=max(3.0 * max(float(np.linalg.norm(spec.kappa * spec.xbar) ** 2), kx**2, ku**2), _EPS),
        K_sigma=max(float(np.sum(spec.f**2)), _EPS),
        K_sigma1=max(float(spec.s1 @ spec.s1), _EPS),
        K_G=max(mark_sq, _EPS),
        L_b=max(2.0 * max(kx, ku) ** 2, _EPS),
        L_sigma=_EPS,
        L_sigma1=_EPS,
        L_G=max(mark_sq, _EPS),
    )
    cset = Product([Box(np.array([l_]), np.array([h_])) for l_, h_ in spec.boxes])
    vi = VIProblem(cset=cset, F_eval=F, c_bar=c_bar, l_f=l_f)
    return CoupledSystem(coeffs=coeffs, vi=vi, jumps=spec.jumps, p0=spec.p0)


@dataclass(frozen=True)
class NashReport:
    """Worst first-order deviation test per agent over an integrated path."""

    worst: np.ndarray
    locations: list
    tol: float

    @property
    def certified(self):
        return bool(np.all(self.worst >= -self.tol))

    def flagged_agents(self):
        return [int(i) for i in np.flatnonzero(self.worst < -self.tol)]


def verify_nash(sol, spec, deviations, tol=1e-8):
    """First-order Nash certificate: no sampled unilateral deviation helps.

    For each agent i and grid node k the test checks
    grad_i(x_k, u_k) * (v - u_k^i) >= -tol over ``deviations`` points v
    spanning the strategy interval (endpoints included; the expression is
    linear in v, so interval endpoints are the exact worst case).
    """
    if deviations < 1:
        raise ValueError("need at least one deviation point")
    P = spec.n_agents
    steps = sol.u.shape[0]
    worst = np.full(P, np.inf)
    locations = [None] * P
    for i in range(P):
        lo, hi = spec.boxes[i]
        vs = np.linspace(lo, hi, deviations) if deviations > 1 else np.array([lo])
        g = spec.weights[i] * (sol.u[:, i] - spec.targets[i]) + sol.u @ spec.coupling[i]
        gaps = g[:, None] * (vs[None, :] - sol.u[:, i][:, None])
        k, s = np.unravel_index(int(gaps.argmin()), gaps.shape)
        worst[i] = float(gaps[k, s])
        locations[i] = (int(k), float(vs[s]))
    return NashReport(worst=worst, locations=locations, tol=tol)


def complementarity_check(u, F_val, cone, tol=None):
    """Residual triple of the conic complementarity conditions.

    primal_res is the distance of u to the cone, dual_res the worst
    normalized violation of <g, F> >= 0 over the cone generators (the
    generator test of dual-cone membership for the polyhedral catalog
    cones), orth_res the absolute pairing |<u, F>|. All three vanish at an
    exact complementarity solution.
    """
    if not cone.is_cone:
        raise ValueError("complementarity requires a cone from the catalog")
    u = np.asarray(u, dtype=float)
    F_val = np.asarray(F_val, dtype=float)
    primal = distance(cone, u)
    gens = cone.cone_generators()
    scales = np.linalg.norm(gens, axis=1)
    dual = float(np.maximum(-(gens @ F_val) / scales, 0.0).max()) if gens.size else 0.0
    orth = float(abs(u @ F_val))
    return primal, dual, orth
